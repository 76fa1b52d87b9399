// Copyright 2026 The vesselspace Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "vspace/csv.hpp"

#include <charconv>
#include <fstream>

#include <fmt/format.h>

#include "vspace/errors.hpp"

namespace vspace::csv {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string::size_type start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string format_real(double v) {
  if (v == 0.0) return "0";  // avoid "-0"
  return fmt::format("{:.9g}", v);
}

Table read(const std::filesystem::path& path,
           const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));

  Table table;
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(fmt::format("{}: empty file, expected a CSV header", path.string()));
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.header = split(line, ',');
  if (!expected_header.empty() && table.header != expected_header) {
    throw DataError(fmt::format("{}: unexpected header '{}', expected '{}'",
                                path.string(), line,
                                fmt::join(expected_header, ",")));
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != table.header.size()) {
      throw DataError(fmt::format("{}:{}: {} fields, header has {}", path.string(),
                                  line_no, fields.size(), table.header.size()));
    }
    std::vector<double> row(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto& f = fields[i];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), row[i]);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw DataError(fmt::format("{}:{}: cannot parse '{}' as a number",
                                    path.string(), line_no, f));
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace vspace::csv
