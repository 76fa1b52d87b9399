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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace vspace::csv {

/// Numeric CSV table with a header line.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// Reads a fully numeric CSV. Throws DataError naming the file when it is
/// missing, when a field fails to parse, or when row widths disagree with
/// the header. If `expected_header` is non-empty the header must match it.
Table read(const std::filesystem::path& path,
           const std::vector<std::string>& expected_header = {});

/// Real formatting shared by the artifact files: 9 significant digits.
std::string format_real(double v);

std::vector<std::string> split(const std::string& line, char sep);

}  // namespace vspace::csv
