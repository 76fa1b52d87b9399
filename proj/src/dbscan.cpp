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

#include "vspace/dbscan.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "vspace/csv.hpp"
#include "vspace/errors.hpp"

namespace vspace {

void DbscanConfig::validate() const {
  if (!std::isfinite(eps)) throw ConfigError("dbscan: eps must be finite");
  if (min_pts < 1) throw ConfigError(fmt::format("dbscan: min_pts must be >= 1, got {}", min_pts));
}

void to_json(nlohmann::json& j, const DbscanConfig& c) { j = {{"eps", c.eps}, {"min_pts", c.min_pts}}; }

void from_json(const nlohmann::json& j, DbscanConfig& c) {
  j.at("eps").get_to(c.eps);
  j.at("min_pts").get_to(c.min_pts);
}

std::size_t ClusterLabels::noise_count() const {
  return static_cast<std::size_t>(std::count(label.begin(), label.end(), -1));
}

namespace {

void require_2d(const Matrix& points) {
  if (points.cols != 2) throw DimensionError(fmt::format("dbscan expects [N, 2] points, got [{}, {}]", points.rows, points.cols));
}

double dist(const Matrix& p, std::size_t i, std::size_t j) {
  return std::hypot(p(i, 0) - p(j, 0), p(i, 1) - p(j, 1));
}

}  // namespace

std::vector<std::size_t> region_query(const Matrix& points, std::size_t i, double eps) {
  require_2d(points);
  if (i >= points.rows) throw DimensionError(fmt::format("region_query: index {} out of range", i));
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < points.rows; ++j) {
    if (j == i || dist(points, i, j) <= eps) out.push_back(j);
  }
  return out;
}

std::vector<double> knn_distances(const Matrix& points, std::size_t k) {
  require_2d(points);
  const std::size_t n = points.rows;
  std::vector<double> out(n, 0.0);
  if (n < 2 || k == 0) return out;
  k = std::min(k, n - 1);
#pragma omp parallel for schedule(dynamic, 32)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    std::vector<double> d;
    d.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d.push_back(dist(points, i, j));
    }
    std::nth_element(d.begin(), d.begin() + static_cast<long>(k - 1), d.end());
    out[i] = d[k - 1];
  }
  return out;
}

double default_eps(const Matrix& points) {
  if (points.rows < 2) return 1.0;
  auto d = knn_distances(points, 4);
  std::sort(d.begin(), d.end());
  const double pos = 0.9 * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  const double eps = d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
  return eps > 0.0 ? eps : std::numeric_limits<double>::min();
}

ClusterLabels dbscan(const Matrix& points, const DbscanConfig& config) {
  config.validate();
  require_2d(points);
  const std::size_t n = points.rows;
  for (double v : points.data) {
    if (!std::isfinite(v)) throw DataError("dbscan: non-finite coordinates");
  }
  ClusterLabels out;
  out.eps = config.eps > 0.0 ? config.eps : default_eps(points);
  out.label.assign(n, -1);
  out.core.assign(n, false);

  std::vector<std::vector<std::size_t>> neighbors(n);
#pragma omp parallel for schedule(dynamic, 32)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    neighbors[i] = region_query(points, i, out.eps);
  }
  for (std::size_t i = 0; i < n; ++i) out.core[i] = neighbors[i].size() >= static_cast<std::size_t>(config.min_pts);

  std::deque<std::size_t> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!out.core[seed] || out.label[seed] != -1) continue;
    const int c = out.cluster_count++;
    out.label[seed] = c;
    frontier.push_back(seed);
    while (!frontier.empty()) {
      const std::size_t q = frontier.front();
      frontier.pop_front();
      for (std::size_t r : neighbors[q]) {
        if (out.label[r] != -1) continue;
        out.label[r] = c;
        if (out.core[r]) frontier.push_back(r);
      }
    }
  }
  return out;
}

void write_clustered_csv(const std::filesystem::path& path, const ClusteredPoints& c) {
  if (c.ids.size() != c.coords.rows || c.cluster.size() != c.ids.size() || c.coords.cols != 2) {
    throw DimensionError("write_clustered_csv: column lengths disagree");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "id,x,y,cluster\n";
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    out << c.ids[i] << ',' << csv::format_real(c.coords(i, 0)) << ',' << csv::format_real(c.coords(i, 1))
        << ',' << c.cluster[i] << '\n';
  }
}

ClusteredPoints read_clustered_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"id", "x", "y", "cluster"});
  ClusteredPoints c;
  c.coords = Matrix(t.rows.size(), 2);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (row[0] < 0 || row[0] != std::floor(row[0]) || row[3] < -1 || row[3] != std::floor(row[3])) {
      throw DataError(fmt::format("{}: bad id or cluster in row {}", path.string(), i));
    }
    c.ids.push_back(static_cast<std::size_t>(row[0]));
    c.coords(i, 0) = row[1];
    c.coords(i, 1) = row[2];
    c.cluster.push_back(static_cast<int>(row[3]));
  }
  return c;
}

}  // namespace vspace
