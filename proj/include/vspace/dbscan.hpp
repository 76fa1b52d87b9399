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

#include <cstddef>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "vspace/matrix.hpp"

namespace vspace {

struct DbscanConfig {
  double eps = 0.0;  // <= 0: default_eps of the data
  int min_pts = 8;   // neighborhood size including the point itself

  void validate() const;

  friend bool operator==(const DbscanConfig&, const DbscanConfig&) = default;
};

void to_json(nlohmann::json& j, const DbscanConfig& c);
void from_json(const nlohmann::json& j, DbscanConfig& c);

struct ClusterLabels {
  std::vector<int> label;  // -1 noise, otherwise 0..cluster_count-1 in discovery order
  std::vector<bool> core;
  int cluster_count = 0;
  double eps = 0.0;  // radius actually used

  std::size_t noise_count() const;
};

/// Indices j with |p_i - p_j| <= eps, ascending, i included.
std::vector<std::size_t> region_query(const Matrix& points, std::size_t i, double eps);

/// Distance from each point to its k-th nearest other point (k clamped to
/// N - 1).
std::vector<double> knn_distances(const Matrix& points, std::size_t k);

/// 90th percentile (linear interpolation) of the 4-NN distances. A zero
/// percentile becomes the smallest positive double so that coincident points
/// still neighbor each other; a single point yields 1.
double default_eps(const Matrix& points);

/// Classical DBSCAN over [N, 2] points. Clusters are grown from core points
/// taken in ascending index order; a border point joins the first cluster
/// that reaches it.
ClusterLabels dbscan(const Matrix& points, const DbscanConfig& config);

struct ClusteredPoints {
  std::vector<std::size_t> ids;
  Matrix coords;  // [N, 2]
  std::vector<int> cluster;
};

void write_clustered_csv(const std::filesystem::path& path, const ClusteredPoints& c);
ClusteredPoints read_clustered_csv(const std::filesystem::path& path);

}  // namespace vspace
