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

#include "vspace/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "vspace/errors.hpp"

namespace vspace {

namespace {

std::vector<double> sq_dists_from(const Matrix& x, std::size_t i) {
  std::vector<double> d(x.rows, 0.0);
  for (std::size_t j = 0; j < x.rows; ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double diff = x(i, c) - x(j, c);
      s += diff * diff;
    }
    d[j] = s;
  }
  return d;
}

// Other rows ordered by distance from i, ties by index.
std::vector<std::size_t> order_from(const Matrix& x, std::size_t i) {
  const auto d = sq_dists_from(x, i);
  std::vector<std::size_t> order;
  order.reserve(x.rows - 1);
  for (std::size_t j = 0; j < x.rows; ++j) {
    if (j != i) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  return order;
}

}  // namespace

std::vector<std::size_t> nearest_neighbors(const Matrix& x, std::size_t i, std::size_t k) {
  if (i >= x.rows) throw DimensionError(fmt::format("nearest_neighbors: row {} out of range", i));
  if (k >= x.rows) throw DomainError(fmt::format("nearest_neighbors: k = {} needs more than {} rows", k, x.rows));
  auto order = order_from(x, i);
  order.resize(k);
  return order;
}

double trustworthiness(const Matrix& high, const Matrix& low, std::size_t k) {
  const std::size_t n = high.rows;
  if (low.rows != n) throw DimensionError(fmt::format("trustworthiness: {} vs {} rows", n, low.rows));
  if (k < 1 || 2 * k >= n) throw DomainError(fmt::format("trustworthiness: k = {} must satisfy 1 <= k < N/2 = {}", k, n / 2.0));

  std::vector<double> penalty(n, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    const auto high_order = order_from(high, i);
    std::vector<std::size_t> rank(n, 0);  // 1-based high-dimensional rank
    for (std::size_t r = 0; r < high_order.size(); ++r) rank[high_order[r]] = r + 1;
    const auto low_order = order_from(low, i);
    double s = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t r = rank[low_order[m]];
      if (r > k) s += static_cast<double>(r - k);
    }
    penalty[i] = s;
  }
  double total = 0.0;
  for (double p : penalty) total += p;
  const double nn = static_cast<double>(n), kk = static_cast<double>(k);
  return 1.0 - 2.0 / (nn * kk * (2.0 * nn - 3.0 * kk - 1.0)) * total;
}

double neighbor_iou(const Matrix& embedding, const VoxelSet& voxels, const std::vector<std::size_t>& grid_of,
                    std::size_t k) {
  const std::size_t n = embedding.rows;
  if (grid_of.size() != n) throw DimensionError(fmt::format("neighbor_iou: {} points but {} grid indices", n, grid_of.size()));
  for (std::size_t i = 0; i < n; ++i) {
    if (grid_of[i] >= voxels.grids.size()) {
      throw DataError(fmt::format("neighbor_iou: no voxel grid for point {} (id {})", i, grid_of[i]));
    }
  }
  if (k < 1 || k >= n) throw DomainError(fmt::format("neighbor_iou: k = {} needs 1 <= k < N = {}", k, n));
  std::vector<double> per_point(n, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    double s = 0.0;
    for (std::size_t j : nearest_neighbors(embedding, i, k)) s += iou(voxels.grids[grid_of[i]], voxels.grids[grid_of[j]]);
    per_point[i] = s / static_cast<double>(k);
  }
  return std::accumulate(per_point.begin(), per_point.end(), 0.0) / static_cast<double>(n);
}

}  // namespace vspace
