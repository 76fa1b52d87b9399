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
#include <vector>

#include "vspace/matrix.hpp"
#include "vspace/voxel.hpp"

namespace vspace {

/// Indices of the k nearest other rows of `x` to row i, nearest first; equal
/// distances keep ascending index order.
std::vector<std::size_t> nearest_neighbors(const Matrix& x, std::size_t i, std::size_t k);

/// Trustworthiness of a low-dimensional embedding: 1 minus the normalized
/// sum of high-dimensional rank excesses over the k nearest low-dimensional
/// neighbors that are not high-dimensional neighbors. Requires
/// 1 <= k < N / 2 (DomainError otherwise).
double trustworthiness(const Matrix& high, const Matrix& low, std::size_t k);

/// Mean over points of the mean voxel IoU between a point's grid and the
/// grids of its k nearest embedding neighbors. grid_of[i] selects the grid
/// of embedding row i in `voxels`; a missing grid is a DataError.
double neighbor_iou(const Matrix& embedding, const VoxelSet& voxels,
                    const std::vector<std::size_t>& grid_of, std::size_t k = 5);

}  // namespace vspace
