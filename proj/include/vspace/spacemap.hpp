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

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vspace/matrix.hpp"
#include "vspace/tsne.hpp"
#include "vspace/voxel.hpp"

namespace vspace {

struct SpaceMap {
  tsne::Embedding embedding;
  std::vector<SectionImage> glyphs;        // aligned with embedding rows
  std::optional<std::vector<int>> labels;  // aligned with embedding rows, -1 noise
  double canvas = 1000.0;
  double glyph_size = 24.0;

  /// Throws DimensionError when the per-point columns disagree and
  /// ConfigError when the canvas is smaller than ten glyphs.
  void validate() const;
};

inline constexpr std::array<std::string_view, 12> kClusterPalette = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#17becf", "#bcbd22", "#393b79", "#ad494a", "#637939"};
inline constexpr std::string_view kNoiseColor = "#9e9e9e";
inline constexpr std::string_view kUnlabeledColor = "#222222";

std::string_view cluster_color(int label);

/// Canvas position of every embedding row: min-max mapping per axis into
/// [margin, canvas - margin] with a 5% margin, y pointing up. A degenerate
/// axis maps to the canvas center.
Matrix layout_points(const Matrix& coords, double canvas);

/// SVG path data for the filled pixels of `glyph`, drawn `size` wide and
/// centered at (cx, cy). Horizontal runs of filled pixels become one
/// rectangle each.
std::string glyph_path(const SectionImage& glyph, double cx, double cy, double size);

/// Row index of each cluster's medoid, ordered by cluster id. The medoid
/// minimizes the summed Euclidean distance to the rest of its cluster; ties
/// go to the lowest row. Noise is ignored.
std::vector<std::size_t> cluster_medoids(const Matrix& coords, const std::vector<int>& labels);

std::string render_svg(const SpaceMap& map);

std::string compose_compare(const SpaceMap& a, const SpaceMap& b, std::string_view title_a,
                            std::string_view title_b);

}  // namespace vspace
