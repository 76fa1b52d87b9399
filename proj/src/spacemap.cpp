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

#include "vspace/spacemap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "vspace/errors.hpp"

namespace vspace {

namespace {

constexpr double kMarginFraction = 0.05;
constexpr double kTitleHeight = 40.0;
constexpr double kPanelGap = 40.0;

std::string num(double v) {
  std::string s = fmt::format("{:.2f}", v);
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(double width, double height) {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\">\n",
      num(width), num(height));
}

int label_of(const SpaceMap& map, std::size_t i) {
  return map.labels ? (*map.labels)[i] : std::numeric_limits<int>::min();
}

// Body of one map panel, in panel-local coordinates.
std::string panel_body(const SpaceMap& map) {
  std::string out;
  out += fmt::format("<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{0}\" fill=\"#ffffff\" stroke=\"#cccccc\"/>\n",
                     num(map.canvas));
  if (map.embedding.ids.empty()) {
    out += "<!-- warning: empty map, no points to draw -->\n";
    return out;
  }
  const Matrix pos = layout_points(map.embedding.coords, map.canvas);
  for (std::size_t i = 0; i < map.embedding.ids.size(); ++i) {
    out += fmt::format("<path data-id=\"{}\" fill=\"{}\" d=\"{}\"/>\n", map.embedding.ids[i],
                       cluster_color(label_of(map, i)), glyph_path(map.glyphs[i], pos(i, 0), pos(i, 1), map.glyph_size));
  }
  return out;
}

double strip_glyph_size(const SpaceMap& map) { return 2.0 * map.glyph_size; }

// Row of medoid glyphs under a panel; returns its height.
std::string medoid_strip(const SpaceMap& map, double top, double& height) {
  height = 0.0;
  if (!map.labels) return {};
  const auto medoids = cluster_medoids(map.embedding.coords, *map.labels);
  if (medoids.empty()) return {};
  const double cell = strip_glyph_size(map) * 1.25;
  const auto per_row = std::max<std::size_t>(1, static_cast<std::size_t>(map.canvas / cell));
  const std::size_t rows = (medoids.size() + per_row - 1) / per_row;
  height = static_cast<double>(rows) * (cell + 16.0);
  std::string out = fmt::format("<g class=\"medoids\" data-count=\"{}\">\n", medoids.size());
  for (std::size_t c = 0; c < medoids.size(); ++c) {
    const std::size_t i = medoids[c];
    const double cx = cell * (static_cast<double>(c % per_row) + 0.5);
    const double cy = top + static_cast<double>(c / per_row) * (cell + 16.0) + cell * 0.5;
    out += fmt::format("<path data-medoid=\"{}\" data-cluster=\"{}\" fill=\"{}\" d=\"{}\"/>\n", map.embedding.ids[i], c,
                       cluster_color(static_cast<int>(c)), glyph_path(map.glyphs[i], cx, cy, strip_glyph_size(map)));
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">c{}</text>\n",
                       num(cx), num(cy + cell * 0.5 + 12.0), c);
  }
  out += "</g>\n";
  return out;
}

}  // namespace

void SpaceMap::validate() const {
  const std::size_t n = embedding.ids.size();
  if (embedding.coords.rows != n || (n > 0 && embedding.coords.cols != 2)) {
    throw DimensionError(fmt::format("space map: {} ids but coordinates are [{}, {}]", n, embedding.coords.rows,
                                     embedding.coords.cols));
  }
  if (glyphs.size() != n) throw DimensionError(fmt::format("space map: {} ids but {} glyphs", n, glyphs.size()));
  if (labels && labels->size() != n) {
    throw DimensionError(fmt::format("space map: {} ids but {} labels", n, labels->size()));
  }
  if (!(glyph_size > 0.0) || !(canvas >= 10.0 * glyph_size)) {
    throw ConfigError(fmt::format("space map: canvas {} must be at least 10x the glyph size {}", canvas, glyph_size));
  }
  for (double v : embedding.coords.data) {
    if (!std::isfinite(v)) throw DataError("space map: non-finite coordinates");
  }
}

std::string_view cluster_color(int label) {
  if (label == std::numeric_limits<int>::min()) return kUnlabeledColor;
  if (label < 0) return kNoiseColor;
  return kClusterPalette[static_cast<std::size_t>(label) % kClusterPalette.size()];
}

Matrix layout_points(const Matrix& coords, double canvas) {
  const double margin = kMarginFraction * canvas, span = canvas - 2.0 * margin;
  Matrix out(coords.rows, 2);
  for (std::size_t k = 0; k < 2 && coords.rows > 0; ++k) {
    double lo = coords(0, k), hi = coords(0, k);
    for (std::size_t i = 0; i < coords.rows; ++i) {
      lo = std::min(lo, coords(i, k));
      hi = std::max(hi, coords(i, k));
    }
    for (std::size_t i = 0; i < coords.rows; ++i) {
      const double t = hi > lo ? (coords(i, k) - lo) / (hi - lo) : 0.5;
      out(i, k) = k == 0 ? margin + t * span : canvas - margin - t * span;
    }
  }
  return out;
}

std::string glyph_path(const SectionImage& glyph, double cx, double cy, double size) {
  const int r = glyph.resolution();
  if (r == 0) return {};
  const double px = size / r;
  const double left = cx - 0.5 * size, top = cy - 0.5 * size;
  std::string d;
  // Image row y = r - 1 is drawn at the top.
  for (int y = r - 1; y >= 0; --y) {
    int x = 0;
    while (x < r) {
      if (!glyph.at(x, y)) {
        ++x;
        continue;
      }
      const int start = x;
      while (x < r && glyph.at(x, y)) ++x;
      d += fmt::format("M{} {}h{}v{}h-{}z", num(left + start * px), num(top + (r - 1 - y) * px), num((x - start) * px),
                       num(px), num((x - start) * px));
    }
  }
  return d;
}

std::vector<std::size_t> cluster_medoids(const Matrix& coords, const std::vector<int>& labels) {
  if (labels.size() != coords.rows) throw DimensionError("cluster_medoids: labels and coordinates disagree");
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) members[labels[i]].push_back(i);
  }
  std::vector<std::size_t> out;
  for (const auto& [label, idx] : members) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = idx.front();
    for (std::size_t a : idx) {
      double s = 0.0;
      for (std::size_t b : idx) s += std::hypot(coords(a, 0) - coords(b, 0), coords(a, 1) - coords(b, 1));
      if (s < best) {
        best = s;
        best_i = a;
      }
    }
    out.push_back(best_i);
  }
  return out;
}

std::string render_svg(const SpaceMap& map) {
  map.validate();
  std::string out = header(map.canvas, map.canvas);
  out += panel_body(map);
  out += "</svg>\n";
  return out;
}

std::string compose_compare(const SpaceMap& a, const SpaceMap& b, std::string_view title_a, std::string_view title_b) {
  a.validate();
  b.validate();
  double strip_a = 0.0, strip_b = 0.0;
  const double strip_top_a = kTitleHeight + a.canvas + 10.0, strip_top_b = kTitleHeight + b.canvas + 10.0;
  const std::string body_strip_a = medoid_strip(a, strip_top_a, strip_a);
  const std::string body_strip_b = medoid_strip(b, strip_top_b, strip_b);
  const double width = a.canvas + kPanelGap + b.canvas;
  const double height = std::max(strip_top_a + strip_a, strip_top_b + strip_b) + 10.0;

  std::string out = header(width, height);
  out += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n", num(width), num(height));
  auto panel = [&](const SpaceMap& m, std::string_view title, double x, const std::string& strip) {
    std::string s = fmt::format("<g class=\"panel\" transform=\"translate({},0)\">\n", num(x));
    s += fmt::format("<text x=\"{}\" y=\"26\" font-family=\"sans-serif\" font-size=\"20\" text-anchor=\"middle\">{}</text>\n",
                     num(m.canvas / 2), xml_escape(title));
    s += fmt::format("<g transform=\"translate(0,{})\">\n", num(kTitleHeight));
    s += panel_body(m);
    s += "</g>\n";
    s += strip;
    s += "</g>\n";
    return s;
  };
  out += panel(a, title_a, 0.0, body_strip_a);
  out += panel(b, title_b, a.canvas + kPanelGap, body_strip_b);
  out += "</svg>\n";
  return out;
}

}  // namespace vspace
