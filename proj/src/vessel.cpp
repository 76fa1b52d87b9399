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

#include "vspace/vessel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "vspace/csv.hpp"
#include "vspace/errors.hpp"
#include "vspace/rng.hpp"

namespace vspace {

namespace {

void check_interval(const Interval& iv, const char* name, double min, double max) {
  if (!(iv.lo <= iv.hi)) {
    throw ConfigError(fmt::format("range {}: lo {} > hi {}", name, iv.lo, iv.hi));
  }
  if (iv.lo < min || iv.hi > max) {
    throw ConfigError(fmt::format("range {}: [{}, {}] leaves the unit modeling cube [{}, {}]",
                                  name, iv.lo, iv.hi, min, max));
  }
}

}  // namespace

void validate(const ParamRanges& r) {
  check_interval(r.height, "height", 0.0, 1.0);
  if (r.height.lo <= 0.0) throw ConfigError("range height: lo must be > 0");
  check_interval(r.base_width, "base_width", 0.0, 1.0);
  check_interval(r.top_width, "top_width", 0.0, 1.0);
  check_interval(r.ctrl_r, "ctrl_r", 0.0, 0.5);
  check_interval(r.ctrl_h_fraction, "ctrl_h_fraction", 0.0, 1.0);
}

void validate(const VesselParams& p) {
  if (!(p.height > 0.0 && p.height <= 1.0)) {
    throw ConfigError(fmt::format("vessel height {} outside (0, 1]", p.height));
  }
  if (!(p.ctrl_h >= 0.0 && p.ctrl_h <= p.height)) {
    throw ConfigError(fmt::format("ctrl_h {} outside [0, height={}]", p.ctrl_h, p.height));
  }
  if (!(p.base_width >= 0.0 && p.top_width >= 0.0 && p.ctrl_r >= 0.0)) {
    throw ConfigError("vessel widths and ctrl_r must be non-negative");
  }
}

ProfileCurve profile_of(const VesselParams& p) {
  return ProfileCurve{{p.base_width / 2.0, 0.0}, {p.ctrl_r, p.ctrl_h}, {p.top_width / 2.0, p.height}};
}

VesselParams sample_params(std::uint64_t seed, const ParamRanges& ranges) {
  validate(ranges);
  Rng rng(seed);
  VesselParams p;
  p.height = rng.uniform(ranges.height.lo, ranges.height.hi);
  p.base_width = rng.uniform(ranges.base_width.lo, ranges.base_width.hi);
  p.top_width = rng.uniform(ranges.top_width.lo, ranges.top_width.hi);
  p.ctrl_r = rng.uniform(ranges.ctrl_r.lo, ranges.ctrl_r.hi);
  const double f = rng.uniform(ranges.ctrl_h_fraction.lo, ranges.ctrl_h_fraction.hi);
  p.ctrl_h = f * p.height;
  return p;
}

ProfilePoint bezier_point(const ProfileCurve& c, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError(fmt::format("bezier parameter t={} outside [0, 1]", t));
  }
  const double u = 1.0 - t;
  const double w0 = u * u;
  const double w1 = 2.0 * t * u;
  const double w2 = t * t;
  return {w0 * c.p0.r + w1 * c.p1.r + w2 * c.p2.r, w0 * c.p0.h + w1 * c.p1.h + w2 * c.p2.h};
}

double profile_parameter(const ProfileCurve& c, double h) {
  const double height = c.height();
  if (!(h >= 0.0 && h <= height)) {
    throw DomainError(fmt::format("height {} outside [0, {}]", h, height));
  }
  if (h == 0.0) return 0.0;
  // h(t) = (H - 2a) t^2 + 2a t with a = p1.h. The root is taken in the
  // cancellation-free form t = h / (a + sqrt(a^2 + (H - 2a) h)), which also
  // covers the linear case H == 2a. The discriminant is >= 0 whenever
  // 0 <= a <= H and 0 <= h <= H.
  const double a = c.p1.h;
  const double disc = a * a + (height - 2.0 * a) * h;
  const double denom = a + std::sqrt(std::max(disc, 0.0));
  if (!(denom > 0.0)) {
    throw NumericError(fmt::format("profile height inversion failed at h={}", h));
  }
  const double t = h / denom;
  constexpr double kTol = 1e-9;
  if (!(t >= -kTol && t <= 1.0 + kTol)) {
    throw NumericError(fmt::format("no profile root in [0,1] for h={} (t={})", h, t));
  }
  return std::clamp(t, 0.0, 1.0);
}

double profile_radius(const ProfileCurve& c, double h) {
  return bezier_point(c, profile_parameter(c, h)).r;
}

std::uint64_t vessel_seed(std::uint64_t seed, std::size_t id) {
  return derive_seed(seed, static_cast<std::uint64_t>(id));
}

std::vector<VesselParams> generate_dataset(std::size_t count, std::uint64_t seed,
                                           const ParamRanges& ranges) {
  if (count < 1) throw ConfigError("dataset count must be >= 1");
  validate(ranges);
  std::vector<VesselParams> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = sample_params(vessel_seed(seed, i), ranges);
  return out;
}

void write_params_csv(const std::filesystem::path& path,
                      const std::vector<VesselParams>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "id,height,base_width,top_width,ctrl_r,ctrl_h\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    out << i << ',' << csv::format_real(p.height) << ',' << csv::format_real(p.base_width)
        << ',' << csv::format_real(p.top_width) << ',' << csv::format_real(p.ctrl_r) << ','
        << csv::format_real(p.ctrl_h) << '\n';
  }
}

std::vector<VesselParams> read_params_csv(const std::filesystem::path& path) {
  const auto table =
      csv::read(path, {"id", "height", "base_width", "top_width", "ctrl_r", "ctrl_h"});
  std::vector<VesselParams> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (row[0] != static_cast<double>(i)) {
      throw DataError(fmt::format("{}: row {} has id {}, ids must be 0..n-1 in order",
                                  path.string(), i, row[0]));
    }
    VesselParams p{row[1], row[2], row[3], row[4], row[5]};
    try {
      validate(p);
    } catch (const ConfigError& e) {
      throw DataError(fmt::format("{}: vessel {}: {}", path.string(), i, e.what()));
    }
    out.push_back(p);
  }
  if (out.empty()) throw DataError(fmt::format("{}: no vessels", path.string()));
  return out;
}

}  // namespace vspace
