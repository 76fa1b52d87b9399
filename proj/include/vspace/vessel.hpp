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

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace vspace {

/// Five-parameter vessel: a quadratic Bezier profile revolved about the
/// vertical axis. All lengths are in unit-cube world units.
struct VesselParams {
  double height = 0.0;
  double base_width = 0.0;
  double top_width = 0.0;
  double ctrl_r = 0.0;  // horizontal coordinate of the middle control point
  double ctrl_h = 0.0;  // vertical coordinate of the middle control point

  friend bool operator==(const VesselParams&, const VesselParams&) = default;
};

/// Throws ConfigError unless height in (0,1] and 0 <= ctrl_h <= height and
/// the widths are non-negative.
void validate(const VesselParams& p);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Sampling ranges. ctrl_h_fraction is relative to the sampled height.
struct ParamRanges {
  Interval height{0.40, 0.95};
  Interval base_width{0.10, 0.90};
  Interval top_width{0.10, 0.90};
  Interval ctrl_r{0.05, 0.45};
  Interval ctrl_h_fraction{0.15, 0.85};

  friend bool operator==(const ParamRanges&, const ParamRanges&) = default;
};

void validate(const ParamRanges& ranges);

struct ProfilePoint {
  double r = 0.0;
  double h = 0.0;
};

/// Control polygon of the revolved profile: base rim, middle control point,
/// top rim.
struct ProfileCurve {
  ProfilePoint p0;
  ProfilePoint p1;
  ProfilePoint p2;

  double height() const { return p2.h; }
};

ProfileCurve profile_of(const VesselParams& p);

/// One vessel drawn from `ranges` with an Rng seeded by `seed`.
VesselParams sample_params(std::uint64_t seed, const ParamRanges& ranges);

/// Quadratic Bezier evaluation, t in [0,1] (DomainError otherwise).
ProfilePoint bezier_point(const ProfileCurve& curve, double t);

/// Bezier parameter at which the profile reaches height h. Requires the
/// monotone-height invariant 0 <= p1.h <= p2.h.
double profile_parameter(const ProfileCurve& curve, double h);

/// Radius of the revolved profile at height h in [0, height].
double profile_radius(const ProfileCurve& curve, double h);

/// `count` vessels; vessel i is sampled from stream derive_seed(seed, i), so
/// any prefix of a larger dataset equals the smaller dataset.
std::vector<VesselParams> generate_dataset(std::size_t count, std::uint64_t seed,
                                           const ParamRanges& ranges);

/// Per-vessel sampling seed used by generate_dataset.
std::uint64_t vessel_seed(std::uint64_t seed, std::size_t id);

/// params.csv: `id,height,base_width,top_width,ctrl_r,ctrl_h`, 9 significant
/// digits. Ids are the row positions 0..n-1.
void write_params_csv(const std::filesystem::path& path,
                      const std::vector<VesselParams>& params);
std::vector<VesselParams> read_params_csv(const std::filesystem::path& path);

}  // namespace vspace
