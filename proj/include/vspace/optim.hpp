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
#include <span>
#include <string>
#include <vector>

#include "vspace/tensor.hpp"

namespace vspace::nn {

/// A trainable tensor and its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  explicit Parameter(std::string n = {}, Tensor v = {})
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

struct AdamOptions {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;   // one per parameter, lazily created
  std::vector<Tensor> second_moment;

  /// Bit-exact binary image (little-endian f64 payloads).
  std::vector<std::uint8_t> serialize() const;
  static AdamState deserialize(std::span<const std::uint8_t> bytes);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update of every parameter from its .grad:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
/// Throws NumericError naming the parameter if any gradient is non-finite;
/// in that case nothing is modified.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace vspace::nn
