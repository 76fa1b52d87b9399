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

#include "vspace/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "vspace/errors.hpp"

namespace vspace::nn {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    if (pos_ + 8 > bytes_.size()) throw DataError("adam state: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  put_u64(out, t.rank());
  for (auto d : t.shape()) put_u64(out, d);
  for (double v : t.values()) put_f64(out, v);
}

Tensor get_tensor(Reader& in) {
  const auto rank = in.u64();
  if (rank > 8) throw DataError("adam state: implausible tensor rank");
  Tensor::Shape shape(rank);
  for (auto& d : shape) d = in.u64();
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = in.f64();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

std::vector<std::uint8_t> AdamState::serialize() const {
  std::vector<std::uint8_t> out;
  put_f64(out, options.learning_rate);
  put_f64(out, options.beta1);
  put_f64(out, options.beta2);
  put_f64(out, options.eps);
  put_u64(out, step);
  put_u64(out, first_moment.size());
  for (std::size_t i = 0; i < first_moment.size(); ++i) {
    put_tensor(out, first_moment[i]);
    put_tensor(out, second_moment[i]);
  }
  return out;
}

AdamState AdamState::deserialize(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  AdamState s;
  s.options.learning_rate = in.f64();
  s.options.beta1 = in.f64();
  s.options.beta2 = in.f64();
  s.options.eps = in.f64();
  s.step = in.u64();
  const auto n = in.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    s.first_moment.push_back(get_tensor(in));
    s.second_moment.push_back(get_tensor(in));
  }
  if (!in.done()) throw DataError("adam state: trailing bytes");
  return s;
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  for (const Parameter* p : params) {
    require_same_shape(p->value, p->grad, "adam_step");
    if (!p->grad.all_finite()) {
      throw NumericError(fmt::format("adam_step: non-finite gradient for parameter '{}'", p->name));
    }
  }
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError(fmt::format("adam_step: state tracks {} parameters, got {}",
                                     state.first_moment.size(), params.size()));
  }

  state.step += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(o.beta1, t);
  const double bias2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    require_same_shape(p.value, m, "adam_step moments");
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      const double mhat = m[j] / bias1;
      const double vhat = v[j] / bias2;
      p.value[j] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace vspace::nn
