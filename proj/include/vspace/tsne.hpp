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
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "vspace/matrix.hpp"

namespace vspace::tsne {

struct TsneConfig {
  double perplexity = 30.0;
  double learning_rate = 200.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double exaggeration = 4.0;
  int exaggeration_iterations = -1;  // -1: min(250, iterations / 4)
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  int momentum_switch = 250;

  void validate() const;
  int exaggeration_duration() const;

  friend bool operator==(const TsneConfig&, const TsneConfig&) = default;
};

void to_json(nlohmann::json& j, const TsneConfig& c);
void from_json(const nlohmann::json& j, TsneConfig& c);

/// Squared Euclidean distances; exactly symmetric with a zero diagonal.
Matrix pairwise_sq_dists(const Matrix& x);

struct ConditionalRow {
  double beta = 0.0;   // 1 / (2 sigma^2)
  double sigma = 0.0;
  double perplexity = 0.0;  // achieved, 2^H in bits
  std::vector<double> p;    // p_{j|i}, zero at j = self
};

/// Bisection on log(beta) over [1e-20, 1e10], at most 100 steps, until
/// 2^H(P_i) is within 1e-4 of the target. A row whose off-diagonal
/// distances are all equal returns the uniform row. Throws NumericError
/// naming `self` when the target cannot be reached.
ConditionalRow perplexity_search(std::span<const double> sq_dists, std::size_t self, double perplexity);

/// Row i of the result holds p_{j|i}.
Matrix conditional_affinities(const Matrix& sq_dists, double perplexity);

/// P_ij = (p_{j|i} + p_{i|j}) / (2N), off-diagonal entries floored at 1e-12.
Matrix symmetrize(const Matrix& conditionals);

/// sum over i != j of P_ij log(P_ij / q_ij), with q floored at 1e-12.
double kl_objective(const Matrix& p, const Matrix& y);

/// dC/dy_i = 4 sum_j (exaggeration * P_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2).
Matrix kl_gradient(const Matrix& p, const Matrix& y, double exaggeration = 1.0);

/// Per-column min-max scaling to [0, 1]; constant columns map to 0.
Matrix minmax_scale(const Matrix& x);

struct TsneResult {
  Matrix embedding;  // [N, 2]
  double kl_initial = 0.0;
  double kl_final = 0.0;
};

using IterationCallback = std::function<void(int iteration, const Matrix& y)>;

/// Exact t-SNE with plain momentum. Throws ConfigError when N < 4 or the
/// perplexity is not below N - 1, NumericError on non-finite coordinates.
TsneResult run(const Matrix& x, const TsneConfig& config, const IterationCallback& on_iteration = {});

struct Embedding {
  std::vector<std::size_t> ids;
  Matrix coords;  // [N, 2]
};

void write_embedding_csv(const std::filesystem::path& path, const Embedding& e);
Embedding read_embedding_csv(const std::filesystem::path& path);

}  // namespace vspace::tsne
