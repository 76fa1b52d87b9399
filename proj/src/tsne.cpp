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

#include "vspace/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "vspace/csv.hpp"
#include "vspace/errors.hpp"
#include "vspace/rng.hpp"

namespace vspace::tsne {

using nlohmann::json;

void TsneConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("tsne config: " + m); };
  if (!(perplexity > 1.0)) fail("perplexity must be > 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (iterations < 1) fail("iterations must be >= 1");
  if (!(exaggeration >= 1.0)) fail("exaggeration must be >= 1");
  if (exaggeration_iterations < -1) fail("exaggeration_iterations must be >= 0 (or -1 for the default)");
  if (!(momentum_initial >= 0.0 && momentum_initial < 1.0 && momentum_final >= 0.0 &&
        momentum_final < 1.0)) {
    fail("momentum must lie in [0, 1)");
  }
  if (momentum_switch < 0) fail("momentum_switch must be >= 0");
}

int TsneConfig::exaggeration_duration() const {
  return exaggeration_iterations >= 0 ? exaggeration_iterations : std::min(250, iterations / 4);
}

void to_json(json& j, const TsneConfig& c) {
  j = json{{"perplexity", c.perplexity},
           {"learning_rate", c.learning_rate},
           {"iterations", c.iterations},
           {"seed", c.seed},
           {"exaggeration", c.exaggeration},
           {"exaggeration_iterations", c.exaggeration_iterations},
           {"momentum_initial", c.momentum_initial},
           {"momentum_final", c.momentum_final},
           {"momentum_switch", c.momentum_switch}};
}

void from_json(const json& j, TsneConfig& c) {
  j.at("perplexity").get_to(c.perplexity);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("iterations").get_to(c.iterations);
  j.at("seed").get_to(c.seed);
  j.at("exaggeration").get_to(c.exaggeration);
  j.at("exaggeration_iterations").get_to(c.exaggeration_iterations);
  j.at("momentum_initial").get_to(c.momentum_initial);
  j.at("momentum_final").get_to(c.momentum_final);
  j.at("momentum_switch").get_to(c.momentum_switch);
}

Matrix pairwise_sq_dists(const Matrix& x) {
  const std::size_t n = x.rows, d = x.cols;
  Matrix out(n, n);
#pragma omp parallel for schedule(dynamic, 16)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    const double* xi = x.data.data() + i * d;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* xj = x.data.data() + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xi[k] - xj[k];
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) out(i, j) = out(j, i);
  }
  return out;
}

namespace {

struct RowEval {
  double perplexity;
  double entropy_bits;
};

// Fills p with the normalized Gaussian row at precision beta. Distances are
// shifted by their minimum so the largest weight is exactly 1.
RowEval gaussian_row(std::span<const double> d, std::size_t self, double dmin, double beta,
                     std::vector<double>& p) {
  double z = 0.0, wsum = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (j == self) {
      p[j] = 0.0;
      continue;
    }
    const double shifted = d[j] - dmin;
    p[j] = std::exp(-beta * shifted);
    z += p[j];
    wsum += p[j] * shifted;
  }
  const double h_nats = std::log(z) + beta * wsum / z;
  for (auto& v : p) v /= z;
  const double bits = h_nats / std::numbers::ln2;
  return {std::exp2(bits), bits};
}

}  // namespace

ConditionalRow perplexity_search(std::span<const double> d, std::size_t self, double perplexity) {
  const std::size_t n = d.size();
  if (n < 2 || self >= n) throw DimensionError("perplexity_search: need a row of at least 2 distances");
  double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == self) continue;
    dmin = std::min(dmin, d[j]);
    dmax = std::max(dmax, d[j]);
  }
  ConditionalRow row;
  row.p.assign(n, 0.0);

  if (dmax == dmin) {
    // Every bandwidth gives the uniform row; N - 1 is the only perplexity.
    for (std::size_t j = 0; j < n; ++j) row.p[j] = j == self ? 0.0 : 1.0 / static_cast<double>(n - 1);
    row.beta = 1.0;
    row.sigma = std::sqrt(0.5);
    row.perplexity = static_cast<double>(n - 1);
    return row;
  }

  constexpr double kTol = 1e-4;
  double lo = std::log(1e-20), hi = std::log(1e10);
  double best_gap = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double beta = std::exp(mid);
    const RowEval ev = gaussian_row(d, self, dmin, beta, row.p);
    const double gap = ev.perplexity - perplexity;
    best_gap = std::min(best_gap, std::abs(gap));
    if (std::abs(gap) <= kTol) {
      row.beta = beta;
      row.sigma = std::sqrt(1.0 / (2.0 * beta));
      row.perplexity = ev.perplexity;
      return row;
    }
    // Perplexity falls as beta grows.
    (gap > 0 ? lo : hi) = mid;
  }
  throw NumericError(fmt::format("perplexity search failed on row {}: target {} not reached "
                                 "(closest gap {:.3g})",
                                 self, perplexity, best_gap));
}

Matrix conditional_affinities(const Matrix& sq_dists, double perplexity) {
  const std::size_t n = sq_dists.rows;
  Matrix out(n, n);
  // Rows are independent; record the first failure and rethrow it.
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    try {
      const auto row = perplexity_search(sq_dists.row(i), i, perplexity);
      std::copy(row.p.begin(), row.p.end(), out.row(i).begin());
    } catch (const NumericError& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw NumericError(e);
  }
  return out;
}

Matrix symmetrize(const Matrix& c) {
  const std::size_t n = c.rows;
  Matrix p(n, n);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      p(i, j) = std::max((c(i, j) + c(j, i)) * scale, 1e-12);
    }
  }
  return p;
}

namespace {

// Student-t numerators w_ij = 1 / (1 + |y_i - y_j|^2) and their total.
double student_weights(const Matrix& y, Matrix& w) {
  const std::size_t n = y.rows;
  std::vector<double> row_sum(n, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        w(i, j) = 0.0;
        continue;
      }
      const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
      w(i, j) = 1.0 / (1.0 + dx * dx + dy * dy);
      s += w(i, j);
    }
    row_sum[i] = s;
  }
  double z = 0.0;
  for (double s : row_sum) z += s;
  return z;
}

void gradient_into(const Matrix& p, const Matrix& y, const Matrix& w, double z, double exaggeration,
                   Matrix& grad) {
  const std::size_t n = y.rows;
#pragma omp parallel for schedule(dynamic, 16)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    double gx = 0.0, gy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double m = (exaggeration * p(i, j) - w(i, j) / z) * w(i, j);
      gx += m * (y(i, 0) - y(j, 0));
      gy += m * (y(i, 1) - y(j, 1));
    }
    grad(i, 0) = 4.0 * gx;
    grad(i, 1) = 4.0 * gy;
  }
}

void require_embedding(const Matrix& p, const Matrix& y) {
  if (y.cols != 2 || p.rows != y.rows || p.cols != y.rows) {
    throw DimensionError(fmt::format("tsne: P is {}x{} but Y is {}x{}", p.rows, p.cols, y.rows, y.cols));
  }
}

}  // namespace

double kl_objective(const Matrix& p, const Matrix& y) {
  require_embedding(p, y);
  Matrix w(y.rows, y.rows);
  const double z = student_weights(y, w);
  double kl = 0.0;
  for (std::size_t i = 0; i < y.rows; ++i) {
    for (std::size_t j = 0; j < y.rows; ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      const double q = std::max(w(i, j) / z, 1e-12);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return kl;
}

Matrix kl_gradient(const Matrix& p, const Matrix& y, double exaggeration) {
  require_embedding(p, y);
  Matrix w(y.rows, y.rows), grad(y.rows, 2);
  const double z = student_weights(y, w);
  gradient_into(p, y, w, z, exaggeration, grad);
  return grad;
}

Matrix minmax_scale(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (std::size_t k = 0; k < x.cols; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < x.rows; ++i) {
      lo = std::min(lo, x(i, k));
      hi = std::max(hi, x(i, k));
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < x.rows; ++i) out(i, k) = span > 0 ? (x(i, k) - lo) / span : 0.0;
  }
  return out;
}

TsneResult run(const Matrix& x, const TsneConfig& config, const IterationCallback& on_iteration) {
  config.validate();
  const std::size_t n = x.rows;
  if (n < 4) throw ConfigError(fmt::format("tsne needs at least 4 points, got {}", n));
  if (!(config.perplexity < static_cast<double>(n - 1))) {
    throw ConfigError(fmt::format("perplexity {} must be below N - 1 = {}", config.perplexity, n - 1));
  }
  for (double v : x.data) {
    if (!std::isfinite(v)) throw DataError("tsne input contains non-finite values");
  }

  const Matrix p = symmetrize(conditional_affinities(pairwise_sq_dists(x), config.perplexity));

  Matrix y(n, 2);
  Rng rng(config.seed);
  for (auto& v : y.data) v = 1e-2 * rng.normal();  // variance 1e-4

  TsneResult result;
  result.kl_initial = kl_objective(p, y);

  Matrix w(n, n), grad(n, 2), velocity(n, 2);
  const int exag_iters = config.exaggeration_duration();
  for (int it = 0; it < config.iterations; ++it) {
    const double exag = it < exag_iters ? config.exaggeration : 1.0;
    const double momentum = it < config.momentum_switch ? config.momentum_initial : config.momentum_final;
    const double z = student_weights(y, w);
    gradient_into(p, y, w, z, exag, grad);
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 2; ++k) {
        double& v = velocity(i, k);
        v = momentum * v - config.learning_rate * grad(i, k);
        y(i, k) += v;
      }
      cx += y(i, 0);
      cy += y(i, 1);
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    bool finite = true;
    for (std::size_t i = 0; i < n; ++i) {
      y(i, 0) -= cx;
      y(i, 1) -= cy;
      finite = finite && std::isfinite(y(i, 0)) && std::isfinite(y(i, 1));
    }
    if (!finite) throw NumericError(fmt::format("tsne: non-finite coordinates at iteration {}", it + 1));
    if (on_iteration) on_iteration(it + 1, y);
  }
  result.kl_final = kl_objective(p, y);
  result.embedding = std::move(y);
  return result;
}

void write_embedding_csv(const std::filesystem::path& path, const Embedding& e) {
  if (e.ids.size() != e.coords.rows || e.coords.cols != 2) {
    throw DimensionError("write_embedding_csv: ids and coordinates disagree");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "id,x,y\n";
  for (std::size_t i = 0; i < e.ids.size(); ++i) {
    out << e.ids[i] << ',' << csv::format_real(e.coords(i, 0)) << ','
        << csv::format_real(e.coords(i, 1)) << '\n';
  }
}

Embedding read_embedding_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"id", "x", "y"});
  Embedding e;
  e.coords = Matrix(t.rows.size(), 2);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double id = t.rows[i][0];
    if (id < 0 || id != std::floor(id)) throw DataError(fmt::format("{}: bad id in row {}", path.string(), i));
    e.ids.push_back(static_cast<std::size_t>(id));
    e.coords(i, 0) = t.rows[i][1];
    e.coords(i, 1) = t.rows[i][2];
  }
  return e;
}

}  // namespace vspace::tsne
