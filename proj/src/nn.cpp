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

#include "vspace/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "vspace/errors.hpp"

namespace vspace::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Index = Eigen::Index;

struct Vol {
  std::size_t d = 0, h = 0, w = 0;
  std::size_t count() const { return d * h * w; }
};

Vol spatial(const Tensor& t) { return {t.dim(2), t.dim(3), t.dim(4)}; }

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(fmt::format("{}: expected rank {}, got shape {}", what, rank,
                                     shape_str(t.shape())));
  }
}

std::size_t cubic_kernel(const Tensor& w, const char* what) {
  require_rank(w, 5, what);
  if (w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4)) {
    throw DimensionError(fmt::format("{}: non-cubic kernel {}", what, shape_str(w.shape())));
  }
  return w.dim(2);
}

// Unfolds the `big` volume of `channels` channels into rows indexed by
// (channel, kd, kh, kw) and columns indexed by the `small` output voxel.
void vol2col(const double* x, std::size_t channels, Vol big, std::size_t k, ConvGeometry g,
             Vol small, double* col) {
  const long s = g.stride;
  const long p = g.padding;
  const std::size_t ncols = small.count();
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = x + c * big.count();
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++row) {
          double* dst = col + row * ncols;
          for (std::size_t od = 0; od < small.d; ++od) {
            const long id = static_cast<long>(od) * s - p + static_cast<long>(kd);
            if (id < 0 || id >= static_cast<long>(big.d)) {
              std::fill_n(dst, small.h * small.w, 0.0);
              dst += small.h * small.w;
              continue;
            }
            for (std::size_t oh = 0; oh < small.h; ++oh, dst += small.w) {
              const long ih = static_cast<long>(oh) * s - p + static_cast<long>(kh);
              if (ih < 0 || ih >= static_cast<long>(big.h)) {
                std::fill_n(dst, small.w, 0.0);
                continue;
              }
              const double* src = xc + (static_cast<std::size_t>(id) * big.h + ih) * big.w;
              for (std::size_t ow = 0; ow < small.w; ++ow) {
                const long iw = static_cast<long>(ow) * s - p + static_cast<long>(kw);
                dst[ow] = (iw >= 0 && iw < static_cast<long>(big.w)) ? src[iw] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of vol2col: scatter-adds the columns back into the big volume.
void col2vol(const double* col, std::size_t channels, Vol big, std::size_t k, ConvGeometry g,
             Vol small, double* x) {
  const long s = g.stride;
  const long p = g.padding;
  const std::size_t ncols = small.count();
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    double* xc = x + c * big.count();
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++row) {
          const double* src = col + row * ncols;
          for (std::size_t od = 0; od < small.d; ++od) {
            const long id = static_cast<long>(od) * s - p + static_cast<long>(kd);
            if (id < 0 || id >= static_cast<long>(big.d)) {
              src += small.h * small.w;
              continue;
            }
            for (std::size_t oh = 0; oh < small.h; ++oh, src += small.w) {
              const long ih = static_cast<long>(oh) * s - p + static_cast<long>(kh);
              if (ih < 0 || ih >= static_cast<long>(big.h)) continue;
              double* dst = xc + (static_cast<std::size_t>(id) * big.h + ih) * big.w;
              for (std::size_t ow = 0; ow < small.w; ++ow) {
                const long iw = static_cast<long>(ow) * s - p + static_cast<long>(kw);
                if (iw >= 0 && iw < static_cast<long>(big.w)) dst[iw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

void add_channel_bias(Tensor& y, const Tensor& bias) {
  if (bias.empty()) return;
  const std::size_t B = y.dim(0);
  const std::size_t C = y.dim(1);
  const std::size_t n = y.stride0() / C;
  if (bias.size() != C) {
    throw DimensionError(fmt::format("bias has {} entries for {} channels", bias.size(), C));
  }
  double* py = y.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double v = bias[c];
      double* row = py + (b * C + c) * n;
      for (std::size_t i = 0; i < n; ++i) row[i] += v;
    }
  }
}

Tensor channel_sums(const Tensor& dy) {
  const std::size_t B = dy.dim(0);
  const std::size_t C = dy.dim(1);
  const std::size_t n = dy.stride0() / C;
  Tensor db({C});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = dy.data() + (b * C + c) * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += row[i];
      db[c] += acc;
    }
  }
  return db;
}


// A 1x1x1 kernel at stride 1 without padding reads the input as its own
// column matrix.
bool is_pointwise(std::size_t k, ConvGeometry g) { return k == 1 && g.stride == 1 && g.padding == 0; }

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t kernel, ConvGeometry g) {
  const long span = static_cast<long>(in) + 2L * g.padding - static_cast<long>(kernel);
  if (g.stride < 1 || span < 0) {
    throw DimensionError(fmt::format("convolution of extent {} with kernel {}, stride {}, padding {} is empty",
                                     in, kernel, g.stride, g.padding));
  }
  return static_cast<std::size_t>(span / g.stride) + 1;
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry g) {
  require_rank(x, 5, "conv3d input");
  const std::size_t k = cubic_kernel(w, "conv3d weights");
  const std::size_t B = x.dim(0), Cin = x.dim(1), Cout = w.dim(0);
  if (w.dim(1) != Cin) {
    throw DimensionError(fmt::format("conv3d: input has {} channels, weights {} expect {}", Cin,
                                     shape_str(w.shape()), w.dim(1)));
  }
  const Vol in = spatial(x);
  const Vol out{conv_out_size(in.d, k, g), conv_out_size(in.h, k, g), conv_out_size(in.w, k, g)};
  Tensor y({B, Cout, out.d, out.h, out.w});
  const std::size_t K = Cin * k * k * k;
  const ConstMatMap W(w.data(), static_cast<Index>(Cout), static_cast<Index>(K));

  const bool pointwise = is_pointwise(k, g);
#pragma omp parallel for schedule(static)
  for (long b = 0; b < static_cast<long>(B); ++b) {
    std::vector<double> col(pointwise ? 0 : K * out.count());
    const double* xb = x.data() + b * x.stride0();
    if (!pointwise) vol2col(xb, Cin, in, k, g, out, col.data());
    MatMap Y(y.data() + b * y.stride0(), static_cast<Index>(Cout), static_cast<Index>(out.count()));
    Y.noalias() = W * ConstMatMap(pointwise ? xb : col.data(), static_cast<Index>(K),
                                  static_cast<Index>(out.count()));
  }
  add_channel_bias(y, bias);
  return y;
}

ConvGrads conv3d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g,
                          bool has_bias) {
  require_rank(x, 5, "conv3d_backward input");
  require_rank(dy, 5, "conv3d_backward upstream");
  const std::size_t k = cubic_kernel(w, "conv3d_backward weights");
  const std::size_t B = x.dim(0), Cin = x.dim(1), Cout = w.dim(0);
  const Vol in = spatial(x);
  const Vol out{conv_out_size(in.d, k, g), conv_out_size(in.h, k, g), conv_out_size(in.w, k, g)};
  if (dy.shape() != Tensor::Shape{B, Cout, out.d, out.h, out.w}) {
    throw DimensionError(fmt::format("conv3d_backward: upstream gradient {} does not match output",
                                     shape_str(dy.shape())));
  }
  const std::size_t K = Cin * k * k * k;
  const Index ncols = static_cast<Index>(out.count());

  ConvGrads grads{Tensor(x.shape()), Tensor(w.shape()), Tensor()};
  const ConstMatMap W(w.data(), static_cast<Index>(Cout), static_cast<Index>(K));
  MatMap dW(grads.dw.data(), static_cast<Index>(Cout), static_cast<Index>(K));
  const bool pointwise = is_pointwise(k, g);
  std::vector<double> col(pointwise ? 0 : K * out.count());
  std::vector<double> dcol(pointwise ? 0 : K * out.count());
  // Sequential over the batch: the weight gradient is summed in sample order.
  for (std::size_t b = 0; b < B; ++b) {
    const ConstMatMap dY(dy.data() + b * dy.stride0(), static_cast<Index>(Cout), ncols);
    const double* xb = x.data() + b * x.stride0();
    double* dxb = grads.dx.data() + b * x.stride0();
    if (!pointwise) vol2col(xb, Cin, in, k, g, out, col.data());
    dW.noalias() +=
        dY * ConstMatMap(pointwise ? xb : col.data(), static_cast<Index>(K), ncols).transpose();
    MatMap(pointwise ? dxb : dcol.data(), static_cast<Index>(K), ncols).noalias() = W.transpose() * dY;
    if (!pointwise) col2vol(dcol.data(), Cin, in, k, g, out, dxb);
  }
  if (has_bias) grads.db = channel_sums(dy);
  return grads;
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry g) {
  require_rank(x, 5, "conv_transpose3d input");
  const std::size_t k = cubic_kernel(w, "conv_transpose3d weights");
  const std::size_t B = x.dim(0), Cin = x.dim(1), Cout = w.dim(1);
  if (w.dim(0) != Cin) {
    throw DimensionError(fmt::format("conv_transpose3d: input has {} channels, weights {} expect {}",
                                     Cin, shape_str(w.shape()), w.dim(0)));
  }
  const Vol in = spatial(x);
  auto grow = [&](std::size_t n) {
    const long o = (static_cast<long>(n) - 1) * g.stride + static_cast<long>(k) - 2L * g.padding;
    if (o < 1) throw DimensionError("conv_transpose3d: empty output");
    return static_cast<std::size_t>(o);
  };
  const Vol out{grow(in.d), grow(in.h), grow(in.w)};
  Tensor y({B, Cout, out.d, out.h, out.w});
  const std::size_t K = Cout * k * k * k;
  const ConstMatMap W(w.data(), static_cast<Index>(Cin), static_cast<Index>(K));

#pragma omp parallel for schedule(static)
  for (long b = 0; b < static_cast<long>(B); ++b) {
    std::vector<double> col(K * in.count());
    MatMap C(col.data(), static_cast<Index>(K), static_cast<Index>(in.count()));
    C.noalias() = W.transpose() *
                  ConstMatMap(x.data() + b * x.stride0(), static_cast<Index>(Cin),
                              static_cast<Index>(in.count()));
    col2vol(col.data(), Cout, out, k, g, in, y.data() + b * y.stride0());
  }
  add_channel_bias(y, bias);
  return y;
}

ConvGrads conv_transpose3d_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                                    ConvGeometry g, bool has_bias) {
  require_rank(x, 5, "conv_transpose3d_backward input");
  require_rank(dy, 5, "conv_transpose3d_backward upstream");
  const std::size_t k = cubic_kernel(w, "conv_transpose3d_backward weights");
  const std::size_t B = x.dim(0), Cin = x.dim(1), Cout = w.dim(1);
  const Vol in = spatial(x);
  const Vol out = spatial(dy);
  if (dy.dim(0) != B || dy.dim(1) != Cout || conv_out_size(out.d, k, g) != in.d ||
      conv_out_size(out.h, k, g) != in.h || conv_out_size(out.w, k, g) != in.w) {
    throw DimensionError(fmt::format(
        "conv_transpose3d_backward: upstream gradient {} does not match output",
        shape_str(dy.shape())));
  }
  const std::size_t K = Cout * k * k * k;
  const Index ncols = static_cast<Index>(in.count());

  ConvGrads grads{Tensor(x.shape()), Tensor(w.shape()), Tensor()};
  const ConstMatMap W(w.data(), static_cast<Index>(Cin), static_cast<Index>(K));
  MatMap dW(grads.dw.data(), static_cast<Index>(Cin), static_cast<Index>(K));
  std::vector<double> col(K * in.count());
  for (std::size_t b = 0; b < B; ++b) {
    vol2col(dy.data() + b * dy.stride0(), Cout, out, k, g, in, col.data());
    const ConstMatMap Col(col.data(), static_cast<Index>(K), ncols);
    const ConstMatMap X(x.data() + b * x.stride0(), static_cast<Index>(Cin), ncols);
    MatMap(grads.dx.data() + b * x.stride0(), static_cast<Index>(Cin), ncols).noalias() = W * Col;
    dW.noalias() += X * Col.transpose();
  }
  if (has_bias) grads.db = channel_sums(dy);
  return grads;
}

namespace {

struct ChannelLayout {
  std::size_t batch, channels, inner;
};

ChannelLayout channel_layout(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() < 2) {
    throw DimensionError(fmt::format("batchnorm: input {} needs a channel axis", shape_str(x.shape())));
  }
  const std::size_t C = x.dim(1);
  if (gamma.size() != C || beta.size() != C) {
    throw DimensionError(fmt::format("batchnorm: {} channels but gamma/beta sizes {}/{}", C,
                                     gamma.size(), beta.size()));
  }
  return {x.dim(0), C, x.stride0() / C};
}

}  // namespace

Tensor batchnorm3d_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const BatchNormOptions& opt, Tensor& running_mean, Tensor& running_var,
                         BatchNormCache& cache) {
  const auto [B, C, S] = channel_layout(x, gamma, beta);
  const std::size_t n = B * S;
  if (n < 2) {
    throw NumericError(fmt::format(
        "batchnorm: degenerate batch, {} value(s) per channel in train mode (shape {})", n,
        shape_str(x.shape())));
  }
  Tensor y(x.shape());
  cache.xhat = Tensor(x.shape());
  cache.inv_std.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double* row = x.data() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) sum += row[i];
    }
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double* row = x.data() + (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) sq += (row[i] - mean) * (row[i] - mean);
    }
    const double var = sq / static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + opt.eps);
    cache.inv_std[c] = inv_std;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        cache.xhat[off + i] = xh;
        y[off + i] = gamma[c] * xh + beta[c];
      }
    }
    running_mean[c] = (1.0 - opt.momentum) * running_mean[c] + opt.momentum * mean;
    running_var[c] = (1.0 - opt.momentum) * running_var[c] + opt.momentum * var;
  }
  return y;
}

Tensor batchnorm3d_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const BatchNormOptions& opt, const Tensor& running_mean,
                        const Tensor& running_var) {
  const auto [B, C, S] = channel_layout(x, gamma, beta);
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double inv_std = 1.0 / std::sqrt(running_var[c] + opt.eps);
    const double scale = gamma[c] * inv_std;
    const double shift = beta[c] - running_mean[c] * scale;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) y[off + i] = x[off + i] * scale + shift;
    }
  }
  return y;
}

BatchNormGrads batchnorm3d_backward(const Tensor& dy, const Tensor& gamma,
                                    const BatchNormCache& cache) {
  require_same_shape(dy, cache.xhat, "batchnorm3d_backward");
  const std::size_t B = dy.dim(0), C = dy.dim(1), S = dy.stride0() / C;
  const double n = static_cast<double>(B * S);
  BatchNormGrads g{Tensor(dy.shape()), Tensor({C}), Tensor({C})};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * cache.xhat[off + i];
      }
    }
    g.dbeta[c] = sum_dy;
    g.dgamma[c] = sum_dy_xhat;
    const double k = gamma[c] * cache.inv_std[c] / n;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        g.dx[off + i] = k * (n * dy[off + i] - sum_dy - cache.xhat[off + i] * sum_dy_xhat);
      }
    }
  }
  return g;
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  if (negative_slope < 0.0) throw DomainError("leaky_relu: negative slope must be >= 0");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= 0.0 ? x[i] : negative_slope * x[i];
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double negative_slope) {
  require_same_shape(x, dy, "leaky_relu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] >= 0.0 ? dy[i] : negative_slope * dy[i];
  return dx;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weights");
  const std::size_t B = x.dim(0), n = x.dim(1), m = w.dim(0);
  if (w.dim(1) != n || b.size() != m) {
    throw DimensionError(fmt::format("linear: input {} vs weights {} / bias {}",
                                     shape_str(x.shape()), shape_str(w.shape()),
                                     shape_str(b.shape())));
  }
  Tensor y({B, m});
  const ConstMatMap W(w.data(), static_cast<Index>(m), static_cast<Index>(n));
  // One matrix-vector product per row keeps each row's result independent
  // of the batch it arrives in.
  for (std::size_t r = 0; r < B; ++r) {
    Eigen::Map<Eigen::VectorXd> yr(y.data() + r * m, static_cast<Index>(m));
    yr.noalias() = W * Eigen::Map<const Eigen::VectorXd>(x.data() + r * n, static_cast<Index>(n));
    for (std::size_t j = 0; j < m; ++j) yr[static_cast<Index>(j)] += b[j];
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  require_rank(x, 2, "linear_backward input");
  const std::size_t B = x.dim(0), n = x.dim(1), m = w.dim(0);
  if (dy.shape() != Tensor::Shape{B, m}) {
    throw DimensionError(fmt::format("linear_backward: upstream {} expected [{},{}]",
                                     shape_str(dy.shape()), B, m));
  }
  LinearGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({m})};
  const ConstMatMap X(x.data(), static_cast<Index>(B), static_cast<Index>(n));
  const ConstMatMap W(w.data(), static_cast<Index>(m), static_cast<Index>(n));
  const ConstMatMap dY(dy.data(), static_cast<Index>(B), static_cast<Index>(m));
  MatMap(g.dx.data(), static_cast<Index>(B), static_cast<Index>(n)).noalias() = dY * W;
  MatMap(g.dw.data(), static_cast<Index>(m), static_cast<Index>(n)).noalias() = dY.transpose() * X;
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t j = 0; j < m; ++j) g.db[j] += dy[r * m + j];
  }
  return g;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "sigmoid_backward");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
  return dx;
}

Tensor upsample_nearest2(const Tensor& x) {
  require_rank(x, 5, "upsample input");
  const std::size_t B = x.dim(0), C = x.dim(1);
  const Vol in = spatial(x);
  const Vol out{2 * in.d, 2 * in.h, 2 * in.w};
  Tensor y({B, C, out.d, out.h, out.w});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* src = x.data() + bc * in.count();
    double* dst = y.data() + bc * out.count();
    for (std::size_t d = 0; d < out.d; ++d) {
      for (std::size_t h = 0; h < out.h; ++h) {
        const double* s = src + ((d / 2) * in.h + h / 2) * in.w;
        double* o = dst + (d * out.h + h) * out.w;
        for (std::size_t w = 0; w < out.w; ++w) o[w] = s[w / 2];
      }
    }
  }
  return y;
}

Tensor upsample_nearest2_backward(const Tensor& dy) {
  require_rank(dy, 5, "upsample_backward upstream");
  const std::size_t B = dy.dim(0), C = dy.dim(1);
  const Vol out = spatial(dy);
  if (out.d % 2 || out.h % 2 || out.w % 2) {
    throw DimensionError("upsample_backward: odd spatial extent");
  }
  const Vol in{out.d / 2, out.h / 2, out.w / 2};
  Tensor dx({B, C, in.d, in.h, in.w});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* src = dy.data() + bc * out.count();
    double* dst = dx.data() + bc * in.count();
    for (std::size_t d = 0; d < out.d; ++d) {
      for (std::size_t h = 0; h < out.h; ++h) {
        double* o = dst + ((d / 2) * in.h + h / 2) * in.w;
        const double* s = src + (d * out.h + h) * out.w;
        for (std::size_t w = 0; w < out.w; ++w) o[w / 2] += s[w];
      }
    }
  }
  return dx;
}

LossResult mse_loss(const Tensor& prediction, const Tensor& target, Reduction reduction) {
  require_same_shape(prediction, target, "mse_loss");
  if (prediction.empty()) throw DimensionError("mse_loss: empty tensors");
  const double denom = reduction == Reduction::mean_all
                           ? static_cast<double>(prediction.size())
                           : static_cast<double>(prediction.dim(0));
  LossResult r{0.0, Tensor(prediction.shape())};
  double sum = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double diff = prediction[i] - target[i];
    sum += diff * diff;
    r.grad[i] = 2.0 * diff / denom;
  }
  r.value = sum / denom;
  return r;
}

KldResult kld_loss(const Tensor& mu, const Tensor& logvar) {
  require_same_shape(mu, logvar, "kld_loss");
  require_rank(mu, 2, "kld_loss mu");
  const double B = static_cast<double>(mu.dim(0));
  KldResult r{0.0, Tensor(mu.shape()), Tensor(mu.shape())};
  double sum = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double ev = std::exp(logvar[i]);
    sum += 1.0 + logvar[i] - mu[i] * mu[i] - ev;
    r.grad_mu[i] = mu[i] / B;
    r.grad_logvar[i] = 0.5 * (ev - 1.0) / B;
  }
  r.value = -0.5 * sum / B;
  return r;
}

}  // namespace vspace::nn
