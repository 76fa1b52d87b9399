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

#include "vspace/tensor.hpp"

// Forward and backward kernels for the layer vocabulary of the voxel VAE.
//
// Every function is pure over its inputs except batchnorm3d_train, which
// updates the running statistics it is handed. Convolutions are lowered to
// vol2col + GEMM; per output element the reduction order is fixed, and the
// batch loop only ever splits work by sample, so results do not depend on
// the thread count.

namespace vspace::nn {

enum class Mode { train, eval };

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
};

/// floor((in + 2p - k) / s) + 1; DimensionError if < 1.
std::size_t conv_out_size(std::size_t in, std::size_t kernel, ConvGeometry g);

struct ConvGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;  // empty when the layer has no bias
};

/// x [B,Cin,D,H,W], w [Cout,Cin,k,k,k], bias [Cout] or empty.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry g);
ConvGrads conv3d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g,
                          bool has_bias = true);

/// x [B,Cin,D,H,W], w [Cin,Cout,k,k,k] -> [B,Cout,s(D-1)+k-2p,...].
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeometry g);
ConvGrads conv_transpose3d_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                                    ConvGeometry g, bool has_bias = true);

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;  // per channel
};

/// Batch statistics over every axis but 1 (biased variance). Updates
/// running = (1 - momentum) * running + momentum * batch.
Tensor batchnorm3d_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const BatchNormOptions& opt, Tensor& running_mean, Tensor& running_var,
                         BatchNormCache& cache);

Tensor batchnorm3d_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const BatchNormOptions& opt, const Tensor& running_mean,
                        const Tensor& running_var);

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};

BatchNormGrads batchnorm3d_backward(const Tensor& dy, const Tensor& gamma,
                                    const BatchNormCache& cache);

Tensor leaky_relu(const Tensor& x, double negative_slope);
/// Slope 1 where x >= 0, negative_slope elsewhere.
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, double negative_slope);

struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};

/// x [B,n], w [m,n], b [m] -> [B,m].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

Tensor sigmoid(const Tensor& x);
/// Uses the forward output y.
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);

/// Nearest-neighbour x2 upsampling of the three spatial axes.
Tensor upsample_nearest2(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& dy);

enum class Reduction {
  mean_all,                   // mean over every element
  sum_per_sample_mean_batch,  // sum within a sample, mean over axis 0
};

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d value / d prediction
};

LossResult mse_loss(const Tensor& prediction, const Tensor& target, Reduction reduction);

struct KldResult {
  double value = 0.0;
  Tensor grad_mu;
  Tensor grad_logvar;
};

/// Batch mean of -0.5 * sum(1 + logvar - mu^2 - exp(logvar)), i.e. the KL
/// divergence of N(mu, exp(logvar)) from N(0, I).
KldResult kld_loss(const Tensor& mu, const Tensor& logvar);

}  // namespace vspace::nn
