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
#include <string>
#include <vector>

#include "json.hpp"
#include "vspace/matrix.hpp"
#include "vspace/nn.hpp"
#include "vspace/optim.hpp"
#include "vspace/tensor.hpp"
#include "vspace/voxel.hpp"

namespace vspace {

/// Architecture of the voxel VAE. Four stride-2 encoder blocks take the
/// grid from R to R/16 per axis; the decoder mirrors them.
struct VaeConfig {
  int resolution = 32;
  int latent_dim = 128;
  std::vector<int> encoder_channels{1, 32, 64, 128, 256};
  std::vector<int> decoder_channels{256, 128, 64, 32, 16};
  int kernel = 4;
  int stride = 2;
  int padding = 1;
  double negative_slope = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  static VaeConfig paper();
  /// Half the paper's channels.
  static VaeConfig desk();
  /// R=16, channels 1-4-8-16-32, latent 8. Used by gradient checks.
  static VaeConfig tiny();

  /// Throws ConfigError.
  void validate() const;
  int bottleneck_extent() const { return resolution / 16; }
  std::size_t bottleneck_size() const;

  friend bool operator==(const VaeConfig&, const VaeConfig&) = default;
};

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);

struct TrainConfig {
  int batch_size = 32;
  int epochs = 240;
  double learning_rate = 5e-5;
  double kld_weight = 1.0;
  double split_fraction = 0.8;
  int patience = 20;  // epochs without validation improvement; 0 disables
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EncoderOutput {
  Tensor mu;      // [B, L]
  Tensor logvar;  // [B, L]
};

struct LossBreakdown {
  double total = 0.0;
  double reconstruction = 0.0;
  double kld = 0.0;
};

struct EpochLosses {
  int epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown validation;
};

/// Standard normal noise of the given shape.
Tensor sample_noise(const Tensor::Shape& shape, std::uint64_t seed);
/// z = mu + exp(logvar / 2) * eps
Tensor reparameterize(const EncoderOutput& out, const Tensor& eps);
Tensor reparameterize(const EncoderOutput& out, std::uint64_t seed);

/// Grids stacked as [B, 1, R, R, R] (x, y, z -> D, H, W), 0/1 valued.
Tensor grids_to_tensor(std::span<const VoxelGrid> grids);
Tensor grids_to_tensor(const VoxelSet& set, std::span<const std::size_t> indices);
/// Thresholds probabilities at 0.5.
VoxelGrid tensor_to_grid(const Tensor& probs, std::size_t sample);

class Vae {
 public:
  Vae(VaeConfig config, std::uint64_t seed);

  const VaeConfig& config() const { return config_; }

  /// Eval mode: running batchnorm statistics, batch-composition independent.
  EncoderOutput encode(const Tensor& grids) const;
  Tensor decode(const Tensor& z) const;

  /// Train-mode encoder pass; updates running statistics.
  EncoderOutput encode_train(const Tensor& grids);

  /// Train-mode forward and backward with z = mu + sigma * eps, eps drawn
  /// from noise_seed. Overwrites every parameter's gradient.
  LossBreakdown forward_backward(const Tensor& grids, std::uint64_t noise_seed, double kld_weight);
  /// Same objective on an explicit noise tensor.
  LossBreakdown forward_backward(const Tensor& grids, const Tensor& eps, double kld_weight);

  /// Eval-mode objective with z = mu.
  LossBreakdown evaluate(const Tensor& grids, double kld_weight) const;

  std::vector<nn::Parameter*> parameters();
  const std::vector<nn::Parameter>& parameter_list() const { return params_; }

  /// Batchnorm running means and variances.
  struct Buffer {
    std::string name;
    Tensor value;
  };
  std::vector<Buffer>& buffers() { return buffers_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }

 private:
  struct EncoderBlock {
    std::size_t conv_w, gamma, beta, short_w, short_b;
    std::size_t running_mean, running_var;
  };
  struct DecoderBlock {
    std::size_t gamma, beta, deconv_w, deconv_b, short_w, short_b;
    std::size_t running_mean, running_var;
  };
  struct Trace;

  std::size_t add_param(std::string name, Tensor::Shape shape);
  std::size_t add_buffer(std::string name, Tensor::Shape shape, double fill);
  const Tensor& p(std::size_t i) const { return params_[i].value; }
  Tensor batchnorm(const Tensor& x, std::size_t gamma, std::size_t beta, std::size_t running_mean,
                   std::size_t running_var, nn::Mode mode, nn::BatchNormCache& cache);

  EncoderOutput encode_impl(const Tensor& grids, nn::Mode mode, Trace* trace);
  EncoderOutput encode_eval(const Tensor& grids) const;
  Tensor decode_impl(const Tensor& z, nn::Mode mode, Trace* trace);
  Tensor decode_eval(const Tensor& z) const;

  VaeConfig config_;
  std::vector<nn::Parameter> params_;
  std::vector<Buffer> buffers_;
  std::vector<EncoderBlock> encoder_;
  std::vector<DecoderBlock> decoder_;
  std::size_t mu_w_, mu_b_, logvar_w_, logvar_b_, dec_in_w_, dec_in_b_, head_w_, head_b_;
};

struct DataSplit {
  std::vector<std::size_t> train;       // ascending
  std::vector<std::size_t> validation;  // ascending
};

/// Seeded shuffle; the first round(n * fraction) indices train.
DataSplit split_indices(std::size_t n, double fraction, std::uint64_t seed);

/// The split train() uses for `n` samples under `train_config`.
DataSplit training_split(std::size_t n, const TrainConfig& train_config);

struct TrainResult {
  Vae model;  // best validation epoch
  std::vector<EpochLosses> history;
  int best_epoch = 0;
  bool early_stopped = false;
  DataSplit split;
};

using EpochCallback = std::function<void(const EpochLosses&)>;

/// Mini-batch Adam on reconstruction (per-sample voxel sum of squared
/// error) plus kld_weight * KLD. A trailing batch of one sample joins the
/// previous batch. Throws NumericError on a non-finite loss.
TrainResult train(const VoxelSet& data, const TrainConfig& train_config,
                  const VaeConfig& vae_config, const EpochCallback& on_epoch = {});

/// Trains `model` in place on `indices` for train_config.epochs epochs with
/// no validation split or early stopping. Epoch shuffles and noise follow
/// train_config.seed. Returns the epoch-mean training losses.
std::vector<LossBreakdown> fit(Vae& model, const VoxelSet& data, std::span<const std::size_t> indices,
                               const TrainConfig& train_config);

/// Row i is the encoder mean of data.grids[indices[i]].
Matrix extract_features(const Vae& model, const VoxelSet& data,
                        std::span<const std::size_t> indices, std::size_t batch_size = 32);

/// Mean IoU between grids and their thresholded eval-mode reconstructions
/// through z = mu.
double reconstruction_iou(const Vae& model, const VoxelSet& data,
                          std::span<const std::size_t> indices, std::size_t batch_size = 32);

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
  std::vector<EpochLosses> history;
};

void save_checkpoint(const std::filesystem::path& path, const Vae& model, const CheckpointMeta& meta);
std::vector<std::uint8_t> encode_checkpoint(const Vae& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Vae model;
  CheckpointMeta meta;
};

/// Throws DataError on format problems and ConfigError when `expected` is
/// given and differs from the stored configuration.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const VaeConfig* expected = nullptr);
LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                                   const VaeConfig* expected = nullptr);

void write_losses_csv(const std::filesystem::path& path, const std::vector<EpochLosses>& history);
std::vector<EpochLosses> read_losses_csv(const std::filesystem::path& path);

void write_split_csv(const std::filesystem::path& path, const DataSplit& split);
DataSplit read_split_csv(const std::filesystem::path& path);

/// `id,f0,...` rows.
void write_features_csv(const std::filesystem::path& path, std::span<const std::size_t> ids,
                        const Matrix& features);
struct FeatureTable {
  std::vector<std::size_t> ids;
  Matrix features;
};
FeatureTable read_features_csv(const std::filesystem::path& path);

}  // namespace vspace
