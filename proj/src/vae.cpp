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

#include "vspace/vae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "vspace/csv.hpp"
#include "vspace/errors.hpp"
#include "vspace/rng.hpp"

namespace vspace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

VaeConfig VaeConfig::paper() { return VaeConfig{}; }

VaeConfig VaeConfig::desk() {
  VaeConfig c;
  c.encoder_channels = {1, 16, 32, 64, 128};
  c.decoder_channels = {128, 64, 32, 16, 8};
  return c;
}

VaeConfig VaeConfig::tiny() {
  VaeConfig c;
  c.resolution = 16;
  c.latent_dim = 8;
  c.encoder_channels = {1, 4, 8, 16, 32};
  c.decoder_channels = {32, 16, 8, 4, 4};
  return c;
}

void VaeConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("vae config: " + msg); };
  if (resolution < 16 || resolution % 16 != 0) {
    fail(fmt::format("resolution {} must be a positive multiple of 16 (four halvings)", resolution));
  }
  if (latent_dim < 1) fail("latent_dim must be >= 1");
  if (encoder_channels.size() != 5) fail("encoder_channels needs 5 entries (input + 4 blocks)");
  if (decoder_channels.size() != 5) fail("decoder_channels needs 5 entries (bottleneck + 4 blocks)");
  if (encoder_channels.front() != 1) fail("encoder input must have 1 channel");
  if (decoder_channels.front() != encoder_channels.back()) {
    fail(fmt::format("decoder starts at {} channels but the encoder ends at {}",
                     decoder_channels.front(), encoder_channels.back()));
  }
  for (int c : encoder_channels) {
    if (c < 1) fail("channel counts must be >= 1");
  }
  for (int c : decoder_channels) {
    if (c < 1) fail("channel counts must be >= 1");
  }
  if (stride != 2 || kernel != 2 * padding + 2) {
    fail(fmt::format("blocks must halve/double each axis (stride 2, kernel = 2*padding + 2); got "
                     "kernel {}, stride {}, padding {}",
                     kernel, stride, padding));
  }
  if (!(negative_slope >= 0.0)) fail("negative_slope must be >= 0");
  if (!(bn_eps > 0.0)) fail("bn_eps must be > 0");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in [0, 1]");
}

std::size_t VaeConfig::bottleneck_size() const {
  const auto e = static_cast<std::size_t>(bottleneck_extent());
  return static_cast<std::size_t>(encoder_channels.back()) * e * e * e;
}

void to_json(json& j, const VaeConfig& c) {
  j = json{{"resolution", c.resolution},
           {"latent_dim", c.latent_dim},
           {"encoder_channels", c.encoder_channels},
           {"decoder_channels", c.decoder_channels},
           {"kernel", c.kernel},
           {"stride", c.stride},
           {"padding", c.padding},
           {"negative_slope", c.negative_slope},
           {"bn_eps", c.bn_eps},
           {"bn_momentum", c.bn_momentum}};
}

void from_json(const json& j, VaeConfig& c) {
  j.at("resolution").get_to(c.resolution);
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("encoder_channels").get_to(c.encoder_channels);
  j.at("decoder_channels").get_to(c.decoder_channels);
  j.at("kernel").get_to(c.kernel);
  j.at("stride").get_to(c.stride);
  j.at("padding").get_to(c.padding);
  j.at("negative_slope").get_to(c.negative_slope);
  j.at("bn_eps").get_to(c.bn_eps);
  j.at("bn_momentum").get_to(c.bn_momentum);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (batch_size < 2) fail("batch_size must be >= 2 (batch normalization)");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(kld_weight >= 0.0) || !std::isfinite(kld_weight)) fail("kld_weight must be >= 0");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) fail("split_fraction must lie in (0, 1)");
  if (patience < 0) fail("patience must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},       {"epochs", c.epochs},
           {"learning_rate", c.learning_rate}, {"kld_weight", c.kld_weight},
           {"split_fraction", c.split_fraction}, {"patience", c.patience},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("epochs").get_to(c.epochs);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("kld_weight").get_to(c.kld_weight);
  j.at("split_fraction").get_to(c.split_fraction);
  j.at("patience").get_to(c.patience);
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------------------
// Sampling and tensor plumbing

Tensor sample_noise(const Tensor::Shape& shape, std::uint64_t seed) {
  Tensor eps(shape);
  Rng rng(seed);
  for (auto& v : eps.values()) v = rng.normal();
  return eps;
}

Tensor reparameterize(const EncoderOutput& out, const Tensor& eps) {
  require_same_shape(out.mu, out.logvar, "reparameterize");
  require_same_shape(out.mu, eps, "reparameterize noise");
  Tensor z(out.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = out.mu[i] + std::exp(0.5 * out.logvar[i]) * eps[i];
  }
  return z;
}

Tensor reparameterize(const EncoderOutput& out, std::uint64_t seed) {
  return reparameterize(out, sample_noise(out.mu.shape(), seed));
}

Tensor grids_to_tensor(std::span<const VoxelGrid> grids) {
  if (grids.empty()) throw DimensionError("grids_to_tensor: no grids");
  const auto R = static_cast<std::size_t>(grids.front().resolution());
  Tensor t({grids.size(), 1, R, R, R});
  for (std::size_t b = 0; b < grids.size(); ++b) {
    if (grids[b].resolution() != grids.front().resolution()) {
      throw DimensionError("grids_to_tensor: mixed resolutions");
    }
    const auto cells = grids[b].cells();
    double* dst = t.data() + b * t.stride0();
    for (std::size_t i = 0; i < cells.size(); ++i) dst[i] = cells[i];
  }
  return t;
}

Tensor grids_to_tensor(const VoxelSet& set, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("grids_to_tensor: no grids");
  const auto R = static_cast<std::size_t>(set.resolution);
  Tensor t({indices.size(), 1, R, R, R});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= set.grids.size()) {
      throw DataError(fmt::format("grid index {} out of range ({} grids)", indices[b], set.grids.size()));
    }
    const auto cells = set.grids[indices[b]].cells();
    if (cells.size() != t.stride0()) throw DimensionError("grids_to_tensor: resolution mismatch");
    double* dst = t.data() + b * t.stride0();
    for (std::size_t i = 0; i < cells.size(); ++i) dst[i] = cells[i];
  }
  return t;
}

VoxelGrid tensor_to_grid(const Tensor& probs, std::size_t sample) {
  if (probs.rank() != 5 || probs.dim(1) != 1 || probs.dim(2) != probs.dim(3) ||
      probs.dim(2) != probs.dim(4) || sample >= probs.dim(0)) {
    throw DimensionError(fmt::format("tensor_to_grid: bad shape {} for sample {}",
                                     shape_str(probs.shape()), sample));
  }
  VoxelGrid g(static_cast<int>(probs.dim(2)));
  const double* src = probs.data() + sample * probs.stride0();
  auto cells = g.cells();
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = src[i] >= 0.5 ? 1 : 0;
  return g;
}

// ---------------------------------------------------------------------------
// Model

struct Vae::Trace {
  struct Enc {
    Tensor x;
    nn::BatchNormCache bn;
    Tensor pre;
  };
  struct Dec {
    Tensor x;
    nn::BatchNormCache bn;
    Tensor normed;
    Tensor activated;
  };
  std::vector<Enc> enc;
  Tensor flat;
  std::vector<Dec> dec;
  Tensor head_in;
};

namespace {

constexpr nn::ConvGeometry kPointwise{1, 0};
constexpr nn::ConvGeometry kPointwiseStride2{2, 0};

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

// Uniform(-b, b) with b = gain * sqrt(3 / fan_in).
void fan_in_uniform(Tensor& t, std::size_t fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

}  // namespace

std::size_t Vae::add_param(std::string name, Tensor::Shape shape) {
  params_.emplace_back(std::move(name), Tensor(std::move(shape)));
  return params_.size() - 1;
}

std::size_t Vae::add_buffer(std::string name, Tensor::Shape shape, double fill) {
  buffers_.push_back({std::move(name), Tensor(std::move(shape), fill)});
  return buffers_.size() - 1;
}

Vae::Vae(VaeConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const std::size_t k = sz(c.kernel);
  const std::size_t k3 = k * k * k;
  const std::size_t e = sz(c.bottleneck_extent());
  const std::size_t L = sz(c.latent_dim);

  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t cin = sz(c.encoder_channels[i]), cout = sz(c.encoder_channels[i + 1]);
    const std::string pre = fmt::format("encoder.{}.", i);
    EncoderBlock b{};
    b.conv_w = add_param(pre + "conv.weight", {cout, cin, k, k, k});
    b.gamma = add_param(pre + "bn.weight", {cout});
    b.beta = add_param(pre + "bn.bias", {cout});
    b.short_w = add_param(pre + "shortcut.weight", {cout, cin, 1, 1, 1});
    b.short_b = add_param(pre + "shortcut.bias", {cout});
    b.running_mean = add_buffer(pre + "bn.running_mean", {cout}, 0.0);
    b.running_var = add_buffer(pre + "bn.running_var", {cout}, 1.0);
    encoder_.push_back(b);
  }
  const std::size_t flat = c.bottleneck_size();
  mu_w_ = add_param("mu.weight", {L, flat});
  mu_b_ = add_param("mu.bias", {L});
  logvar_w_ = add_param("logvar.weight", {L, flat});
  logvar_b_ = add_param("logvar.bias", {L});
  const std::size_t c0 = sz(c.decoder_channels.front());
  dec_in_w_ = add_param("decoder.input.weight", {c0 * e * e * e, L});
  dec_in_b_ = add_param("decoder.input.bias", {c0 * e * e * e});
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t cin = sz(c.decoder_channels[i]), cout = sz(c.decoder_channels[i + 1]);
    const std::string pre = fmt::format("decoder.{}.", i);
    DecoderBlock b{};
    b.gamma = add_param(pre + "bn.weight", {cin});
    b.beta = add_param(pre + "bn.bias", {cin});
    b.deconv_w = add_param(pre + "deconv.weight", {cin, cout, k, k, k});
    b.deconv_b = add_param(pre + "deconv.bias", {cout});
    b.short_w = add_param(pre + "shortcut.weight", {cout, cin, 1, 1, 1});
    b.short_b = add_param(pre + "shortcut.bias", {cout});
    b.running_mean = add_buffer(pre + "bn.running_mean", {cin}, 0.0);
    b.running_var = add_buffer(pre + "bn.running_var", {cin}, 1.0);
    decoder_.push_back(b);
  }
  const std::size_t clast = sz(c.decoder_channels.back());
  head_w_ = add_param("head.weight", {1, clast, 1, 1, 1});
  head_b_ = add_param("head.bias", {1});

  // Weights: fan-in scaled uniform in creation order from one seeded
  // stream. Convolutions feeding a leaky ReLU use the He gain
  // sqrt(2 / (1 + a^2)); every other layer uses gain 1 so the residual sums
  // keep unit scale. The logvar head starts 10x smaller. Biases and beta
  // start at 0, gamma at 1. Each output voxel of a transposed convolution
  // sees Cin * (k/s)^3 inputs.
  Rng rng(seed);
  const double he_gain = std::sqrt(2.0 / (1.0 + c.negative_slope * c.negative_slope));
  for (const auto& b : encoder_) {
    auto& w = params_[b.conv_w].value;
    fan_in_uniform(w, w.dim(1) * k3, he_gain, rng);
    params_[b.gamma].value.fill(1.0);
    auto& s = params_[b.short_w].value;
    fan_in_uniform(s, s.dim(1), 1.0, rng);
  }
  fan_in_uniform(params_[mu_w_].value, flat, 1.0, rng);
  fan_in_uniform(params_[logvar_w_].value, flat, 0.1, rng);
  fan_in_uniform(params_[dec_in_w_].value, L, 1.0, rng);
  const std::size_t ks = k / sz(c.stride);
  for (const auto& b : decoder_) {
    params_[b.gamma].value.fill(1.0);
    auto& w = params_[b.deconv_w].value;
    fan_in_uniform(w, w.dim(0) * ks * ks * ks, 1.0, rng);
    auto& s = params_[b.short_w].value;
    fan_in_uniform(s, s.dim(1), 1.0, rng);
  }
  fan_in_uniform(params_[head_w_].value, clast, 1.0, rng);
}

std::vector<nn::Parameter*> Vae::parameters() {
  std::vector<nn::Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

namespace {

void require_grids(const Tensor& x, int R) {
  const auto r = static_cast<std::size_t>(R);
  if (x.rank() != 5 || x.dim(0) < 1 || x.dim(1) != 1 || x.dim(2) != r || x.dim(3) != r ||
      x.dim(4) != r) {
    throw DimensionError(fmt::format("expected grids [B,1,{},{},{}], got {}", R, R, R,
                                     shape_str(x.shape())));
  }
}

}  // namespace

Tensor Vae::batchnorm(const Tensor& x, std::size_t gamma, std::size_t beta, std::size_t running_mean,
                      std::size_t running_var, nn::Mode mode, nn::BatchNormCache& cache) {
  const nn::BatchNormOptions opt{config_.bn_eps, config_.bn_momentum};
  if (mode == nn::Mode::train) {
    return nn::batchnorm3d_train(x, p(gamma), p(beta), opt, buffers_[running_mean].value,
                                 buffers_[running_var].value, cache);
  }
  return nn::batchnorm3d_eval(x, p(gamma), p(beta), opt, buffers_[running_mean].value,
                              buffers_[running_var].value);
}

EncoderOutput Vae::encode_impl(const Tensor& grids, nn::Mode mode, Trace* trace) {
  require_grids(grids, config_.resolution);
  const nn::ConvGeometry geom{config_.stride, config_.padding};
  const std::size_t B = grids.dim(0);
  Tensor h = grids;
  for (const auto& blk : encoder_) {
    nn::BatchNormCache cache;
    Tensor pre = batchnorm(nn::conv3d(h, p(blk.conv_w), Tensor(), geom), blk.gamma, blk.beta,
                           blk.running_mean, blk.running_var, mode, cache);
    add_inplace(pre, nn::conv3d(h, p(blk.short_w), p(blk.short_b), kPointwiseStride2));
    Tensor y = nn::leaky_relu(pre, config_.negative_slope);
    if (trace) trace->enc.push_back({std::move(h), std::move(cache), std::move(pre)});
    h = std::move(y);
  }
  Tensor flat = std::move(h).reshaped({B, config_.bottleneck_size()});
  EncoderOutput out{nn::linear(flat, p(mu_w_), p(mu_b_)),
                    nn::linear(flat, p(logvar_w_), p(logvar_b_))};
  if (trace) trace->flat = std::move(flat);
  return out;
}

Tensor Vae::decode_impl(const Tensor& z, nn::Mode mode, Trace* trace) {
  const auto L = static_cast<std::size_t>(config_.latent_dim);
  if (z.rank() != 2 || z.dim(1) != L || z.dim(0) < 1) {
    throw DimensionError(fmt::format("expected latents [B,{}], got {}", L, shape_str(z.shape())));
  }
  const nn::ConvGeometry geom{config_.stride, config_.padding};
  const std::size_t B = z.dim(0);
  const auto e = static_cast<std::size_t>(config_.bottleneck_extent());
  Tensor h = nn::linear(z, p(dec_in_w_), p(dec_in_b_))
                 .reshaped({B, static_cast<std::size_t>(config_.decoder_channels.front()), e, e, e});
  for (const auto& blk : decoder_) {
    nn::BatchNormCache cache;
    Tensor normed =
        batchnorm(h, blk.gamma, blk.beta, blk.running_mean, blk.running_var, mode, cache);
    Tensor activated = nn::leaky_relu(normed, config_.negative_slope);
    Tensor y = nn::conv_transpose3d(activated, p(blk.deconv_w), p(blk.deconv_b), geom);
    // The pointwise projection commutes with nearest upsampling; projecting
    // first does the same arithmetic on 8x fewer voxels.
    add_inplace(y, nn::upsample_nearest2(nn::conv3d(h, p(blk.short_w), p(blk.short_b), kPointwise)));
    if (trace) {
      trace->dec.push_back({std::move(h), std::move(cache), std::move(normed), std::move(activated)});
    }
    h = std::move(y);
  }
  Tensor probs = nn::sigmoid(nn::conv3d(h, p(head_w_), p(head_b_), kPointwise));
  if (trace) trace->head_in = std::move(h);
  return probs;
}

EncoderOutput Vae::encode(const Tensor& grids) const { return encode_eval(grids); }
Tensor Vae::decode(const Tensor& z) const { return decode_eval(z); }

// Eval mode never touches mutable state, so the const entry points can share
// the implementation.
EncoderOutput Vae::encode_eval(const Tensor& grids) const {
  return const_cast<Vae*>(this)->encode_impl(grids, nn::Mode::eval, nullptr);
}

Tensor Vae::decode_eval(const Tensor& z) const {
  return const_cast<Vae*>(this)->decode_impl(z, nn::Mode::eval, nullptr);
}

EncoderOutput Vae::encode_train(const Tensor& grids) {
  return encode_impl(grids, nn::Mode::train, nullptr);
}

LossBreakdown Vae::evaluate(const Tensor& grids, double kld_weight) const {
  const auto enc = encode(grids);
  const auto probs = decode(enc.mu);
  const double rec = nn::mse_loss(probs, grids, nn::Reduction::sum_per_sample_mean_batch).value;
  const double kld = nn::kld_loss(enc.mu, enc.logvar).value;
  return {rec + kld_weight * kld, rec, kld};
}

LossBreakdown Vae::forward_backward(const Tensor& grids, std::uint64_t noise_seed,
                                    double kld_weight) {
  const Tensor eps =
      sample_noise({grids.dim(0), static_cast<std::size_t>(config_.latent_dim)}, noise_seed);
  return forward_backward(grids, eps, kld_weight);
}

LossBreakdown Vae::forward_backward(const Tensor& grids, const Tensor& eps, double kld_weight) {
  Trace tr;
  const EncoderOutput enc = encode_impl(grids, nn::Mode::train, &tr);
  const Tensor z = reparameterize(enc, eps);
  const Tensor probs = decode_impl(z, nn::Mode::train, &tr);
  const auto rec = nn::mse_loss(probs, grids, nn::Reduction::sum_per_sample_mean_batch);
  const auto kl = nn::kld_loss(enc.mu, enc.logvar);
  const LossBreakdown loss{rec.value + kld_weight * kl.value, rec.value, kl.value};

  const nn::ConvGeometry geom{config_.stride, config_.padding};
  const double slope = config_.negative_slope;
  auto set = [&](std::size_t i, Tensor&& g) { params_[i].grad = std::move(g); };

  // Decoder, head first.
  Tensor g = nn::sigmoid_backward(probs, rec.grad);
  {
    auto hg = nn::conv3d_backward(tr.head_in, p(head_w_), g, kPointwise);
    set(head_w_, std::move(hg.dw));
    set(head_b_, std::move(hg.db));
    g = std::move(hg.dx);
  }
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    const auto& blk = decoder_[i];
    auto& t = tr.dec[i];
    auto cg = nn::conv_transpose3d_backward(t.activated, p(blk.deconv_w), g, geom);
    set(blk.deconv_w, std::move(cg.dw));
    set(blk.deconv_b, std::move(cg.db));
    auto bg = nn::batchnorm3d_backward(nn::leaky_relu_backward(t.normed, cg.dx, slope),
                                       p(blk.gamma), t.bn);
    set(blk.gamma, std::move(bg.dgamma));
    set(blk.beta, std::move(bg.dbeta));
    auto sg = nn::conv3d_backward(t.x, p(blk.short_w), nn::upsample_nearest2_backward(g), kPointwise);
    set(blk.short_w, std::move(sg.dw));
    set(blk.short_b, std::move(sg.db));
    add_inplace(bg.dx, sg.dx);
    g = std::move(bg.dx);
  }
  const std::size_t B = z.dim(0);
  auto lg = nn::linear_backward(z, p(dec_in_w_), std::move(g).reshaped({B, p(dec_in_b_).size()}));
  set(dec_in_w_, std::move(lg.dw));
  set(dec_in_b_, std::move(lg.db));

  // Through z = mu + exp(logvar / 2) * eps, plus the KLD term.
  Tensor dmu(enc.mu.shape()), dlogvar(enc.mu.shape());
  for (std::size_t j = 0; j < dmu.size(); ++j) {
    dmu[j] = lg.dx[j] + kld_weight * kl.grad_mu[j];
    dlogvar[j] = lg.dx[j] * eps[j] * 0.5 * std::exp(0.5 * enc.logvar[j]) +
                 kld_weight * kl.grad_logvar[j];
  }
  auto mg = nn::linear_backward(tr.flat, p(mu_w_), dmu);
  auto vg = nn::linear_backward(tr.flat, p(logvar_w_), dlogvar);
  set(mu_w_, std::move(mg.dw));
  set(mu_b_, std::move(mg.db));
  set(logvar_w_, std::move(vg.dw));
  set(logvar_b_, std::move(vg.db));
  add_inplace(mg.dx, vg.dx);
  const auto e = static_cast<std::size_t>(config_.bottleneck_extent());
  g = std::move(mg.dx).reshaped({B, static_cast<std::size_t>(config_.encoder_channels.back()), e, e, e});

  for (std::size_t i = encoder_.size(); i-- > 0;) {
    const auto& blk = encoder_[i];
    auto& t = tr.enc[i];
    const Tensor dpre = nn::leaky_relu_backward(t.pre, g, slope);
    auto bg = nn::batchnorm3d_backward(dpre, p(blk.gamma), t.bn);
    set(blk.gamma, std::move(bg.dgamma));
    set(blk.beta, std::move(bg.dbeta));
    auto cg = nn::conv3d_backward(t.x, p(blk.conv_w), bg.dx, geom, /*has_bias=*/false);
    set(blk.conv_w, std::move(cg.dw));
    auto sg = nn::conv3d_backward(t.x, p(blk.short_w), dpre, kPointwiseStride2);
    set(blk.short_w, std::move(sg.dw));
    set(blk.short_b, std::move(sg.db));
    if (i > 0) {
      add_inplace(cg.dx, sg.dx);
      g = std::move(cg.dx);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training

DataSplit split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  if (n_train == 0 || n_train >= n) {
    throw ConfigError(fmt::format("split of {} items at {} leaves an empty side", n, fraction));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  DataSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

DataSplit training_split(std::size_t n, const TrainConfig& tc) {
  return split_indices(n, tc.split_fraction, derive_seed(tc.seed, 1));
}

namespace {

struct Range {
  std::size_t begin, end;
};

std::vector<Range> make_batches(std::size_t n, std::size_t batch) {
  std::vector<Range> out;
  for (std::size_t b = 0; b < n; b += batch) out.push_back({b, std::min(n, b + batch)});
  if (out.size() > 1 && out.back().end - out.back().begin == 1) {
    out.pop_back();
    out.back().end = n;
  }
  return out;
}

LossBreakdown weighted(const LossBreakdown& acc, std::size_t n) {
  const double d = static_cast<double>(n);
  return {acc.total / d, acc.reconstruction / d, acc.kld / d};
}

void accumulate(LossBreakdown& acc, const LossBreakdown& l, std::size_t n) {
  const double w = static_cast<double>(n);
  acc.total += w * l.total;
  acc.reconstruction += w * l.reconstruction;
  acc.kld += w * l.kld;
}

LossBreakdown evaluate_subset(const Vae& model, const VoxelSet& data,
                              std::span<const std::size_t> idx, std::size_t batch, double kld_weight) {
  LossBreakdown acc;
  for (const auto r : make_batches(idx.size(), batch)) {
    const auto sub = idx.subspan(r.begin, r.end - r.begin);
    accumulate(acc, model.evaluate(grids_to_tensor(data, sub), kld_weight), sub.size());
  }
  return weighted(acc, idx.size());
}

LossBreakdown run_epoch(Vae& model, const std::vector<nn::Parameter*>& params, nn::AdamState& adam,
                        const VoxelSet& data, std::vector<std::size_t>& order, const TrainConfig& tc,
                        std::uint64_t epoch_base, int epoch) {
  Rng rng(derive_seed(epoch_base, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  LossBreakdown acc;
  const auto batches = make_batches(order.size(), static_cast<std::size_t>(tc.batch_size));
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const auto sub = std::span<const std::size_t>(order).subspan(batches[bi].begin,
                                                                 batches[bi].end - batches[bi].begin);
    const auto loss = model.forward_backward(grids_to_tensor(data, sub), rng.next_u64(), tc.kld_weight);
    if (!std::isfinite(loss.total)) {
      throw NumericError(fmt::format("non-finite training loss at epoch {}, batch {} "
                                     "(reconstruction {}, kld {})",
                                     epoch, bi + 1, loss.reconstruction, loss.kld));
    }
    try {
      nn::adam_step(params, adam);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("epoch {}, batch {}: {}", epoch, bi + 1, e.what()));
    }
    accumulate(acc, loss, sub.size());
  }
  return weighted(acc, order.size());
}

}  // namespace

TrainResult train(const VoxelSet& data, const TrainConfig& tc, const VaeConfig& vc,
                  const EpochCallback& on_epoch) {
  tc.validate();
  vc.validate();
  if (data.resolution != vc.resolution) {
    throw ConfigError(fmt::format("dataset resolution {} does not match model resolution {}",
                                  data.resolution, vc.resolution));
  }
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  if (data.grids.size() < 2 * bs) {
    throw ConfigError(fmt::format("training needs at least {} grids (2 batches), got {}", 2 * bs,
                                  data.grids.size()));
  }

  DataSplit split = training_split(data.grids.size(), tc);
  Vae model(vc, derive_seed(tc.seed, 2));
  nn::AdamState adam;
  adam.options.learning_rate = tc.learning_rate;
  const auto params = model.parameters();

  TrainResult result{model, {}, 0, false, split};
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<std::size_t> order = split.train;
  const std::uint64_t epoch_base = derive_seed(tc.seed, 3);

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const LossBreakdown mean_train = run_epoch(model, params, adam, data, order, tc, epoch_base, epoch);
    EpochLosses el{epoch, mean_train,
                   evaluate_subset(model, data, split.validation, bs, tc.kld_weight)};
    result.history.push_back(el);
    if (on_epoch) on_epoch(el);
    if (el.validation.total < best) {
      best = el.validation.total;
      result.model = model;
      result.best_epoch = epoch;
      stale = 0;
    } else if (tc.patience > 0 && ++stale >= tc.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (result.best_epoch == 0) {
    throw NumericError("validation loss never became finite");
  }
  return result;
}

std::vector<LossBreakdown> fit(Vae& model, const VoxelSet& data, std::span<const std::size_t> indices,
                               const TrainConfig& tc) {
  tc.validate();
  if (data.resolution != model.config().resolution) {
    throw ConfigError(fmt::format("dataset resolution {} does not match model resolution {}",
                                  data.resolution, model.config().resolution));
  }
  if (indices.size() < 2) throw ConfigError("fit needs at least 2 grids");
  for (std::size_t i : indices) {
    if (i >= data.grids.size()) throw DimensionError(fmt::format("fit: index {} out of range", i));
  }
  nn::AdamState adam;
  adam.options.learning_rate = tc.learning_rate;
  const auto params = model.parameters();
  std::vector<std::size_t> order(indices.begin(), indices.end());
  const std::uint64_t epoch_base = derive_seed(tc.seed, 3);
  std::vector<LossBreakdown> history;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    history.push_back(run_epoch(model, params, adam, data, order, tc, epoch_base, epoch));
  }
  return history;
}

Matrix extract_features(const Vae& model, const VoxelSet& data, std::span<const std::size_t> indices,
                        std::size_t batch_size) {
  const auto L = static_cast<std::size_t>(model.config().latent_dim);
  Matrix out(indices.size(), L);
  for (const auto r : make_batches(indices.size(), std::max<std::size_t>(batch_size, 1))) {
    const auto sub = indices.subspan(r.begin, r.end - r.begin);
    const auto enc = model.encode(grids_to_tensor(data, sub));
    std::copy(enc.mu.values().begin(), enc.mu.values().end(), out.data.begin() + r.begin * L);
  }
  return out;
}

double reconstruction_iou(const Vae& model, const VoxelSet& data, std::span<const std::size_t> indices,
                          std::size_t batch_size) {
  if (indices.empty()) throw DataError("reconstruction_iou: empty subset");
  double sum = 0.0;
  for (const auto r : make_batches(indices.size(), std::max<std::size_t>(batch_size, 1))) {
    const auto sub = indices.subspan(r.begin, r.end - r.begin);
    const auto probs = model.decode(model.encode(grids_to_tensor(data, sub)).mu);
    for (std::size_t b = 0; b < sub.size(); ++b) {
      sum += iou(tensor_to_grid(probs, b), data.grids[sub[b]]);
    }
  }
  return sum / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------
// Checkpoint file

namespace {

constexpr char kMagic[4] = {'V', 'A', 'E', 'C'};
constexpr int kCheckpointVersion = 1;

json history_to_json(const std::vector<EpochLosses>& h) {
  json arr = json::array();
  for (const auto& e : h) {
    arr.push_back({e.epoch, e.train.total, e.train.reconstruction, e.train.kld, e.validation.total,
                   e.validation.reconstruction, e.validation.kld});
  }
  return arr;
}

std::vector<EpochLosses> history_from_json(const json& arr) {
  std::vector<EpochLosses> out;
  for (const auto& r : arr) {
    if (!r.is_array() || r.size() != 7) throw DataError("checkpoint: malformed loss history row");
    out.push_back({r[0].get<int>(),
                   {r[1].get<double>(), r[2].get<double>(), r[3].get<double>()},
                   {r[4].get<double>(), r[5].get<double>(), r[6].get<double>()}});
  }
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Vae& model, const CheckpointMeta& meta) {
  struct Entry {
    const std::string* name;
    const Tensor* value;
  };
  std::vector<Entry> entries;
  for (const auto& p : model.parameter_list()) entries.push_back({&p.name, &p.value});
  for (const auto& b : model.buffers()) entries.push_back({&b.name, &b.value});

  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& e : entries) {
    const std::size_t len = e.value->size() * 4;
    manifest.push_back({{"name", *e.name},
                        {"shape", e.value->shape()},
                        {"dtype", "f32"},
                        {"offset", offset},
                        {"length", len}});
    offset += len;
  }
  const json header{{"format_version", kCheckpointVersion},
                    {"config", model.config()},
                    {"tensors", manifest},
                    {"metadata", {{"epoch", meta.epoch}, {"seed", meta.seed}, {"history", history_to_json(meta.history)}}}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& e : entries) {
    for (double v : e.value->values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Vae& model, const CheckpointMeta& meta) {
  const auto bytes = encode_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("write failed for {}", path.string()));
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const VaeConfig* expected) {
  if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw DataError("checkpoint: bad magic (expected VAEC)");
  }
  const std::size_t hlen = get_u32(bytes, 4);
  if (8 + hlen > bytes.size()) throw DataError("checkpoint: truncated header");
  json header;
  VaeConfig config;
  CheckpointMeta meta;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      throw DataError(fmt::format("checkpoint: unsupported version {}", header.at("format_version").dump()));
    }
    config = header.at("config").get<VaeConfig>();
    const auto& m = header.at("metadata");
    meta.epoch = m.at("epoch").get<int>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.history = history_from_json(m.at("history"));
  } catch (const json::exception& e) {
    throw DataError(fmt::format("checkpoint: malformed header: {}", e.what()));
  }
  if (expected && !(*expected == config)) {
    throw ConfigError(fmt::format("checkpoint config {} does not match expected {}",
                                  json(config).dump(), json(*expected).dump()));
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw DataError(fmt::format("checkpoint: {}", e.what()));
  }

  Vae model(config, 0);
  std::vector<std::pair<const std::string*, Tensor*>> slots;
  for (auto* p : model.parameters()) slots.emplace_back(&p->name, &p->value);
  for (auto& b : model.buffers()) slots.emplace_back(&b.name, &b.value);

  const std::span<const std::uint8_t> blob = bytes.subspan(8 + hlen);
  std::vector<bool> seen(slots.size(), false);
  std::size_t covered = 0;
  try {
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto it = std::find_if(slots.begin(), slots.end(), [&](auto& s) { return *s.first == name; });
      if (it == slots.end()) throw DataError(fmt::format("checkpoint: unknown tensor '{}'", name));
      const auto slot = static_cast<std::size_t>(it - slots.begin());
      if (seen[slot]) throw DataError(fmt::format("checkpoint: duplicate tensor '{}'", name));
      seen[slot] = true;
      Tensor& dst = *it->second;
      if (t.at("dtype").get<std::string>() != "f32" ||
          t.at("shape").get<Tensor::Shape>() != dst.shape()) {
        throw DataError(fmt::format("checkpoint: tensor '{}' has dtype/shape {} {}, expected f32 {}",
                                    name, t.at("dtype").dump(), t.at("shape").dump(),
                                    shape_str(dst.shape())));
      }
      const auto off = t.at("offset").get<std::size_t>();
      const auto len = t.at("length").get<std::size_t>();
      if (len != dst.size() * 4 || off > blob.size() || len > blob.size() - off) {
        throw DataError(fmt::format("checkpoint: tensor '{}' extent out of range (truncated file?)", name));
      }
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = std::bit_cast<float>(get_u32(blob, off + 4 * i));
      }
      covered += len;
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("checkpoint: malformed tensor manifest: {}", e.what()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!seen[i]) throw DataError(fmt::format("checkpoint: tensor '{}' missing", *slots[i].first));
  }
  if (covered != blob.size()) throw DataError("checkpoint: payload size disagrees with manifest");
  return {std::move(model), std::move(meta)};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const VaeConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint {}", path.string()));
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return decode_checkpoint(bytes, expected);
}

// ---------------------------------------------------------------------------
// CSV artifacts

void write_losses_csv(const std::filesystem::path& path, const std::vector<EpochLosses>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "epoch,train_total,train_recon,train_kld,val_total,val_recon,val_kld\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << csv::format_real(e.train.total) << ','
        << csv::format_real(e.train.reconstruction) << ',' << csv::format_real(e.train.kld) << ','
        << csv::format_real(e.validation.total) << ',' << csv::format_real(e.validation.reconstruction)
        << ',' << csv::format_real(e.validation.kld) << '\n';
  }
}

std::vector<EpochLosses> read_losses_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"epoch", "train_total", "train_recon", "train_kld", "val_total",
                                  "val_recon", "val_kld"});
  std::vector<EpochLosses> out;
  for (const auto& r : t.rows) {
    out.push_back({static_cast<int>(r[0]), {r[1], r[2], r[3]}, {r[4], r[5], r[6]}});
  }
  return out;
}

void write_split_csv(const std::filesystem::path& path, const DataSplit& split) {
  std::vector<int> role(split.train.size() + split.validation.size(), -1);
  for (auto i : split.train) role.at(i) = 0;
  for (auto i : split.validation) role.at(i) = 1;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "id,is_test\n";
  for (std::size_t i = 0; i < role.size(); ++i) {
    if (role[i] < 0) throw DataError("split is not exhaustive");
    out << i << ',' << role[i] << '\n';
  }
}

DataSplit read_split_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"id", "is_test"});
  DataSplit s;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i][0] != static_cast<double>(i) || (t.rows[i][1] != 0.0 && t.rows[i][1] != 1.0)) {
      throw DataError(fmt::format("{}: malformed row {}", path.string(), i));
    }
    (t.rows[i][1] == 0.0 ? s.train : s.validation).push_back(i);
  }
  return s;
}

void write_features_csv(const std::filesystem::path& path, std::span<const std::size_t> ids,
                        const Matrix& features) {
  if (ids.size() != features.rows) throw DimensionError("write_features_csv: id count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "id";
  for (std::size_t j = 0; j < features.cols; ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < features.rows; ++i) {
    out << ids[i];
    for (double v : features.row(i)) out << ',' << csv::format_real(v);
    out << '\n';
  }
}

FeatureTable read_features_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  if (t.header.empty() || t.header[0] != "id") throw DataError(fmt::format("{}: first column must be id", path.string()));
  for (std::size_t j = 1; j < t.header.size(); ++j) {
    if (t.header[j] != fmt::format("f{}", j - 1)) {
      throw DataError(fmt::format("{}: unexpected column '{}'", path.string(), t.header[j]));
    }
  }
  FeatureTable ft;
  ft.features = Matrix(t.rows.size(), t.header.size() - 1);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double id = t.rows[i][0];
    if (id < 0 || id != std::floor(id)) throw DataError(fmt::format("{}: bad id in row {}", path.string(), i));
    ft.ids.push_back(static_cast<std::size_t>(id));
    std::copy(t.rows[i].begin() + 1, t.rows[i].end(), ft.features.row(i).begin());
  }
  return ft;
}

}  // namespace vspace
