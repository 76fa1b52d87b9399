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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "svg_check.hpp"
#include "test_util.hpp"
#include "vspace/csv.hpp"
#include "vspace/dbscan.hpp"
#include "vspace/errors.hpp"
#include "vspace/explorer.hpp"
#include "vspace/nn.hpp"
#include "vspace/pipeline.hpp"
#include "vspace/tsne.hpp"
#include "vspace/vae.hpp"

namespace {

namespace fs = std::filesystem;
using namespace vspace;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::string tier;  // PRIMARY or SECONDARY
  std::function<Outcome()> run;
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void quiet(const std::string&) {}

void progress(const std::string& line) { std::fprintf(stderr, "  | %s\n", line.c_str()); }

// Records `what` as a failure unless `ok`.
void check(std::vector<std::string>& errors, bool ok, const std::string& what) {
  if (!ok) errors.push_back(what);
}

Outcome verdict(const std::vector<std::string>& errors, std::string detail) {
  if (errors.empty()) return {true, std::move(detail)};
  std::string all;
  for (const auto& e : errors) all += (all.empty() ? "" : "; ") + e;
  return {false, detail + " | " + all};
}

// ---------------------------------------------------------------------------

Outcome dataset_contract(const fs::path& work) {
  Clock clock;
  std::vector<std::string> errors;
  const auto c = pipeline::preset("paper");
  const auto params = generate_dataset(c.count, pipeline::dataset_seed(c), c.ranges);
  const auto file = work / "paper_params.csv";
  write_params_csv(file, params);
  const auto table = csv::read(file, {"id", "height", "base_width", "top_width", "ctrl_r", "ctrl_h"});
  const std::size_t rows = table.rows.size(), cols = table.header.size() - 1;
  check(errors, rows == 15000 && cols == 5, fmt::format("parameter matrix is [{}, {}]", rows, cols));
  for (const auto& p : params) {
    try {
      validate(p);
    } catch (const Error& e) {
      errors.push_back(e.what());
      break;
    }
  }
  const auto split = training_split(params.size(), c.train);
  std::set<std::size_t> all(split.train.begin(), split.train.end());
  all.insert(split.validation.begin(), split.validation.end());
  check(errors, split.train.size() == 12000 && split.validation.size() == 3000,
        fmt::format("split {}/{}", split.train.size(), split.validation.size()));
  check(errors, all.size() == 15000 && *all.rbegin() == 14999, "split is not a partition of the ids");
  const double t = clock.seconds();
  check(errors, t < 60, fmt::format("took {:.1f}s", t));
  fs::remove(file);
  return verdict(errors, fmt::format("[{}, {}], split {}/{}, {:.1f}s", rows, cols, split.train.size(),
                                     split.validation.size(), t));
}

Outcome voxelizer_oracle() {
  Clock clock;
  std::vector<std::string> errors;
  Rng rng(101);
  int mismatched = 0;
  for (int n = 0; n < 50; ++n) {
    const auto p = sample_params(rng.next_u64(), ParamRanges{});
    if (voxelize(p, 16) != testing::oracle_voxelize(p, 16)) ++mismatched;
  }
  check(errors, mismatched == 0, fmt::format("{} of 50 vessels differ from the oracle", mismatched));
  int asymmetric = 0;
  for (int n = 0; n < 200; ++n) {
    const auto g = voxelize(sample_params(rng.next_u64(), ParamRanges{}), 32);
    bool ok = true;
    for (int x = 0; x < 32 && ok; ++x) {
      for (int y = 0; y < 32 && ok; ++y) {
        for (int z = 0; z < 32 && ok; ++z) {
          const bool v = g.at(x, y, z);
          ok = v == g.at(31 - x, y, z) && v == g.at(x, y, 31 - z) && v == g.at(z, y, x);
        }
      }
    }
    asymmetric += !ok;
  }
  check(errors, asymmetric == 0, fmt::format("{} of 200 vessels break a symmetry", asymmetric));
  const double t = clock.seconds();
  check(errors, t < 120, fmt::format("took {:.1f}s", t));
  return verdict(errors, fmt::format("50/50 oracle matches at R=16, 200 symmetric at R=32, {:.1f}s", t));
}

Outcome gradient_suite() {
  using testing::dot;
  using testing::max_rel_error;
  using testing::numeric_grad;
  using testing::random_tensor;
  Clock clock;
  Rng rng(202);
  std::map<std::string, double> worst;
  const auto record = [&](const std::string& layer, double e) { worst[layer] = std::max(worst[layer], e); };

  {
    auto x = random_tensor({2, 2, 4, 4, 4}, rng);
    auto w = random_tensor({3, 2, 4, 4, 4}, rng, 0.3);
    auto b = random_tensor({3}, rng);
    const nn::ConvGeometry g{2, 1};
    const auto dy = random_tensor(nn::conv3d(x, w, b, g).shape(), rng);
    const auto grads = nn::conv3d_backward(x, w, dy, g);
    auto loss = [&] { return dot(nn::conv3d(x, w, b, g), dy); };
    record("conv3d", max_rel_error(grads.dx, numeric_grad(loss, x)));
    record("conv3d", max_rel_error(grads.dw, numeric_grad(loss, w)));
    record("conv3d", max_rel_error(grads.db, numeric_grad(loss, b)));
  }
  {
    auto x = random_tensor({2, 3, 2, 2, 2}, rng);
    auto w = random_tensor({3, 2, 4, 4, 4}, rng, 0.3);
    auto b = random_tensor({2}, rng);
    const nn::ConvGeometry g{2, 1};
    const auto dy = random_tensor(nn::conv_transpose3d(x, w, b, g).shape(), rng);
    const auto grads = nn::conv_transpose3d_backward(x, w, dy, g);
    auto loss = [&] { return dot(nn::conv_transpose3d(x, w, b, g), dy); };
    record("conv_transpose3d", max_rel_error(grads.dx, numeric_grad(loss, x)));
    record("conv_transpose3d", max_rel_error(grads.dw, numeric_grad(loss, w)));
    record("conv_transpose3d", max_rel_error(grads.db, numeric_grad(loss, b)));
  }
  {
    auto x = random_tensor({3, 2, 2, 2, 2}, rng, 2.0);
    auto gamma = random_tensor({2}, rng);
    auto beta = random_tensor({2}, rng);
    const auto dy = random_tensor(x.shape(), rng);
    Tensor rm({2}), rv({2}, 1.0);
    nn::BatchNormCache cache;
    nn::batchnorm3d_train(x, gamma, beta, {}, rm, rv, cache);
    const auto grads = nn::batchnorm3d_backward(dy, gamma, cache);
    auto loss = [&] {
      Tensor m({2}), v({2}, 1.0);
      nn::BatchNormCache c;
      return dot(nn::batchnorm3d_train(x, gamma, beta, {}, m, v, c), dy);
    };
    record("batchnorm3d", max_rel_error(grads.dx, numeric_grad(loss, x)));
    record("batchnorm3d", max_rel_error(grads.dgamma, numeric_grad(loss, gamma)));
    record("batchnorm3d", max_rel_error(grads.dbeta, numeric_grad(loss, beta)));
  }
  {
    auto x = random_tensor({64}, rng);
    for (auto& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
    const auto dy = random_tensor({64}, rng);
    auto loss = [&] { return dot(nn::leaky_relu(x, 0.2), dy); };
    record("leaky_relu", max_rel_error(nn::leaky_relu_backward(x, dy, 0.2), numeric_grad(loss, x)));
  }
  {
    auto x = random_tensor({3, 5}, rng);
    auto w = random_tensor({2, 5}, rng);
    auto b = random_tensor({2}, rng);
    const auto dy = random_tensor({3, 2}, rng);
    const auto g = nn::linear_backward(x, w, dy);
    auto loss = [&] { return dot(nn::linear(x, w, b), dy); };
    record("linear", max_rel_error(g.dx, numeric_grad(loss, x)));
    record("linear", max_rel_error(g.dw, numeric_grad(loss, w)));
    record("linear", max_rel_error(g.db, numeric_grad(loss, b)));
  }
  {
    auto x = random_tensor({20}, rng);
    const auto dy = random_tensor({20}, rng);
    auto loss = [&] { return dot(nn::sigmoid(x), dy); };
    record("sigmoid", max_rel_error(nn::sigmoid_backward(nn::sigmoid(x), dy), numeric_grad(loss, x)));
    auto u = random_tensor({1, 2, 2, 3, 2}, rng);
    const auto du = random_tensor(nn::upsample_nearest2(u).shape(), rng);
    auto up = [&] { return dot(nn::upsample_nearest2(u), du); };
    record("upsample", max_rel_error(nn::upsample_nearest2_backward(du), numeric_grad(up, u)));
  }
  {
    for (auto red : {nn::Reduction::mean_all, nn::Reduction::sum_per_sample_mean_batch}) {
      auto p = random_tensor({3, 4}, rng);
      const auto target = random_tensor({3, 4}, rng);
      auto loss = [&] { return nn::mse_loss(p, target, red).value; };
      record("losses", max_rel_error(nn::mse_loss(p, target, red).grad, numeric_grad(loss, p)));
    }
    auto mu = random_tensor({3, 4}, rng);
    auto lv = random_tensor({3, 4}, rng, 0.5);
    const auto r = nn::kld_loss(mu, lv);
    auto loss = [&] { return nn::kld_loss(mu, lv).value; };
    record("losses", max_rel_error(r.grad_mu, numeric_grad(loss, mu)));
    record("losses", max_rel_error(r.grad_logvar, numeric_grad(loss, lv)));
  }

  // End to end on the tiny model, 30 random parameter entries.
  double vae_worst = 0.0;
  {
    Vae model(VaeConfig::tiny(), 21);
    VoxelSet set{16, {}};
    for (const auto& p : generate_dataset(4, 8, ParamRanges{})) set.grids.push_back(voxelize(p, 16));
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto x = grids_to_tensor(set, idx);
    const auto eps = sample_noise({4, 8}, 99);
    model.forward_backward(x, eps, 1.0);
    auto params = model.parameters();
    std::size_t total = 0;
    for (auto* p : params) total += p->value.size();
    Rng pick(303);
    for (int n = 0; n < 30; ++n) {
      std::size_t flat = pick.below(total), pi = 0;
      while (flat >= params[pi]->value.size()) flat -= params[pi++]->value.size();
      auto* p = params[pi];
      const double analytic = p->grad[flat], orig = p->value[flat], h = 1e-5;
      p->value[flat] = orig + h;
      const double fp = model.forward_backward(x, eps, 1.0).total;
      p->value[flat] = orig - h;
      const double fm = model.forward_backward(x, eps, 1.0).total;
      p->value[flat] = orig;
      const double numeric = (fp - fm) / (2 * h);
      vae_worst = std::max(vae_worst, std::abs(analytic - numeric) /
                                          std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
      model.forward_backward(x, eps, 1.0);
    }
  }

  std::vector<std::string> errors;
  std::string detail;
  for (const auto& [layer, e] : worst) {
    detail += fmt::format("{} {:.1e}, ", layer, e);
    check(errors, e <= 1e-4, fmt::format("{} max rel error {:.2e}", layer, e));
  }
  detail += fmt::format("tiny VAE {:.1e}", vae_worst);
  check(errors, vae_worst <= 1e-3, fmt::format("VAE max rel error {:.2e}", vae_worst));
  const double t = clock.seconds();
  check(errors, t < 300, fmt::format("took {:.1f}s", t));
  return verdict(errors, fmt::format("{}, {:.1f}s", detail, t));
}

Outcome overfit_smoke() {
  Clock clock;
  VoxelSet set{16, {}};
  for (const auto& p : generate_dataset(32, 11, ParamRanges{})) set.grids.push_back(voxelize(p, 16));
  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < 32; ++i) idx[i] = i;
  Vae model(VaeConfig::tiny(), 3);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 200;
  tc.learning_rate = 1e-3;
  tc.seed = 5;
  const auto losses = fit(model, set, idx, tc);
  const double score = reconstruction_iou(model, set, idx);
  const double t = clock.seconds();
  std::vector<std::string> errors;
  check(errors, score >= 0.9, fmt::format("training IoU {:.4f} < 0.9", score));
  check(errors, t < 600, fmt::format("took {:.1f}s", t));
  return verdict(errors, fmt::format("training IoU {:.4f}, loss {:.1f} -> {:.1f}, {:.1f}s", score,
                                     losses.front().total, losses.back().total, t));
}

Outcome tsne_calibration() {
  Clock clock;
  std::vector<std::string> errors;
  Rng rng(404);
  double worst_perp = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 20 + rng.below(200), self = rng.below(n);
    std::vector<double> row(n);
    for (auto& v : row) v = std::pow(10.0, rng.uniform(-3.0, 3.0));
    row[self] = 0.0;
    const double target = rng.uniform(2.0, std::min(60.0, n - 2.0));
    worst_perp = std::max(worst_perp, std::abs(tsne::perplexity_search(row, self, target).perplexity - target));
  }
  check(errors, worst_perp <= 1e-2, fmt::format("perplexity error {:.2e}", worst_perp));

  const Matrix p = testing::random_p(6, 6);
  Matrix y(6, 2);
  for (auto& v : y.data) v = rng.normal();
  const auto g = tsne::kl_gradient(p, y, 1.0);
  double worst_grad = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double orig = y(i, k), h = 1e-6;
      y(i, k) = orig + h;
      const double up = tsne::kl_objective(p, y);
      y(i, k) = orig - h;
      const double down = tsne::kl_objective(p, y);
      y(i, k) = orig;
      worst_grad = std::max(worst_grad, std::abs(g(i, k) - (up - down) / (2 * h)));
    }
  }
  check(errors, worst_grad <= 1e-5, fmt::format("KL gradient error {:.2e}", worst_grad));

  const auto blobs = testing::three_blobs(100, 21);
  tsne::TsneConfig c;
  c.seed = 5;
  const auto r = tsne::run(blobs.x, c);
  const double acc = testing::knn_label_accuracy(r.embedding, blobs.label, 10);
  check(errors, acc >= 0.9, fmt::format("blob 10-NN accuracy {:.3f}", acc));
  check(errors, r.kl_final <= r.kl_initial, fmt::format("KL {:.4f} -> {:.4f}", r.kl_initial, r.kl_final));
  const double t = clock.seconds();
  check(errors, t < 300, fmt::format("took {:.1f}s", t));
  return verdict(errors, fmt::format("perplexity err {:.1e}, grad err {:.1e}, blob acc {:.3f}, KL {:.3f} -> {:.3f}, {:.1f}s",
                                     worst_perp, worst_grad, acc, r.kl_initial, r.kl_final, t));
}

Outcome dbscan_oracle() {
  Clock clock;
  std::vector<std::string> errors;
  Rng rng(505);
  int bad = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(200);
    Matrix pts(n, 2);
    for (auto& v : pts.data) v = rng.uniform();
    const double eps = rng.uniform(0.02, 0.2);
    const int min_pts = 1 + static_cast<int>(rng.below(10));
    const auto l = dbscan(pts, {eps, min_pts});
    const auto ref = testing::brute_force_dbscan(pts, eps, min_pts);
    if (l.core != ref.core || !testing::same_partition(ref.core, l.label, ref.component)) ++bad;
  }
  check(errors, bad == 0, fmt::format("{} of 100 instances differ from the reference", bad));

  Matrix blobs(40, 2);
  for (std::size_t i = 0; i < 40; ++i) {
    blobs(i, 0) = (i < 20 ? 0.0 : 100.0) + 0.01 * static_cast<double>(i % 20);
    blobs(i, 1) = 0.0;
  }
  const auto two = dbscan(blobs, {0.5, 4});
  bool two_ok = two.cluster_count == 2 && two.noise_count() == 0;
  for (std::size_t i = 0; i < 40; ++i) two_ok = two_ok && two.label[i] == (i < 20 ? 0 : 1);
  check(errors, two_ok, "two-blob case");
  const auto same = dbscan(Matrix(25, 2), {0.1, 5});
  bool same_ok = same.cluster_count == 1;
  for (std::size_t i = 0; i < 25; ++i) same_ok = same_ok && same.label[i] == 0 && same.core[i];
  check(errors, same_ok, "all-coincident case");
  const double t = clock.seconds();
  check(errors, t < 60, fmt::format("took {:.1f}s", t));
  return verdict(errors, fmt::format("100/100 instances match, trivial cases exact, {:.1f}s", t));
}

// ---------------------------------------------------------------------------
// Pipeline-level criteria

std::vector<std::string> schema_errors(const fs::path& dir, const pipeline::PipelineConfig& c) {
  std::vector<std::string> errors;
  const auto guard = [&](const std::string& what, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      errors.push_back(fmt::format("{}: {}", what, e.what()));
    }
  };
  const auto& p = c.paths;
  const std::size_t n = c.count;
  const std::size_t analyzed = c.analysis.subset == "all" ? n : n - training_split(n, c.train).train.size();
  guard(p.params, [&] { check(errors, read_params_csv(dir / p.params).size() == n, p.params + " rows"); });
  guard(p.voxels, [&] {
    const auto v = read_voxl(dir / p.voxels);
    check(errors, v.grids.size() == n && v.resolution == c.vae.resolution, p.voxels + " shape");
  });
  guard(p.checkpoint, [&] { load_checkpoint(dir / p.checkpoint, &c.vae); });
  guard(p.losses, [&] { check(errors, !read_losses_csv(dir / p.losses).empty(), p.losses + " empty"); });
  guard(p.split, [&] {
    const auto s = read_split_csv(dir / p.split);
    check(errors, s.train.size() + s.validation.size() == n, p.split + " size");
  });
  guard(p.features, [&] {
    const auto f = read_features_csv(dir / p.features);
    check(errors, f.ids.size() == analyzed && f.features.cols == static_cast<std::size_t>(c.vae.latent_dim),
          p.features + " shape");
  });
  for (const auto& name : {p.embedding_parametric, p.embedding_feature}) {
    guard(name, [&] { check(errors, tsne::read_embedding_csv(dir / name).ids.size() == analyzed, name + " rows"); });
  }
  for (const auto& name : {p.clustered_parametric, p.clustered_feature}) {
    guard(name, [&] { check(errors, read_clustered_csv(dir / name).ids.size() == analyzed, name + " rows"); });
  }
  guard(p.report, [&] { pipeline::report_from_json(json::parse(slurp(dir / p.report))); });
  for (const char* svg : {"parametric_embed.svg", "feature_embed.svg", "parametric_cluster.svg",
                          "feature_cluster.svg", "spaces_compare.svg"}) {
    const auto s = testing::inspect_svg(slurp(dir / svg));
    check(errors, s.well_formed && s.root == "svg", fmt::format("{}: {}", svg, s.error));
  }
  for (const auto& stage : pipeline::stage_names()) {
    guard("sidecar " + stage, [&] {
      const auto j = json::parse(slurp(pipeline::sidecar_path(dir, stage)));
      for (const char* key : {"stage", "tool_version", "seed", "config", "inputs", "outputs"}) {
        if (!j.contains(key)) throw DataError(fmt::format("missing key '{}'", key));
      }
    });
  }
  return errors;
}

Outcome ci_end_to_end(const fs::path& dir) {
  Clock clock;
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto c = pipeline::resolve("ci", std::nullopt, std::nullopt);
  std::vector<std::string> errors;
  try {
    pipeline::run_all({c, dir, quiet});
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  const double t = clock.seconds();
  for (auto& e : schema_errors(dir, c)) errors.push_back(std::move(e));
  check(errors, t < 900, fmt::format("took {:.1f}s", t));
  std::size_t artifacts = 0;
  for (const auto& stage : pipeline::stage_names()) artifacts += pipeline::stage_info(stage, c).outputs.size();
  return verdict(errors, fmt::format("all stages, {} artifacts schema-valid, {:.1f}s", artifacts, t));
}

Outcome determinism(const fs::path& ci_dir, const fs::path& work) {
  Clock clock;
  std::vector<std::string> errors;
  int stages = 0;
  for (const auto& stage : pipeline::stage_names()) {
    try {
      const auto r = pipeline::replay(pipeline::sidecar_path(ci_dir, stage));
      for (const auto& [name, same] : r.outputs) check(errors, same, fmt::format("{}: {} differs", stage, name));
      stages += r.identical();
    } catch (const std::exception& e) {
      errors.push_back(fmt::format("{}: {}", stage, e.what()));
    }
  }
  const auto voxl_in = ci_dir / "voxels.voxl", voxl_out = work / "roundtrip.voxl";
  write_voxl(voxl_out, read_voxl(voxl_in));
  check(errors, slurp(voxl_in) == slurp(voxl_out), "VOXL round trip is not bit-exact");
  const auto ck_in = ci_dir / "model.vaec", ck_out = work / "roundtrip.vaec";
  const auto loaded = load_checkpoint(ck_in);
  save_checkpoint(ck_out, loaded.model, loaded.meta);
  check(errors, slurp(ck_in) == slurp(ck_out), "checkpoint round trip is not bit-exact");
  fs::remove(voxl_out);
  fs::remove(ck_out);
  return verdict(errors, fmt::format("{}/{} stages replay byte-identically, VOXL and checkpoint bit-exact, {:.1f}s",
                                     stages, pipeline::stage_names().size(), clock.seconds()));
}

Outcome explorer_api(const fs::path& ci_dir) {
  Clock clock;
  std::vector<std::string> errors;
  const auto snap = std::make_shared<const explorer::SpaceSnapshot>(explorer::load_snapshot(ci_dir));
  const explorer::Explorer ex(snap);
  const auto spaces = ex.spaces();
  for (const auto& s : spaces.body.at("spaces")) {
    check(errors, s.at("points").size() == 64, fmt::format("{} space has {} points", s.at("kind").dump(),
                                                           s.at("points").size()));
  }
  const auto v = ex.vessel("7");
  check(errors, v.status == 200 && v.body.at("latent").size() == 8, "vessel detail");
  check(errors, ex.vessel("-1").status == 404, "unknown vessel is not 404");
  // Endpoints of an interpolation equal the reconstructions of the stored latents.
  const auto interp = ex.interpolate(json{{"id_a", 7}, {"id_b", 21}, {"steps", 8}}.dump());
  double worst_ms = 0.0;
  for (const auto& [id, k] : {std::pair{7, 0}, std::pair{21, 7}}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto d = ex.decode(json{{"z", ex.vessel(std::to_string(id)).body.at("latent")}}.dump());
    worst_ms = std::max(worst_ms,
                        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    check(errors, d.body.at("section") == interp.body.at("sections")[k], fmt::format("endpoint {} differs", id));
  }
  check(errors, worst_ms < 500, fmt::format("decode took {:.0f} ms", worst_ms));
  return verdict(errors, fmt::format("64 points per space, endpoints match, decode {:.1f} ms, {:.1f}s", worst_ms,
                                     clock.seconds()));
}

// Desk-scale artifacts shared by the training and comparison criteria.
struct DeskRun {
  fs::path dir;
  pipeline::PipelineConfig config = pipeline::resolve("desk", std::nullopt, std::nullopt);
  bool trained = false;
  std::string train_error;
  double train_seconds = 0.0;
};

// A previous training run is reused only when its sidecar records the same
// configuration and every recorded output still hashes as recorded.
bool desk_training_reusable(const DeskRun& run) {
  const auto sidecar = pipeline::sidecar_path(run.dir, "train");
  if (!fs::exists(sidecar)) return false;
  try {
    const auto j = json::parse(slurp(sidecar));
    if (j.at("config").get<pipeline::PipelineConfig>() != run.config) return false;
    for (const auto& stage : {"gen", "voxelize", "train"}) {
      const auto s = json::parse(slurp(pipeline::sidecar_path(run.dir, stage)));
      for (const auto& [name, hash] : s.at("outputs").items()) {
        if (pipeline::sha256_file(run.dir / name) != hash.get<std::string>()) return false;
      }
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void ensure_desk_training(DeskRun& run, bool reuse) {
  if (run.trained || !run.train_error.empty()) return;
  if (reuse && desk_training_reusable(run)) {
    progress("desk: reusing verified training artifacts in " + run.dir.string());
    run.trained = true;
    return;
  }
  Clock clock;
  fs::remove_all(run.dir);
  fs::create_directories(run.dir);
  try {
    for (const auto& stage : {"gen", "voxelize", "train"}) pipeline::run_stage(stage, {run.config, run.dir, progress});
    run.trained = true;
  } catch (const std::exception& e) {
    run.train_error = e.what();
  }
  run.train_seconds = clock.seconds();
}

Outcome desk_training(DeskRun& run, bool reuse) {
  ensure_desk_training(run, reuse);
  if (!run.trained) return {false, run.train_error};
  std::vector<std::string> errors;
  const auto& c = run.config;
  const auto history = read_losses_csv(run.dir / c.paths.losses);
  const double first = history.front().train.total, last = history.back().train.total;
  const double drop = 1.0 - last / first;
  check(errors, static_cast<int>(history.size()) >= 20, fmt::format("only {} epochs", history.size()));
  check(errors, drop >= 0.4, fmt::format("loss decreased {:.1f}%", 100 * drop));
  const auto voxels = read_voxl(run.dir / c.paths.voxels);
  const auto split = read_split_csv(run.dir / c.paths.split);
  const auto model = load_checkpoint(run.dir / c.paths.checkpoint, &c.vae).model;
  const double held_out = reconstruction_iou(model, voxels, split.validation);
  check(errors, held_out >= 0.6, fmt::format("held-out IoU {:.4f} < 0.6", held_out));
  check(errors, run.train_seconds < 7200, fmt::format("training took {:.0f}s", run.train_seconds));
  return verdict(errors, fmt::format("{} epochs, loss {:.1f} -> {:.1f} (-{:.1f}%), held-out IoU {:.4f} on {}, {:.0f}s",
                                     history.size(), first, last, 100 * drop, held_out, split.validation.size(),
                                     run.train_seconds));
}

Outcome desk_compare(DeskRun& run, bool reuse) {
  ensure_desk_training(run, reuse);
  if (!run.trained) return {false, "no desk training artifacts: " + run.train_error};
  Clock clock;
  const auto& c = run.config;
  try {
    for (const auto& stage : {"encode", "embed", "cluster", "render", "compare"}) {
      pipeline::run_stage(stage, {c, run.dir, progress});
    }
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  const double t = clock.seconds();
  std::vector<std::string> errors;
  const auto report_json = json::parse(slurp(run.dir / c.paths.report));
  const auto r = pipeline::report_from_json(report_json);
  check(errors, r.trust_k == 12, "trustworthiness k is not 12");
  check(errors, r.feature.trustworthiness >= 0.80,
        fmt::format("feature trustworthiness {:.4f} < 0.80", r.feature.trustworthiness));
  check(errors, std::isfinite(r.feature.neighbor_iou) && std::isfinite(r.parametric.neighbor_iou),
        "neighbor IoU missing");
  check(errors, report_json.at("deltas").contains("neighbor_iou") && report_json.at("ordering").contains("holds"),
        "report lacks the ordering delta");
  check(errors, r.ordering_holds() || !r.warnings.empty(), "inverted ordering raised no warning");
  const auto svg = testing::inspect_svg(slurp(run.dir / "spaces_compare.svg"));
  check(errors, svg.well_formed && svg.root == "svg", "spaces_compare.svg: " + svg.error);
  check(errors, t < 900, fmt::format("took {:.0f}s", t));
  return verdict(errors, fmt::format("trust(k=12) feature {:.4f} parametric {:.4f}; neighbor IoU feature {:.4f} "
                                     "parametric {:.4f} (delta {:+.4f}, ordering {}); clusters {}/{}; {:.0f}s",
                                     r.feature.trustworthiness, r.parametric.trustworthiness, r.feature.neighbor_iou,
                                     r.parametric.neighbor_iou, r.neighbor_iou_delta(),
                                     r.ordering_holds() ? "holds" : "INVERTED (warning)", r.parametric.cluster_count,
                                     r.feature.cluster_count, t));
}

// Explorer over the desk snapshot: endpoint latency and continuity of
// decoded occupancy along latent interpolations.
Outcome explorer_desk(DeskRun& run) {
  if (!fs::exists(run.dir / run.config.paths.clustered_feature)) return {false, "no desk comparison artifacts"};
  Clock clock;
  std::vector<std::string> errors;
  const auto snap = std::make_shared<const explorer::SpaceSnapshot>(explorer::load_snapshot(run.dir));
  const explorer::Explorer ex(snap);
  const auto ms_since = [](std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  double slowest = 0.0;
  const auto timed = [&](const std::function<explorer::Response()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = f();
    slowest = std::max(slowest, ms_since(t0));
    check(errors, r.status == 200, fmt::format("status {}: {}", r.status, r.body.dump()));
    return r;
  };
  const auto& ids = snap->features.ids;
  timed([&] { return ex.spaces(); });
  const auto detail = timed([&] { return ex.vessel(std::to_string(ids[0])); });
  timed([&] { return ex.decode(json{{"z", detail.body.at("latent")}}.dump()); });

  // Eleven evenly spaced alphas between pairs of held-out vessels.
  Rng rng(606);
  double worst_step = 0.0;
  const std::size_t L = snap->features.features.cols;
  for (int pair = 0; pair < 20; ++pair) {
    const auto ra = rng.below(ids.size()), rb = rng.below(ids.size());
    Tensor z({11, L});
    for (std::size_t k = 0; k < 11; ++k) {
      const double alpha = static_cast<double>(k) / 10.0;
      for (std::size_t c = 0; c < L; ++c) {
        z[k * L + c] = (1 - alpha) * snap->features.features(ra, c) + alpha * snap->features.features(rb, c);
      }
    }
    const auto grids = ex.decode_latents(z, 0.5);
    std::size_t both = 0;
    for (std::size_t i = 0; i < grids.front().size(); ++i) both += grids.front().cells()[i] | grids.back().cells()[i];
    if (both == 0) continue;
    for (std::size_t k = 1; k < 11; ++k) {
      const double step = std::abs(static_cast<double>(grids[k].occupied_count()) -
                                   static_cast<double>(grids[k - 1].occupied_count()));
      worst_step = std::max(worst_step, step / static_cast<double>(both));
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  timed([&] {
    return ex.interpolate(json{{"id_a", ids[0]}, {"id_b", ids[1]}, {"steps", 8}}.dump());
  });
  const double interp_ms = ms_since(t0);
  check(errors, worst_step <= 0.3, fmt::format("occupancy step {:.3f} of |a or b|", worst_step));
  check(errors, slowest < 500, fmt::format("slowest endpoint {:.0f} ms", slowest));
  return verdict(errors, fmt::format("largest occupancy step {:.3f} of |a or b| over 20 pairs, slowest endpoint {:.0f} ms "
                                     "(8-step interpolate {:.0f} ms), {:.1f}s",
                                     worst_step, slowest, interp_ms, clock.seconds()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vesselspace acceptance checks"};
  fs::path work = fs::temp_directory_path() / "vspace_acceptance";
  std::vector<std::string> only;
  bool reuse = false, list = false;
  app.add_option("--work", work, "scratch directory")->capture_default_str();
  app.add_option("--only", only, "run only these criteria");
  app.add_flag("--reuse-desk", reuse, "reuse verified desk training artifacts from an earlier run");
  app.add_flag("--list", list, "list criteria and exit");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  const auto ci_dir = work / "ci";
  DeskRun desk{work / "desk"};
  bool ci_ready = false;
  const auto need_ci = [&]() -> bool {
    if (!ci_ready) {
      fs::remove_all(ci_dir);
      fs::create_directories(ci_dir);
      pipeline::run_all({pipeline::resolve("ci", std::nullopt, std::nullopt), ci_dir, quiet});
      ci_ready = true;
    }
    return true;
  };

  const std::vector<Criterion> criteria = {
      {"dataset-contract", "PRIMARY", [&] { return dataset_contract(work); }},
      {"voxelizer-oracle", "PRIMARY", voxelizer_oracle},
      {"gradient-suite", "PRIMARY", gradient_suite},
      {"overfit-smoke", "PRIMARY", overfit_smoke},
      {"tsne-calibration", "PRIMARY", tsne_calibration},
      {"dbscan-oracle", "PRIMARY", dbscan_oracle},
      {"ci-end-to-end", "PRIMARY",
       [&] {
         auto o = ci_end_to_end(ci_dir);
         ci_ready = o.pass;
         return o;
       }},
      {"determinism", "PRIMARY", [&] { return need_ci(), determinism(ci_dir, work); }},
      {"explorer-api", "SECONDARY", [&] { return need_ci(), explorer_api(ci_dir); }},
      {"desk-training", "PRIMARY", [&] { return desk_training(desk, reuse); }},
      {"space-comparison", "PRIMARY", [&] { return desk_compare(desk, reuse); }},
      {"explorer-desk", "SECONDARY", [&] { return explorer_desk(desk); }},
  };

  if (list) {
    for (const auto& c : criteria) std::printf("%s [%s]\n", c.name.c_str(), c.tier.c_str());
    return 0;
  }
  for (const auto& name : only) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == name; })) {
      std::fprintf(stderr, "unknown criterion '%s' (see --list)\n", name.c_str());
      return 2;
    }
  }

  int failures = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    ++ran;
    failures += !o.pass;
    std::printf("%s [%s] %s: %s\n", o.pass ? "PASS" : "FAIL", c.tier.c_str(), c.name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
