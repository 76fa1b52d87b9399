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

#include "vspace/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "vspace/errors.hpp"
#include "vspace/metrics.hpp"
#include "vspace/rng.hpp"
#include "vspace/spacemap.hpp"
#include "vspace/voxel.hpp"

namespace vspace {

void to_json(nlohmann::json& j, const Interval& i) { j = nlohmann::json::array({i.lo, i.hi}); }

void from_json(const nlohmann::json& j, Interval& i) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("interval must be a two-element array [lo, hi]");
  j.at(0).get_to(i.lo);
  j.at(1).get_to(i.hi);
}

void to_json(nlohmann::json& j, const ParamRanges& r) {
  j = {{"height", r.height},
       {"base_width", r.base_width},
       {"top_width", r.top_width},
       {"ctrl_r", r.ctrl_r},
       {"ctrl_h_fraction", r.ctrl_h_fraction}};
}

void from_json(const nlohmann::json& j, ParamRanges& r) {
  j.at("height").get_to(r.height);
  j.at("base_width").get_to(r.base_width);
  j.at("top_width").get_to(r.top_width);
  j.at("ctrl_r").get_to(r.ctrl_r);
  j.at("ctrl_h_fraction").get_to(r.ctrl_h_fraction);
}

}  // namespace vspace

namespace vspace::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration ----------------------------------------------------------

void to_json(json& j, const RenderConfig& c) { j = {{"canvas", c.canvas}, {"glyph_size", c.glyph_size}}; }
void from_json(const json& j, RenderConfig& c) {
  j.at("canvas").get_to(c.canvas);
  j.at("glyph_size").get_to(c.glyph_size);
}

void to_json(json& j, const AnalysisConfig& c) {
  j = {{"subset", c.subset}, {"trust_k", c.trust_k}, {"neighbor_k", c.neighbor_k}};
}
void from_json(const json& j, AnalysisConfig& c) {
  j.at("subset").get_to(c.subset);
  j.at("trust_k").get_to(c.trust_k);
  j.at("neighbor_k").get_to(c.neighbor_k);
}

void to_json(json& j, const Paths& p) {
  j = {{"params", p.params},
       {"voxels", p.voxels},
       {"checkpoint", p.checkpoint},
       {"losses", p.losses},
       {"split", p.split},
       {"features", p.features},
       {"embedding_parametric", p.embedding_parametric},
       {"embedding_feature", p.embedding_feature},
       {"clustered_parametric", p.clustered_parametric},
       {"clustered_feature", p.clustered_feature},
       {"report", p.report}};
}
void from_json(const json& j, Paths& p) {
  j.at("params").get_to(p.params);
  j.at("voxels").get_to(p.voxels);
  j.at("checkpoint").get_to(p.checkpoint);
  j.at("losses").get_to(p.losses);
  j.at("split").get_to(p.split);
  j.at("features").get_to(p.features);
  j.at("embedding_parametric").get_to(p.embedding_parametric);
  j.at("embedding_feature").get_to(p.embedding_feature);
  j.at("clustered_parametric").get_to(p.clustered_parametric);
  j.at("clustered_feature").get_to(p.clustered_feature);
  j.at("report").get_to(p.report);
}

void to_json(json& j, const PipelineConfig& c) {
  j = {{"preset", c.preset},
       {"seed", c.seed},
       {"dataset", {{"count", c.count}, {"ranges", c.ranges}}},
       {"vae", c.vae},
       {"train", c.train},
       {"tsne", {{"parametric", c.tsne_parametric}, {"feature", c.tsne_feature}}},
       {"dbscan", {{"parametric", c.dbscan_parametric}, {"feature", c.dbscan_feature}}},
       {"render", c.render},
       {"analysis", c.analysis},
       {"paths", c.paths}};
}

void from_json(const json& j, PipelineConfig& c) {
  j.at("preset").get_to(c.preset);
  j.at("seed").get_to(c.seed);
  j.at("dataset").at("count").get_to(c.count);
  j.at("dataset").at("ranges").get_to(c.ranges);
  j.at("vae").get_to(c.vae);
  j.at("train").get_to(c.train);
  j.at("tsne").at("parametric").get_to(c.tsne_parametric);
  j.at("tsne").at("feature").get_to(c.tsne_feature);
  j.at("dbscan").at("parametric").get_to(c.dbscan_parametric);
  j.at("dbscan").at("feature").get_to(c.dbscan_feature);
  j.at("render").get_to(c.render);
  j.at("analysis").get_to(c.analysis);
  j.at("paths").get_to(c.paths);
}

namespace {

std::size_t analysis_count(const PipelineConfig& c) {
  if (c.analysis.subset == "all") return c.count;
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(c.count) * c.train.split_fraction));
  return c.count - n_train;
}

}  // namespace

void PipelineConfig::validate() const {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), preset) == names.end()) {
    throw ConfigError(fmt::format("unknown preset '{}'", preset));
  }
  if (count < 1) throw ConfigError("dataset.count must be >= 1");
  vspace::validate(ranges);
  vae.validate();
  train.validate();
  tsne_parametric.validate();
  tsne_feature.validate();
  dbscan_parametric.validate();
  dbscan_feature.validate();
  if (!(render.glyph_size > 0.0) || !(render.canvas >= 10.0 * render.glyph_size)) {
    throw ConfigError("render.canvas must be at least 10x render.glyph_size");
  }
  if (analysis.subset != "test" && analysis.subset != "all") {
    throw ConfigError(fmt::format("analysis.subset must be 'test' or 'all', got '{}'", analysis.subset));
  }
  if (count < 2 * static_cast<std::size_t>(train.batch_size)) {
    throw ConfigError(fmt::format("dataset.count {} is below two batches of {}", count, train.batch_size));
  }
  const auto n = analysis_count(*this);
  for (const auto* t : {&tsne_parametric, &tsne_feature}) {
    if (n < 4 || !(t->perplexity < static_cast<double>(n) - 1.0)) {
      throw ConfigError(fmt::format("t-SNE perplexity {} needs more than {} analysis points", t->perplexity, n));
    }
  }
  if (analysis.trust_k < 1 || 2 * static_cast<std::size_t>(analysis.trust_k) >= n) {
    throw ConfigError(fmt::format("analysis.trust_k {} must be in [1, {})", analysis.trust_k, n / 2.0));
  }
  if (analysis.neighbor_k < 1 || static_cast<std::size_t>(analysis.neighbor_k) >= n) {
    throw ConfigError(fmt::format("analysis.neighbor_k {} must be in [1, {})", analysis.neighbor_k, n));
  }
}

std::vector<std::string> preset_names() { return {"paper", "desk", "ci"}; }

std::uint64_t dataset_seed(const PipelineConfig& c) { return derive_seed(c.seed, 100); }

void apply_seed(PipelineConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.train.seed = derive_seed(seed, 101);
  c.tsne_parametric.seed = derive_seed(seed, 102);
  c.tsne_feature.seed = derive_seed(seed, 103);
}

PipelineConfig preset(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  c.tsne_parametric.perplexity = 30;
  c.tsne_parametric.learning_rate = 200;
  c.tsne_parametric.iterations = 1000;
  c.tsne_feature.perplexity = 50;
  c.tsne_feature.learning_rate = 700;
  c.tsne_feature.iterations = 3000;
  if (name == "paper") {
    c.count = 15000;
    c.vae = VaeConfig::paper();
  } else if (name == "desk") {
    c.count = 2000;
    c.vae = VaeConfig::desk();
    c.train.epochs = 20;
  } else if (name == "ci") {
    c.count = 64;
    c.vae = VaeConfig::tiny();
    c.train.batch_size = 8;
    c.train.epochs = 40;
    c.train.learning_rate = 1e-3;
    c.analysis.subset = "all";
  } else {
    throw ConfigError(fmt::format("unknown preset '{}' (expected paper, desk or ci)", name));
  }
  apply_seed(c, 0);
  return c;
}

PipelineConfig resolve(const std::string& preset_name, const std::optional<fs::path>& config_file,
                       std::optional<std::uint64_t> seed) {
  json j = preset(preset_name);
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw ConfigError(fmt::format("cannot read config file {}", config_file->string()));
    json patch;
    try {
      patch = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}: invalid JSON: {}", config_file->string(), e.what()));
    }
    if (!patch.is_object()) throw ConfigError(fmt::format("{}: config must be a JSON object", config_file->string()));
    if (patch.contains("preset") && patch["preset"] != preset_name) {
      throw ConfigError(fmt::format("{}: preset '{}' conflicts with --preset {}", config_file->string(),
                                    patch["preset"].dump(), preset_name));
    }
    j.merge_patch(patch);
  }
  PipelineConfig c;
  try {
    c = j.get<PipelineConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid configuration: {}", e.what()));
  }
  apply_seed(c, seed.value_or(c.seed));
  c.validate();
  return c;
}

// ---- stages ----------------------------------------------------------------

std::vector<std::string> stage_names() {
  return {"gen", "voxelize", "train", "encode", "embed", "cluster", "render", "compare"};
}

namespace {

const char* kSvgParametricEmbed = "parametric_embed.svg";
const char* kSvgFeatureEmbed = "feature_embed.svg";
const char* kSvgParametricCluster = "parametric_cluster.svg";
const char* kSvgFeatureCluster = "feature_cluster.svg";
const char* kSvgCompare = "spaces_compare.svg";

std::string format_hint(const std::string& file) {
  const auto ext = fs::path(file).extension().string();
  if (ext == ".voxl") return "VOXL voxel file";
  if (ext == ".vaec") return "VAEC checkpoint";
  if (ext == ".csv") return "CSV artifact";
  if (ext == ".json") return "JSON document";
  return "artifact";
}

void log_line(const StageContext& ctx, const std::string& s) {
  if (ctx.log) ctx.log(s);
}

fs::path at(const StageContext& ctx, const std::string& name) { return ctx.out_dir / name; }

// Wraps format errors from a reader so they name the file.
template <typename F>
auto read_artifact(const fs::path& path, F&& reader) {
  try {
    return reader(path);
  } catch (const ConfigError&) {
    throw;
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.find(path.string()) != std::string::npos) throw;
    throw DataError(fmt::format("{} ({} expected): {}", path.string(), format_hint(path.filename().string()), msg));
  }
}

std::vector<std::size_t> analysis_ids(const PipelineConfig& c, const DataSplit& split, std::size_t n) {
  if (c.analysis.subset == "test") return split.validation;
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

Matrix param_matrix(const std::vector<VesselParams>& params, const std::vector<std::size_t>& ids) {
  Matrix m(ids.size(), 5);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto& p = params[ids[r]];
    const double v[5] = {p.height, p.base_width, p.top_width, p.ctrl_r, p.ctrl_h};
    for (std::size_t k = 0; k < 5; ++k) m(r, k) = v[k];
  }
  return m;
}

void require_ids_within(const std::vector<std::size_t>& ids, std::size_t n, const fs::path& file, const std::string& of) {
  for (std::size_t id : ids) {
    if (id >= n) throw DataError(fmt::format("{}: id {} has no entry in {} ({} vessels)", file.string(), id, of, n));
  }
}

void stage_gen(const StageContext& ctx) {
  const auto& c = ctx.config;
  const auto params = generate_dataset(c.count, dataset_seed(c), c.ranges);
  write_params_csv(at(ctx, c.paths.params), params);
  log_line(ctx, fmt::format("gen: {} vessels -> {}", params.size(), c.paths.params));
}

void stage_voxelize(const StageContext& ctx) {
  const auto& c = ctx.config;
  const auto params = read_artifact(at(ctx, c.paths.params), read_params_csv);
  VoxelSet set{c.vae.resolution, std::vector<VoxelGrid>(params.size())};
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < static_cast<long>(params.size()); ++i) {
    set.grids[static_cast<std::size_t>(i)] = voxelize(params[static_cast<std::size_t>(i)], c.vae.resolution);
  }
  write_voxl(at(ctx, c.paths.voxels), set);
  log_line(ctx, fmt::format("voxelize: {} grids at R={} -> {}", set.grids.size(), set.resolution, c.paths.voxels));
}

VoxelSet read_voxels_for(const StageContext& ctx) {
  const auto& c = ctx.config;
  auto set = read_artifact(at(ctx, c.paths.voxels), read_voxl);
  if (set.resolution != c.vae.resolution) {
    throw ConfigError(fmt::format("{} has resolution {} but the model is configured for {}", c.paths.voxels,
                                  set.resolution, c.vae.resolution));
  }
  return set;
}

void stage_train(const StageContext& ctx) {
  const auto& c = ctx.config;
  const auto data = read_voxels_for(ctx);
  log_line(ctx, fmt::format("train: {} grids, {} epochs, batch {}, lr {}", data.grids.size(), c.train.epochs,
                            c.train.batch_size, c.train.learning_rate));
  const auto result = train(data, c.train, c.vae, [&](const EpochLosses& e) {
    log_line(ctx, fmt::format("train: epoch {}/{} train {:.2f} (recon {:.2f}, kld {:.2f}) validation {:.2f}", e.epoch,
                              c.train.epochs, e.train.total, e.train.reconstruction, e.train.kld, e.validation.total));
  });
  save_checkpoint(at(ctx, c.paths.checkpoint), result.model, {result.best_epoch, c.train.seed, result.history});
  write_losses_csv(at(ctx, c.paths.losses), result.history);
  write_split_csv(at(ctx, c.paths.split), result.split);
  log_line(ctx, fmt::format("train: best epoch {}{}", result.best_epoch, result.early_stopped ? " (early stop)" : ""));
}

void stage_encode(const StageContext& ctx) {
  const auto& c = ctx.config;
  const auto data = read_voxels_for(ctx);
  const auto loaded = read_artifact(at(ctx, c.paths.checkpoint),
                                    [&](const fs::path& p) { return load_checkpoint(p, &c.vae); });
  const auto split = read_artifact(at(ctx, c.paths.split), read_split_csv);
  if (split.train.size() + split.validation.size() != data.grids.size()) {
    throw DataError(fmt::format("{} covers {} vessels but {} holds {}", c.paths.split,
                                split.train.size() + split.validation.size(), c.paths.voxels, data.grids.size()));
  }
  const auto ids = analysis_ids(c, split, data.grids.size());
  const auto features = extract_features(loaded.model, data, ids);
  write_features_csv(at(ctx, c.paths.features), ids, features);
  log_line(ctx, fmt::format("encode: {} feature vectors ({} subset) -> {}", ids.size(), c.analysis.subset, c.paths.features));
}

void stage_embed(const StageContext& ctx) {
  const auto& c = ctx.config;
  const auto params = read_artifact(at(ctx, c.paths.params), read_params_csv);
  const auto table = read_artifact(at(ctx, c.paths.features), read_features_csv);
  require_ids_within(table.ids, params.size(), at(ctx, c.paths.features), c.paths.params);

  const Matrix xp = tsne::minmax_scale(param_matrix(params, table.ids));
  log_line(ctx, fmt::format("embed: parametric space, {} points (perplexity {}, lr {}, {} iterations)", xp.rows,
                            c.tsne_parametric.perplexity, c.tsne_parametric.learning_rate, c.tsne_parametric.iterations));
  const auto rp = tsne::run(xp, c.tsne_parametric);
  tsne::write_embedding_csv(at(ctx, c.paths.embedding_parametric), {table.ids, rp.embedding});

  log_line(ctx, fmt::format("embed: feature space, {} points (perplexity {}, lr {}, {} iterations)", table.ids.size(),
                            c.tsne_feature.perplexity, c.tsne_feature.learning_rate, c.tsne_feature.iterations));
  const auto rf = tsne::run(table.features, c.tsne_feature);
  tsne::write_embedding_csv(at(ctx, c.paths.embedding_feature), {table.ids, rf.embedding});
  log_line(ctx, fmt::format("embed: KL parametric {:.4f} -> {:.4f}, feature {:.4f} -> {:.4f}", rp.kl_initial, rp.kl_final,
                            rf.kl_initial, rf.kl_final));
}

void stage_cluster(const StageContext& ctx) {
  const auto& c = ctx.config;
  const std::pair<const std::string*, const DbscanConfig*> in[2] = {{&c.paths.embedding_parametric, &c.dbscan_parametric},
                                                                   {&c.paths.embedding_feature, &c.dbscan_feature}};
  const std::string* out[2] = {&c.paths.clustered_parametric, &c.paths.clustered_feature};
  for (int s = 0; s < 2; ++s) {
    const auto e = read_artifact(at(ctx, *in[s].first), tsne::read_embedding_csv);
    const auto labels = dbscan(e.coords, *in[s].second);
    write_clustered_csv(at(ctx, *out[s]), {e.ids, e.coords, labels.label});
    log_line(ctx, fmt::format("cluster: {} -> {} clusters, {} noise (eps {:.4g}, min_pts {})", *in[s].first,
                              labels.cluster_count, labels.noise_count(), labels.eps, in[s].second->min_pts));
  }
}

SpaceMap map_of(const ClusteredPoints& cp, const VoxelSet& voxels, const RenderConfig& rc, bool labeled) {
  SpaceMap m;
  m.embedding = {cp.ids, cp.coords};
  for (std::size_t id : cp.ids) m.glyphs.push_back(section_slice(voxels.grids[id]));
  if (labeled) m.labels = cp.cluster;
  m.canvas = rc.canvas;
  m.glyph_size = rc.glyph_size;
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
}

struct ClusteredPair {
  ClusteredPoints parametric, feature;
};

ClusteredPair read_clustered_pair(const StageContext& ctx, std::size_t n_voxels) {
  const auto& c = ctx.config;
  for (const auto* name : {&c.paths.clustered_parametric, &c.paths.clustered_feature}) {
    if (!fs::exists(at(ctx, *name))) {
      throw DataError(fmt::format("missing {} ({} expected); run the cluster stage first", at(ctx, *name).string(),
                                  "CSV with header id,x,y,cluster"));
    }
  }
  ClusteredPair p{read_artifact(at(ctx, c.paths.clustered_parametric), read_clustered_csv),
                  read_artifact(at(ctx, c.paths.clustered_feature), read_clustered_csv)};
  require_ids_within(p.parametric.ids, n_voxels, at(ctx, c.paths.clustered_parametric), c.paths.voxels);
  require_ids_within(p.feature.ids, n_voxels, at(ctx, c.paths.clustered_feature), c.paths.voxels);
  if (p.parametric.ids != p.feature.ids) {
    throw DataError(fmt::format("{} and {} list different vessel ids", c.paths.clustered_parametric,
                                c.paths.clustered_feature));
  }
  return p;
}

void stage_render(const StageContext& ctx) {
  const auto& c = ctx.config;
  const auto voxels = read_artifact(at(ctx, c.paths.voxels), read_voxl);
  const auto pair = read_clustered_pair(ctx, voxels.grids.size());
  write_text(at(ctx, kSvgParametricEmbed), render_svg(map_of(pair.parametric, voxels, c.render, false)));
  write_text(at(ctx, kSvgFeatureEmbed), render_svg(map_of(pair.feature, voxels, c.render, false)));
  write_text(at(ctx, kSvgParametricCluster), render_svg(map_of(pair.parametric, voxels, c.render, true)));
  write_text(at(ctx, kSvgFeatureCluster), render_svg(map_of(pair.feature, voxels, c.render, true)));
  log_line(ctx, fmt::format("render: {} glyphs per map -> {}, {}, {}, {}", pair.parametric.ids.size(),
                            kSvgParametricEmbed, kSvgFeatureEmbed, kSvgParametricCluster, kSvgFeatureCluster));
}

SpaceStats space_stats(const ClusteredPoints& cp, const Matrix& source, const VoxelSet& voxels, const AnalysisConfig& a,
                       const DbscanConfig& dc) {
  SpaceStats s;
  s.points = cp.ids.size();
  std::set<int> clusters;
  std::size_t noise = 0;
  for (int l : cp.cluster) {
    if (l < 0) ++noise;
    else clusters.insert(l);
  }
  s.cluster_count = static_cast<int>(clusters.size());
  s.noise_fraction = s.points ? static_cast<double>(noise) / static_cast<double>(s.points) : 0.0;
  s.trustworthiness = trustworthiness(source, cp.coords, static_cast<std::size_t>(a.trust_k));
  s.neighbor_iou = neighbor_iou(cp.coords, voxels, cp.ids, static_cast<std::size_t>(a.neighbor_k));
  s.eps = dc.eps > 0.0 ? dc.eps : default_eps(cp.coords);
  s.min_pts = dc.min_pts;
  return s;
}

void stage_compare(const StageContext& ctx) {
  const auto& c = ctx.config;
  const auto voxels = read_artifact(at(ctx, c.paths.voxels), read_voxl);
  const auto pair = read_clustered_pair(ctx, voxels.grids.size());
  const auto params = read_artifact(at(ctx, c.paths.params), read_params_csv);
  const auto table = read_artifact(at(ctx, c.paths.features), read_features_csv);
  if (table.ids != pair.feature.ids) {
    throw DataError(fmt::format("{} and {} list different vessel ids", c.paths.features, c.paths.clustered_feature));
  }
  require_ids_within(table.ids, params.size(), at(ctx, c.paths.features), c.paths.params);

  CompareReport r;
  r.trust_k = c.analysis.trust_k;
  r.neighbor_k = c.analysis.neighbor_k;
  r.parametric = space_stats(pair.parametric, tsne::minmax_scale(param_matrix(params, table.ids)), voxels, c.analysis,
                             c.dbscan_parametric);
  r.feature = space_stats(pair.feature, table.features, voxels, c.analysis, c.dbscan_feature);
  if (!r.ordering_holds()) {
    r.warnings.push_back(fmt::format("neighbor IoU ordering inverted: feature {:.4f} < parametric {:.4f} (delta {:.4f})",
                                     r.feature.neighbor_iou, r.parametric.neighbor_iou, r.neighbor_iou_delta()));
  }
  write_text(at(ctx, c.paths.report), report_to_json(r).dump(2) + "\n");
  write_text(at(ctx, kSvgCompare), compose_compare(map_of(pair.parametric, voxels, c.render, true),
                                                   map_of(pair.feature, voxels, c.render, true), "Parametric design space",
                                                   "Feature design space"));
  log_line(ctx, fmt::format("compare: trustworthiness parametric {:.4f} feature {:.4f}; neighbor IoU parametric {:.4f} "
                            "feature {:.4f} (delta {:+.4f})",
                            r.parametric.trustworthiness, r.feature.trustworthiness, r.parametric.neighbor_iou,
                            r.feature.neighbor_iou, r.neighbor_iou_delta()));
  for (const auto& w : r.warnings) log_line(ctx, "warning: " + w);
}

std::string sha256_bytes(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw DataError("sha256 computation failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

}  // namespace

StageInfo stage_info(const std::string& stage, const PipelineConfig& c) {
  const auto& p = c.paths;
  if (stage == "gen") return {stage, {}, {p.params}};
  if (stage == "voxelize") return {stage, {p.params}, {p.voxels}};
  if (stage == "train") return {stage, {p.voxels}, {p.checkpoint, p.losses, p.split}};
  if (stage == "encode") return {stage, {p.voxels, p.checkpoint, p.split}, {p.features}};
  if (stage == "embed") return {stage, {p.params, p.features}, {p.embedding_parametric, p.embedding_feature}};
  if (stage == "cluster") return {stage, {p.embedding_parametric, p.embedding_feature}, {p.clustered_parametric, p.clustered_feature}};
  if (stage == "render") {
    return {stage,
            {p.clustered_parametric, p.clustered_feature, p.voxels},
            {kSvgParametricEmbed, kSvgFeatureEmbed, kSvgParametricCluster, kSvgFeatureCluster}};
  }
  if (stage == "compare") {
    return {stage, {p.clustered_parametric, p.clustered_feature, p.features, p.params, p.voxels}, {p.report, kSvgCompare}};
  }
  throw ConfigError(fmt::format("unknown stage '{}'", stage));
}

fs::path sidecar_path(const fs::path& out_dir, const std::string& stage) {
  return out_dir / "provenance" / (stage + ".json");
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_bytes(ss.str());
}

void run_stage(const std::string& stage, const StageContext& ctx) {
  ctx.config.validate();
  const auto info = stage_info(stage, ctx.config);
  fs::create_directories(ctx.out_dir);
  for (const auto& in : info.inputs) {
    if (!fs::exists(at(ctx, in))) {
      throw DataError(fmt::format("stage {}: missing input {} ({} expected)", stage, at(ctx, in).string(), format_hint(in)));
    }
  }
  json inputs = json::object();
  for (const auto& in : info.inputs) inputs[in] = sha256_file(at(ctx, in));

  if (stage == "gen") stage_gen(ctx);
  else if (stage == "voxelize") stage_voxelize(ctx);
  else if (stage == "train") stage_train(ctx);
  else if (stage == "encode") stage_encode(ctx);
  else if (stage == "embed") stage_embed(ctx);
  else if (stage == "cluster") stage_cluster(ctx);
  else if (stage == "render") stage_render(ctx);
  else stage_compare(ctx);

  json outputs = json::object();
  for (const auto& out : info.outputs) outputs[out] = sha256_file(at(ctx, out));
  const json sidecar = {{"stage", stage},
                        {"tool_version", kToolVersion},
                        {"seed", ctx.config.seed},
                        {"config", ctx.config},
                        {"inputs", inputs},
                        {"outputs", outputs}};
  fs::create_directories(sidecar_path(ctx.out_dir, stage).parent_path());
  write_text(sidecar_path(ctx.out_dir, stage), sidecar.dump(2) + "\n");
}

void run_all(const StageContext& ctx) {
  for (const auto& s : stage_names()) run_stage(s, ctx);
}

bool ReplayResult::identical() const {
  return !outputs.empty() && std::all_of(outputs.begin(), outputs.end(), [](const auto& kv) { return kv.second; });
}

ReplayResult replay(const fs::path& sidecar, const Logger& log) {
  json j;
  {
    std::ifstream in(sidecar);
    if (!in) throw DataError(fmt::format("cannot read sidecar {}", sidecar.string()));
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}: invalid JSON: {}", sidecar.string(), e.what()));
    }
  }
  std::string stage;
  PipelineConfig config;
  json inputs, outputs;
  try {
    stage = j.at("stage").get<std::string>();
    config = j.at("config").get<PipelineConfig>();
    inputs = j.at("inputs");
    outputs = j.at("outputs");
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: malformed provenance sidecar: {}", sidecar.string(), e.what()));
  }
  const fs::path origin = sidecar.parent_path().parent_path();

  std::string tmpl = (fs::temp_directory_path() / "vspace-replay-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw DataError("cannot create a scratch directory for replay");
  const fs::path scratch = tmpl;
  ReplayResult result{stage, {}};
  try {
    for (const auto& [name, hash] : inputs.items()) {
      const fs::path src = origin / name;
      if (!fs::exists(src)) throw DataError(fmt::format("replay: recorded input {} is missing", src.string()));
      if (sha256_file(src) != hash.get<std::string>()) {
        throw DataError(fmt::format("replay: input {} changed since the recorded run", src.string()));
      }
      fs::copy_file(src, scratch / name);
    }
    run_stage(stage, {config, scratch, log});
    for (const auto& [name, hash] : outputs.items()) {
      result.outputs[name] = fs::exists(scratch / name) && sha256_file(scratch / name) == hash.get<std::string>();
    }
  } catch (...) {
    fs::remove_all(scratch);
    throw;
  }
  fs::remove_all(scratch);
  return result;
}

json report_to_json(const CompareReport& r) {
  auto space = [](const SpaceStats& s) {
    return json{{"points", s.points},
                {"cluster_count", s.cluster_count},
                {"noise_fraction", s.noise_fraction},
                {"trustworthiness", s.trustworthiness},
                {"neighbor_iou", s.neighbor_iou},
                {"eps", s.eps},
                {"min_pts", s.min_pts}};
  };
  return {{"trust_k", r.trust_k},
          {"neighbor_k", r.neighbor_k},
          {"spaces", {{"parametric", space(r.parametric)}, {"feature", space(r.feature)}}},
          {"deltas",
           {{"cluster_count", r.feature.cluster_count - r.parametric.cluster_count},
            {"noise_fraction", r.feature.noise_fraction - r.parametric.noise_fraction},
            {"trustworthiness", r.feature.trustworthiness - r.parametric.trustworthiness},
            {"neighbor_iou", r.neighbor_iou_delta()}}},
          {"ordering", {{"expected", "feature >= parametric"}, {"holds", r.ordering_holds()}}},
          {"warnings", r.warnings}};
}

CompareReport report_from_json(const json& j) {
  auto space = [](const json& s) {
    SpaceStats out;
    s.at("points").get_to(out.points);
    s.at("cluster_count").get_to(out.cluster_count);
    s.at("noise_fraction").get_to(out.noise_fraction);
    s.at("trustworthiness").get_to(out.trustworthiness);
    s.at("neighbor_iou").get_to(out.neighbor_iou);
    s.at("eps").get_to(out.eps);
    s.at("min_pts").get_to(out.min_pts);
    return out;
  };
  CompareReport r;
  try {
    j.at("trust_k").get_to(r.trust_k);
    j.at("neighbor_k").get_to(r.neighbor_k);
    r.parametric = space(j.at("spaces").at("parametric"));
    r.feature = space(j.at("spaces").at("feature"));
    j.at("warnings").get_to(r.warnings);
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed compare report: {}", e.what()));
  }
  return r;
}

}  // namespace vspace::pipeline
