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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vspace/dbscan.hpp"
#include "vspace/tsne.hpp"
#include "vspace/vae.hpp"
#include "vspace/vessel.hpp"

namespace vspace::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

struct RenderConfig {
  double canvas = 1000.0;
  double glyph_size = 24.0;
  friend bool operator==(const RenderConfig&, const RenderConfig&) = default;
};

struct AnalysisConfig {
  std::string subset = "test";  // "test": held-out split, "all": every vessel
  int trust_k = 12;
  int neighbor_k = 5;
  friend bool operator==(const AnalysisConfig&, const AnalysisConfig&) = default;
};

/// Artifact file names, relative to the output directory.
struct Paths {
  std::string params = "params.csv";
  std::string voxels = "voxels.voxl";
  std::string checkpoint = "model.vaec";
  std::string losses = "losses.csv";
  std::string split = "split.csv";
  std::string features = "features.csv";
  std::string embedding_parametric = "parametric_embedding.csv";
  std::string embedding_feature = "feature_embedding.csv";
  std::string clustered_parametric = "parametric_clustered.csv";
  std::string clustered_feature = "feature_clustered.csv";
  std::string report = "compare_report.json";
  friend bool operator==(const Paths&, const Paths&) = default;
};

struct PipelineConfig {
  std::string preset;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  ParamRanges ranges;
  VaeConfig vae;
  TrainConfig train;
  tsne::TsneConfig tsne_parametric;
  tsne::TsneConfig tsne_feature;
  DbscanConfig dbscan_parametric;
  DbscanConfig dbscan_feature;
  RenderConfig render;
  AnalysisConfig analysis;
  Paths paths;

  /// Throws ConfigError on any invalid or conflicting field.
  void validate() const;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

std::vector<std::string> preset_names();

/// Complete configuration of a named preset (paper, desk, ci) with seed 0.
PipelineConfig preset(const std::string& name);

/// Sub-seeds of the dataset, training and both t-SNE runs, derived from
/// the global seed.
std::uint64_t dataset_seed(const PipelineConfig& c);
void apply_seed(PipelineConfig& c, std::uint64_t seed);

/// Preset, then the JSON merge patch from `config_file` (if any), then the
/// seed override. The result is validated.
PipelineConfig resolve(const std::string& preset_name, const std::optional<std::filesystem::path>& config_file,
                       std::optional<std::uint64_t> seed);

using Logger = std::function<void(const std::string&)>;

struct StageContext {
  PipelineConfig config;
  std::filesystem::path out_dir;
  Logger log;
};

struct StageInfo {
  std::string name;
  std::vector<std::string> inputs;   // artifact file names read
  std::vector<std::string> outputs;  // artifact file names written
};

std::vector<std::string> stage_names();
StageInfo stage_info(const std::string& stage, const PipelineConfig& c);

/// Runs one stage and writes its provenance sidecar. Missing or malformed
/// inputs raise DataError naming the file.
void run_stage(const std::string& stage, const StageContext& ctx);

/// Every stage in order.
void run_all(const StageContext& ctx);

std::filesystem::path sidecar_path(const std::filesystem::path& out_dir, const std::string& stage);

std::string sha256_file(const std::filesystem::path& path);

struct ReplayResult {
  std::string stage;
  std::map<std::string, bool> outputs;  // file name -> byte-identical
  bool identical() const;
};

/// Re-runs the stage recorded in `sidecar` in a scratch directory fed with
/// copies of the recorded inputs (which must still hash as recorded), then
/// compares every output with the recorded hash.
ReplayResult replay(const std::filesystem::path& sidecar, const Logger& log = {});

struct SpaceStats {
  std::size_t points = 0;
  int cluster_count = 0;
  double noise_fraction = 0.0;
  double trustworthiness = 0.0;
  double neighbor_iou = 0.0;
  double eps = 0.0;
  int min_pts = 0;
};

struct CompareReport {
  SpaceStats parametric;
  SpaceStats feature;
  int trust_k = 0;
  int neighbor_k = 0;
  std::vector<std::string> warnings;

  double neighbor_iou_delta() const { return feature.neighbor_iou - parametric.neighbor_iou; }
  bool ordering_holds() const { return feature.neighbor_iou >= parametric.neighbor_iou; }
};

nlohmann::json report_to_json(const CompareReport& r);
CompareReport report_from_json(const nlohmann::json& j);

}  // namespace vspace::pipeline
