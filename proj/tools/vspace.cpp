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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "vspace/errors.hpp"
#include "vspace/explorer.hpp"
#include "vspace/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace vspace;

struct CommonFlags {
  std::string preset = "desk";
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out = "out";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--preset", f.preset, "paper, desk or ci")->capture_default_str();
  cmd->add_option("--config", f.config, "JSON merge patch over the preset")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "global seed (overrides the config file)");
  cmd->add_option("--out", f.out, "artifact directory")->capture_default_str();
}

void log_line(const std::string& line) {
  static const auto start = std::chrono::steady_clock::now();
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::fprintf(stderr, "[%8.1fs] %s\n", t, line.c_str());
}

pipeline::StageContext context(const CommonFlags& f) {
  auto config = pipeline::resolve(f.preset, f.config, f.seed);
  fs::create_directories(f.out);
  return {std::move(config), f.out, log_line};
}

int run_replay(const fs::path& sidecar) {
  const auto r = pipeline::replay(sidecar, log_line);
  for (const auto& [name, same] : r.outputs) std::printf("%s %s\n", same ? "identical" : "DIFFERENT", name.c_str());
  if (!r.identical()) {
    std::fprintf(stderr, "replay of stage '%s' did not reproduce its outputs\n", r.stage.c_str());
    return 3;
  }
  return 0;
}

int run_serve(const fs::path& dir, const std::string& host, int port, const std::string& cors) {
  log_line(fmt::format("loading snapshot from {}", dir.string()));
  auto snapshot = std::make_shared<const explorer::SpaceSnapshot>(explorer::load_snapshot(dir));
  log_line(fmt::format("{} vessels, R={}, latent {}", snapshot->features.ids.size(), snapshot->resolution(),
                       snapshot->latent_dim()));
  explorer::Server server(std::make_shared<const explorer::Explorer>(std::move(snapshot)), cors);
  const int bound = server.bind(host, port);
  log_line(fmt::format("serving on http://{}:{}", host, bound));
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vessel design space vs. learned feature space"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pipeline::kToolVersion);

  CommonFlags flags;
  std::string stage;
  const auto stage_cmd = [&](CLI::App* parent, const std::string& name, const std::string& stage_name,
                             const std::string& help) {
    auto* cmd = parent->add_subcommand(name, help);
    add_common(cmd, flags);
    cmd->callback([&stage, stage_name] { stage = stage_name; });
  };

  auto* vessel = app.add_subcommand("vessel", "dataset generation")->require_subcommand(1);
  stage_cmd(vessel, "gen", "gen", "sample vessel parameters -> params.csv");
  stage_cmd(vessel, "voxelize", "voxelize", "voxelize params.csv -> voxels.voxl");
  auto* vae = app.add_subcommand("vae", "variational autoencoder")->require_subcommand(1);
  stage_cmd(vae, "train", "train", "train the VAE -> model.vaec, losses.csv, split.csv");
  stage_cmd(vae, "encode", "encode", "encoder means of the analysis subset -> features.csv");
  auto* space = app.add_subcommand("space", "embedding and comparison")->require_subcommand(1);
  stage_cmd(space, "embed", "embed", "t-SNE of both spaces");
  stage_cmd(space, "cluster", "cluster", "DBSCAN of both embeddings");
  stage_cmd(space, "render", "render", "glyph maps of both spaces");
  stage_cmd(space, "compare", "compare", "metrics report and side-by-side map");

  auto* all = app.add_subcommand("all", "every stage in order");
  add_common(all, flags);

  fs::path sidecar;
  auto* replay = app.add_subcommand("replay", "re-run a stage from its provenance sidecar");
  replay->add_option("sidecar", sidecar, "out/provenance/<stage>.json")->required()->check(CLI::ExistingFile);

  fs::path snapshot_dir = "out";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors = "*";
  auto* serve = app.add_subcommand("serve", "HTTP explorer over a finished run");
  serve->add_option("--snapshot-dir", snapshot_dir, "pipeline output directory")->capture_default_str();
  serve->add_option("--port", port, "TCP port")->capture_default_str()->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "bind address")->capture_default_str();
  serve->add_option("--cors-origin", cors, "Access-Control-Allow-Origin value")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*replay) return run_replay(sidecar);
    if (*serve) return run_serve(snapshot_dir, host, port, cors);
    const auto ctx = context(flags);
    if (*all) {
      pipeline::run_all(ctx);
    } else {
      pipeline::run_stage(stage, ctx);
    }
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
