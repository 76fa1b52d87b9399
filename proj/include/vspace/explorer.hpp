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
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vspace/dbscan.hpp"
#include "vspace/pipeline.hpp"
#include "vspace/vae.hpp"
#include "vspace/vessel.hpp"
#include "vspace/voxel.hpp"

namespace vspace::explorer {

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws DataError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Central section packed LSB-first, pixel (x, y) at bit x*R + y.
std::string encode_section(const SectionImage& section);
SectionImage decode_section(std::string_view base64, int resolution);

/// Everything the service reads, loaded once from a pipeline output
/// directory. Spaces cover the ids of features.csv.
struct SpaceSnapshot {
  std::vector<VesselParams> params;
  VoxelSet voxels;
  FeatureTable features;
  ClusteredPoints parametric;
  ClusteredPoints feature;
  std::shared_ptr<const Vae> model;
  std::map<std::size_t, std::size_t> row_of;  // vessel id -> features row
  std::vector<SectionImage> sections;        // per features row

  int resolution() const { return voxels.resolution; }
  int latent_dim() const { return model->config().latent_dim; }
};

/// Throws DataError naming the file on missing, malformed or inconsistent
/// artifacts.
SpaceSnapshot load_snapshot(const std::filesystem::path& dir, const pipeline::Paths& paths = {});

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// Request handlers as pure functions of the snapshot.
class Explorer {
 public:
  explicit Explorer(std::shared_ptr<const SpaceSnapshot> snapshot);

  const SpaceSnapshot& snapshot() const { return *snapshot_; }

  Response spaces() const;
  Response vessel(std::string_view id) const;
  Response decode(std::string_view body) const;
  Response interpolate(std::string_view body) const;

  /// Thresholded decodes of the rows of z ([B, L]).
  std::vector<VoxelGrid> decode_latents(const Tensor& z, double threshold) const;

 private:
  std::shared_ptr<const SpaceSnapshot> snapshot_;
};

/// HTTP front end. Every response carries CORS headers for `cors_origin`.
class Server {
 public:
  Server(std::shared_ptr<const Explorer> explorer, std::string cors_origin = "*");
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Port 0 picks a free port. Returns the bound port; throws ConfigError
  /// when binding fails.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vspace::explorer
