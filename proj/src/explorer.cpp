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

#include "vspace/explorer.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>

#include <fmt/core.h>

#include "httplib.h"
#include "vspace/errors.hpp"

namespace vspace::explorer {

namespace fs = std::filesystem;
using nlohmann::json;

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  if (bytes.empty()) return out;
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw DataError(fmt::format("base64: length {} is not a multiple of 4", text.size()));
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  if (text.empty()) return out;
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw DataError("base64: invalid character");
  // EVP_DecodeBlock keeps the bytes that stand for '=' padding.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string encode_section(const SectionImage& section) { return base64_encode(pack_bits(section.pixels())); }

SectionImage decode_section(std::string_view base64, int resolution) {
  const auto r = static_cast<std::size_t>(resolution);
  const auto packed = base64_decode(base64);
  if (packed.size() != (r * r + 7) / 8) {
    throw DataError(fmt::format("section payload has {} bytes, expected {} for R={}", packed.size(), (r * r + 7) / 8,
                                resolution));
  }
  const auto bits = unpack_bits(packed, r * r);
  SectionImage img(resolution);
  for (int x = 0; x < resolution; ++x) {
    for (int y = 0; y < resolution; ++y) img.set(x, y, bits[static_cast<std::size_t>(x) * r + y] != 0);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Snapshot

namespace {

template <typename F>
auto load_file(const fs::path& path, F&& reader) {
  if (!fs::exists(path)) throw DataError(fmt::format("{}: snapshot artifact is missing", path.string()));
  try {
    return reader(path);
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.find(path.string()) != std::string::npos) throw;
    throw DataError(fmt::format("{}: {}", path.string(), msg));
  }
}

void require_same_ids(const std::vector<std::size_t>& expected, const std::vector<std::size_t>& got,
                      const fs::path& file, const std::string& reference) {
  if (expected != got) throw DataError(fmt::format("{} lists different vessel ids than {}", file.string(), reference));
}

}  // namespace

SpaceSnapshot load_snapshot(const fs::path& dir, const pipeline::Paths& paths) {
  SpaceSnapshot s;
  s.params = load_file(dir / paths.params, read_params_csv);
  s.voxels = load_file(dir / paths.voxels, read_voxl);
  s.features = load_file(dir / paths.features, read_features_csv);
  s.parametric = load_file(dir / paths.clustered_parametric, read_clustered_csv);
  s.feature = load_file(dir / paths.clustered_feature, read_clustered_csv);
  auto loaded = load_file(dir / paths.checkpoint, [](const fs::path& p) { return load_checkpoint(p); });
  s.model = std::make_shared<const Vae>(std::move(loaded.model));

  if (s.voxels.grids.size() != s.params.size()) {
    throw DataError(fmt::format("{} holds {} grids but {} lists {} vessels", paths.voxels, s.voxels.grids.size(),
                                paths.params, s.params.size()));
  }
  if (s.model->config().resolution != s.voxels.resolution) {
    throw DataError(fmt::format("{} expects resolution {} but {} has {}", paths.checkpoint,
                                s.model->config().resolution, paths.voxels, s.voxels.resolution));
  }
  if (s.features.features.cols != static_cast<std::size_t>(s.latent_dim())) {
    throw DataError(fmt::format("{} has {} feature columns but the model latent size is {}", paths.features,
                                s.features.features.cols, s.latent_dim()));
  }
  require_same_ids(s.features.ids, s.parametric.ids, dir / paths.clustered_parametric, paths.features);
  require_same_ids(s.features.ids, s.feature.ids, dir / paths.clustered_feature, paths.features);

  s.sections.reserve(s.features.ids.size());
  for (std::size_t row = 0; row < s.features.ids.size(); ++row) {
    const auto id = s.features.ids[row];
    if (id >= s.params.size()) {
      throw DataError(fmt::format("{}: id {} has no entry in {}", paths.features, id, paths.params));
    }
    if (!s.row_of.emplace(id, row).second) throw DataError(fmt::format("{}: duplicate id {}", paths.features, id));
    s.sections.push_back(section_slice(s.voxels.grids[id]));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Handlers

namespace {

Response error(int status, std::string message) { return {status, json{{"error", std::move(message)}}}; }

json space_json(const char* kind, const ClusteredPoints& c) {
  json points = json::array();
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    points.push_back({{"id", c.ids[i]}, {"x", c.coords(i, 0)}, {"y", c.coords(i, 1)}, {"cluster", c.cluster[i]}});
  }
  return {{"kind", kind}, {"points", std::move(points)}};
}

bool parse_object(std::string_view body, json& out, Response& err) {
  out = json::parse(body, nullptr, false);
  if (out.is_discarded() || !out.is_object()) {
    err = error(400, "request body must be a JSON object");
    return false;
  }
  return true;
}

bool integer_field(const json& body, const char* key, long long& out, Response& err) {
  const auto it = body.find(key);
  if (it == body.end() || !it->is_number_integer()) {
    err = error(400, fmt::format("'{}' must be an integer", key));
    return false;
  }
  out = it->get<long long>();
  return true;
}

}  // namespace

Explorer::Explorer(std::shared_ptr<const SpaceSnapshot> snapshot) : snapshot_(std::move(snapshot)) {
  if (!snapshot_ || !snapshot_->model) throw ConfigError("explorer needs a loaded snapshot");
}

Response Explorer::spaces() const {
  const auto& s = *snapshot_;
  return {200, json{{"spaces", json::array({space_json("parametric", s.parametric), space_json("feature", s.feature)})}}};
}

Response Explorer::vessel(std::string_view id_text) const {
  const auto& s = *snapshot_;
  long long id = 0;
  const auto [end, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
  if (ec != std::errc() || end != id_text.data() + id_text.size()) {
    return error(400, fmt::format("vessel id '{}' is not an integer", id_text));
  }
  const auto it = id < 0 ? s.row_of.end() : s.row_of.find(static_cast<std::size_t>(id));
  if (it == s.row_of.end()) return error(404, fmt::format("unknown vessel id {}", id));
  const auto vid = it->first;
  const auto row = it->second;
  const auto& p = s.params[vid];
  json latent = json::array();
  for (std::size_t c = 0; c < s.features.features.cols; ++c) latent.push_back(s.features.features(row, c));
  return {200, json{{"id", vid},
                    {"params",
                     {{"height", p.height},
                      {"base_width", p.base_width},
                      {"top_width", p.top_width},
                      {"ctrl_r", p.ctrl_r},
                      {"ctrl_h", p.ctrl_h}}},
                    {"clusters", {{"parametric", s.parametric.cluster[row]}, {"feature", s.feature.cluster[row]}}},
                    {"latent", std::move(latent)},
                    {"resolution", s.resolution()},
                    {"section", encode_section(s.sections[row])},
                    {"occupied_count", s.voxels.grids[vid].occupied_count()}}};
}

std::vector<VoxelGrid> Explorer::decode_latents(const Tensor& z, double threshold) const {
  const Tensor probs = snapshot_->model->decode(z);
  const auto r = static_cast<int>(probs.dim(2));
  std::vector<VoxelGrid> grids;
  grids.reserve(probs.dim(0));
  for (std::size_t b = 0; b < probs.dim(0); ++b) {
    VoxelGrid g(r);
    const double* src = probs.data() + b * probs.stride0();
    auto cells = g.cells();
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = src[i] >= threshold ? 1 : 0;
    grids.push_back(std::move(g));
  }
  return grids;
}

Response Explorer::decode(std::string_view body_text) const {
  json body;
  Response err;
  if (!parse_object(body_text, body, err)) return err;
  const auto L = static_cast<std::size_t>(snapshot_->latent_dim());
  const auto zit = body.find("z");
  if (zit == body.end() || !zit->is_array()) return error(400, "'z' must be an array of numbers");
  if (zit->size() != L) return error(400, fmt::format("'z' has length {}, expected {}", zit->size(), L));
  Tensor z({1, L});
  for (std::size_t i = 0; i < L; ++i) {
    const auto& v = (*zit)[i];
    if (!v.is_number()) return error(400, fmt::format("z[{}] is not a finite number", i));
    z[i] = v.get<double>();
    if (!std::isfinite(z[i])) return error(400, fmt::format("z[{}] is not a finite number", i));
  }
  double threshold = 0.5;
  if (const auto t = body.find("threshold"); t != body.end()) {
    if (!t->is_number()) return error(400, "'threshold' must be a number");
    threshold = t->get<double>();
    if (!(threshold >= 0.0 && threshold <= 1.0)) return error(400, "'threshold' must lie in [0, 1]");
  }
  const auto grid = decode_latents(z, threshold).front();
  return {200, json{{"resolution", grid.resolution()},
                    {"threshold", threshold},
                    {"voxels", base64_encode(encode_record(grid))},
                    {"occupied_count", grid.occupied_count()},
                    {"section", encode_section(section_slice(grid))}}};
}

Response Explorer::interpolate(std::string_view body_text) const {
  const auto& s = *snapshot_;
  json body;
  Response err;
  if (!parse_object(body_text, body, err)) return err;
  long long id_a = 0, id_b = 0, steps = 0;
  if (!integer_field(body, "id_a", id_a, err) || !integer_field(body, "id_b", id_b, err) ||
      !integer_field(body, "steps", steps, err)) {
    return err;
  }
  if (steps < 2 || steps > 64) return error(400, fmt::format("'steps' must lie in [2, 64], got {}", steps));
  const auto row = [&](long long id) { return id < 0 ? s.row_of.end() : s.row_of.find(static_cast<std::size_t>(id)); };
  const auto ra = row(id_a), rb = row(id_b);
  if (ra == s.row_of.end()) return error(404, fmt::format("unknown vessel id {}", id_a));
  if (rb == s.row_of.end()) return error(404, fmt::format("unknown vessel id {}", id_b));

  const auto n = static_cast<std::size_t>(steps);
  const auto L = s.features.features.cols;
  Tensor z({n, L});
  json alphas = json::array();
  for (std::size_t k = 0; k < n; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(n - 1);
    alphas.push_back(alpha);
    for (std::size_t c = 0; c < L; ++c) {
      const double a = s.features.features(ra->second, c), b = s.features.features(rb->second, c);
      z[k * L + c] = (1.0 - alpha) * a + alpha * b;
    }
  }
  json sections = json::array(), counts = json::array();
  for (const auto& g : decode_latents(z, 0.5)) {
    sections.push_back(encode_section(section_slice(g)));
    counts.push_back(g.occupied_count());
  }
  return {200, json{{"id_a", id_a},
                    {"id_b", id_b},
                    {"resolution", s.resolution()},
                    {"alphas", std::move(alphas)},
                    {"sections", std::move(sections)},
                    {"occupied_counts", std::move(counts)}}};
}

// ---------------------------------------------------------------------------
// HTTP

struct Server::Impl {
  std::shared_ptr<const Explorer> explorer;
  httplib::Server http;
};

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

Server::Server(std::shared_ptr<const Explorer> explorer, std::string cors_origin) : impl_(std::make_unique<Impl>()) {
  impl_->explorer = std::move(explorer);
  auto& http = impl_->http;
  const Explorer* ex = impl_->explorer.get();
  http.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                            {"Access-Control-Allow-Headers", "Content-Type"}});
  http.set_payload_max_length(1 << 20);
  http.Get("/api/spaces", [ex](const httplib::Request&, httplib::Response& res) { send(res, ex->spaces()); });
  http.Get(R"(/api/vessel/([^/]+))", [ex](const httplib::Request& req, httplib::Response& res) {
    send(res, ex->vessel(req.matches[1].str()));
  });
  http.Post("/api/decode",
            [ex](const httplib::Request& req, httplib::Response& res) { send(res, ex->decode(req.body)); });
  http.Post("/api/interpolate",
            [ex](const httplib::Request& req, httplib::Response& res) { send(res, ex->interpolate(req.body)); });
  http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto msg = res.status == 404 ? fmt::format("no route for {} {}", req.method, req.path)
                                       : fmt::format("HTTP {}", res.status);
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->http.bind_to_any_port(host);
  } else if (!impl_->http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw ConfigError(fmt::format("cannot bind {}:{}", host, port));
  return bound;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_) impl_->http.stop();
}

}  // namespace vspace::explorer
