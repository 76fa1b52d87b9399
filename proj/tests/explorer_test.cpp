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

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "httplib.h"
#include "vspace/errors.hpp"
#include "vspace/rng.hpp"

namespace vspace::explorer {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

TEST(Base64, MatchesRfc4648Vectors) {
  const std::pair<std::string, std::string> cases[] = {
      {"", ""},         {"f", "Zg=="},         {"fo", "Zm8="},         {"foo", "Zm9v"},
      {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="}, {"foobar", "Zm9vYmFy"},
  };
  for (const auto& [plain, encoded] : cases) {
    const std::vector<std::uint8_t> bytes(plain.begin(), plain.end());
    EXPECT_EQ(base64_encode(bytes), encoded) << plain;
    EXPECT_EQ(base64_decode(encoded), bytes) << encoded;
  }
}

TEST(Base64, RandomRoundTripAndRejects) {
  Rng rng(1);
  for (std::size_t n = 0; n < 70; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes) << n;
  }
  EXPECT_THROW(base64_decode("abc"), DataError);
  EXPECT_THROW(base64_decode("ab!d"), DataError);
}

TEST(Section, RoundTripsThroughPayload) {
  Rng rng(2);
  for (int r : {1, 3, 16, 32}) {
    SectionImage img(r);
    for (int x = 0; x < r; ++x) {
      for (int y = 0; y < r; ++y) img.set(x, y, rng.uniform() < 0.4);
    }
    const auto text = encode_section(img);
    EXPECT_EQ(base64_decode(text).size(), static_cast<std::size_t>((r * r + 7) / 8));
    EXPECT_EQ(decode_section(text, r), img);
  }
  EXPECT_THROW(decode_section(encode_section(SectionImage(16)), 32), DataError);
}

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vspace_explorer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

pipeline::PipelineConfig micro() {
  auto c = pipeline::preset("ci");
  c.count = 40;
  c.train.epochs = 3;
  c.tsne_parametric.perplexity = 5;
  c.tsne_parametric.iterations = 150;
  c.tsne_feature.perplexity = 5;
  c.tsne_feature.iterations = 150;
  c.render.canvas = 400;
  c.render.glyph_size = 20;
  c.analysis.trust_k = 5;
  pipeline::apply_seed(c, 5);
  return c;
}

std::map<std::string, std::string> hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = pipeline::sha256_file(e.path());
  }
  return out;
}

json latent_of(const SpaceSnapshot& s, std::size_t id) {
  json z = json::array();
  const auto row = s.row_of.at(id);
  for (std::size_t c = 0; c < s.features.features.cols; ++c) z.push_back(s.features.features(row, c));
  return z;
}

class Snapshot : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch_dir("snapshot"));
    pipeline::run_all({micro(), *dir_, [](const std::string&) {}});
    explorer_ = new std::shared_ptr<const Explorer>(
        std::make_shared<const Explorer>(std::make_shared<const SpaceSnapshot>(load_snapshot(*dir_))));
  }
  static void TearDownTestSuite() {
    delete explorer_;
    fs::remove_all(*dir_);
    delete dir_;
  }
  static const Explorer& ex() { return **explorer_; }
  static const SpaceSnapshot& snap() { return ex().snapshot(); }

  static fs::path* dir_;
  static std::shared_ptr<const Explorer>* explorer_;
};
fs::path* Snapshot::dir_ = nullptr;
std::shared_ptr<const Explorer>* Snapshot::explorer_ = nullptr;

TEST_F(Snapshot, SpacesListEveryIdOnceInBothKinds) {
  const auto r = ex().spaces();
  ASSERT_EQ(r.status, 200);
  const auto& spaces = r.body.at("spaces");
  ASSERT_EQ(spaces.size(), 2u);
  EXPECT_EQ(spaces[0].at("kind"), "parametric");
  EXPECT_EQ(spaces[1].at("kind"), "feature");
  std::set<std::size_t> expected;
  for (std::size_t i = 0; i < 40; ++i) expected.insert(i);
  for (const auto& space : spaces) {
    ASSERT_EQ(space.size(), 2u);
    const auto& points = space.at("points");
    ASSERT_EQ(points.size(), 40u);
    std::set<std::size_t> seen;
    for (const auto& p : points) {
      ASSERT_EQ(p.size(), 4u);
      EXPECT_TRUE(p.at("id").is_number_unsigned());
      EXPECT_TRUE(p.at("x").is_number_float());
      EXPECT_TRUE(p.at("y").is_number_float());
      EXPECT_TRUE(p.at("cluster").is_number_integer());
      EXPECT_GE(p.at("cluster").get<int>(), -1);
      EXPECT_TRUE(seen.insert(p.at("id").get<std::size_t>()).second);
    }
    EXPECT_EQ(seen, expected);
  }
}

TEST_F(Snapshot, VesselDetailIsConsistentWithArtifacts) {
  const auto features = read_features_csv(*dir_ / "features.csv");
  const auto params = read_params_csv(*dir_ / "params.csv");
  const auto voxels = read_voxl(*dir_ / "voxels.voxl");
  for (std::size_t row = 0; row < features.ids.size(); row += 7) {
    const auto id = features.ids[row];
    const auto r = ex().vessel(std::to_string(id));
    ASSERT_EQ(r.status, 200);
    const auto& b = r.body;
    EXPECT_EQ(b.at("id"), id);
    EXPECT_DOUBLE_EQ(b.at("params").at("height").get<double>(), params[id].height);
    EXPECT_DOUBLE_EQ(b.at("params").at("ctrl_h").get<double>(), params[id].ctrl_h);
    EXPECT_EQ(b.at("params").size(), 5u);
    ASSERT_EQ(b.at("latent").size(), features.features.cols);
    for (std::size_t c = 0; c < features.features.cols; ++c) {
      EXPECT_NEAR(b["latent"][c].get<double>(), features.features(row, c), 1e-6);
    }
    const int res = b.at("resolution");
    EXPECT_EQ(res, 16);
    EXPECT_EQ(decode_section(b.at("section").get<std::string>(), res), section_slice(voxels.grids[id]));
    EXPECT_EQ(b.at("occupied_count").get<std::size_t>(), voxels.grids[id].occupied_count());
  }
}

TEST_F(Snapshot, UnknownVesselIs404) {
  for (const char* id : {"-1", "40", "123456789"}) {
    const auto r = ex().vessel(id);
    EXPECT_EQ(r.status, 404) << id;
    EXPECT_TRUE(r.body.at("error").is_string());
  }
  EXPECT_EQ(ex().vessel("abc").status, 400);
  EXPECT_EQ(ex().vessel("").status, 400);
}

TEST_F(Snapshot, DecodeMatchesModelAndIsRepeatable) {
  const std::size_t id = 11;
  const json req = {{"z", latent_of(snap(), id)}};
  const auto r = ex().decode(req.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(ex().decode(req.dump()).body.dump(), r.body.dump());

  // Oracle: eval-mode decode thresholded at 0.5 by the vae module.
  const auto L = static_cast<std::size_t>(snap().latent_dim());
  Tensor z({1, L});
  for (std::size_t c = 0; c < L; ++c) z[c] = req["z"][c].get<double>();
  const auto expect = tensor_to_grid(snap().model->decode(z), 0);
  const auto record = base64_decode(r.body.at("voxels").get<std::string>());
  ASSERT_EQ(record.size(), voxl_record_bytes(16));
  const auto grid = decode_record(record, 16);
  EXPECT_EQ(grid, expect);
  EXPECT_EQ(r.body.at("occupied_count").get<std::size_t>(), expect.occupied_count());
  EXPECT_EQ(decode_section(r.body.at("section").get<std::string>(), 16), section_slice(expect));
  std::printf("decode of stored latent %zu: IoU with stored voxels %.3f\n", id,
              iou(grid, snap().voxels.grids[id]));
}

TEST_F(Snapshot, DecodeThresholdIsMonotone) {
  const auto z = latent_of(snap(), 3);
  std::size_t prev = snap().voxels.grids[0].size() + 1;
  for (double t : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const auto r = ex().decode(json{{"z", z}, {"threshold", t}}.dump());
    ASSERT_EQ(r.status, 200);
    const auto n = r.body.at("occupied_count").get<std::size_t>();
    EXPECT_LE(n, prev) << t;
    prev = n;
  }
  EXPECT_EQ(ex().decode(json{{"z", z}, {"threshold", 0.0}}.dump()).body.at("occupied_count"), 16u * 16u * 16u);
}

TEST_F(Snapshot, BadDecodeRequestsAre400) {
  const auto L = static_cast<std::size_t>(snap().latent_dim());
  const auto zeros = [](std::size_t n) { return json(std::vector<double>(n, 0.0)); };
  EXPECT_EQ(ex().decode(json{{"z", zeros(L)}}.dump()).status, 200);
  EXPECT_EQ(ex().decode(json{{"z", zeros(L - 1)}}.dump()).status, 400);
  EXPECT_EQ(ex().decode(json{{"z", zeros(L + 1)}}.dump()).status, 400);
  auto with_null = zeros(L);
  with_null[2] = nullptr;
  EXPECT_EQ(ex().decode(json{{"z", with_null}}.dump()).status, 400);
  auto with_text = zeros(L);
  with_text[0] = "1";
  EXPECT_EQ(ex().decode(json{{"z", with_text}}.dump()).status, 400);
  // 1e999 overflows to infinity when parsed.
  std::string huge = "{\"z\": [1e999";
  for (std::size_t i = 1; i < L; ++i) huge += ", 0";
  huge += "]}";
  EXPECT_EQ(ex().decode(huge).status, 400);
  EXPECT_EQ(ex().decode(json{{"z", zeros(L)}, {"threshold", 1.5}}.dump()).status, 400);
  EXPECT_EQ(ex().decode("{not json").status, 400);
  EXPECT_EQ(ex().decode("[1, 2]").status, 400);
  EXPECT_EQ(ex().decode("{}").status, 400);
  EXPECT_TRUE(ex().decode("{}").body.at("error").is_string());
}

TEST_F(Snapshot, InterpolateEndpointsAndAlphaGrid) {
  const auto r = ex().interpolate(json{{"id_a", 4}, {"id_b", 30}, {"steps", 2}}.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("alphas"), json({0.0, 1.0}));
  const auto sections = r.body.at("sections");
  ASSERT_EQ(sections.size(), 2u);
  EXPECT_EQ(sections[0], ex().decode(json{{"z", latent_of(snap(), 4)}}.dump()).body.at("section"));
  EXPECT_EQ(sections[1], ex().decode(json{{"z", latent_of(snap(), 30)}}.dump()).body.at("section"));

  const auto many = ex().interpolate(json{{"id_a", 4}, {"id_b", 30}, {"steps", 9}}.dump());
  ASSERT_EQ(many.status, 200);
  const auto& alphas = many.body.at("alphas");
  ASSERT_EQ(alphas.size(), 9u);
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(alphas[k].get<double>(), k / 8.0, 1e-15);
  EXPECT_EQ(alphas.front().get<double>(), 0.0);
  EXPECT_EQ(alphas.back().get<double>(), 1.0);
  EXPECT_EQ(many.body.at("sections").size(), 9u);
  EXPECT_EQ(many.body.at("sections").front(), sections[0]);
  EXPECT_EQ(many.body.at("sections").back(), sections[1]);
}

TEST_F(Snapshot, InterpolateSameIdIsConstant) {
  const auto r = ex().interpolate(json{{"id_a", 17}, {"id_b", 17}, {"steps", 6}}.dump());
  ASSERT_EQ(r.status, 200);
  for (const auto& s : r.body.at("sections")) EXPECT_EQ(s, r.body["sections"][0]);
  for (const auto& n : r.body.at("occupied_counts")) EXPECT_EQ(n, r.body["occupied_counts"][0]);
}

TEST_F(Snapshot, BadInterpolateRequests) {
  const auto call = [&](json j) { return ex().interpolate(j.dump()).status; };
  EXPECT_EQ(call({{"id_a", 1}, {"id_b", 2}, {"steps", 1}}), 400);
  EXPECT_EQ(call({{"id_a", 1}, {"id_b", 2}, {"steps", 65}}), 400);
  EXPECT_EQ(call({{"id_a", 1}, {"id_b", 2}, {"steps", 64}}), 200);
  EXPECT_EQ(call({{"id_a", 1}, {"id_b", 2}}), 400);
  EXPECT_EQ(call({{"id_a", 1.5}, {"id_b", 2}, {"steps", 3}}), 400);
  EXPECT_EQ(call({{"id_a", -1}, {"id_b", 2}, {"steps", 3}}), 404);
  EXPECT_EQ(call({{"id_a", 1}, {"id_b", 400}, {"steps", 3}}), 404);
  EXPECT_EQ(ex().interpolate("nope").status, 400);
}

TEST_F(Snapshot, RequestsLeaveArtifactsUntouched) {
  const auto before = hashes(*dir_);
  ex().spaces();
  ex().vessel("3");
  ex().decode(json{{"z", latent_of(snap(), 3)}}.dump());
  ex().interpolate(json{{"id_a", 0}, {"id_b", 39}, {"steps", 5}}.dump());
  // Reloading gives the same snapshot.
  const auto again = load_snapshot(*dir_);
  EXPECT_EQ(again.features.ids, snap().features.ids);
  EXPECT_EQ(again.sections, snap().sections);
  EXPECT_EQ(hashes(*dir_), before);
}

TEST_F(Snapshot, BrokenSnapshotsAreDataErrors) {
  const auto copy = scratch_dir("broken");
  for (const auto& e : fs::directory_iterator(*dir_)) {
    if (e.is_regular_file()) fs::copy_file(e.path(), copy / e.path().filename());
  }
  EXPECT_NO_THROW(load_snapshot(copy));
  fs::rename(copy / "feature_clustered.csv", copy / "hidden.csv");
  try {
    load_snapshot(copy);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("feature_clustered.csv"), std::string::npos) << e.what();
  }
  // A clustering of a different id set.
  auto cl = read_clustered_csv(copy / "hidden.csv");
  cl.ids.back() = 0;
  write_clustered_csv(copy / "feature_clustered.csv", cl);
  EXPECT_THROW(load_snapshot(copy), DataError);
  fs::remove_all(copy);
}

TEST_F(Snapshot, LiveHttpServer) {
  Server server(*explorer_, "http://localhost:5173");
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  for (int i = 0; i < 100 && !cli.Get("/api/spaces"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));

  const auto spaces = cli.Get("/api/spaces");
  ASSERT_TRUE(spaces);
  EXPECT_EQ(spaces->status, 200);
  EXPECT_EQ(spaces->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  EXPECT_EQ(spaces->get_header_value("Content-Type"), "application/json");
  EXPECT_EQ(json::parse(spaces->body), ex().spaces().body);

  const auto vessel = cli.Get("/api/vessel/5");
  ASSERT_TRUE(vessel);
  EXPECT_EQ(vessel->status, 200);
  EXPECT_EQ(json::parse(vessel->body).at("id"), 5);
  const auto missing = cli.Get("/api/vessel/-1");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_TRUE(json::parse(missing->body).at("error").is_string());

  const json req = {{"z", latent_of(snap(), 8)}};
  const auto d1 = cli.Post("/api/decode", req.dump(), "application/json");
  const auto d2 = cli.Post("/api/decode", req.dump(), "application/json");
  ASSERT_TRUE(d1 && d2);
  EXPECT_EQ(d1->status, 200);
  EXPECT_EQ(d1->body, d2->body);
  const auto bad = cli.Post("/api/decode", R"({"z": [1, 2]})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_TRUE(json::parse(bad->body).at("error").is_string());

  const auto interp =
      cli.Post("/api/interpolate", json{{"id_a", 2}, {"id_b", 3}, {"steps", 4}}.dump(), "application/json");
  ASSERT_TRUE(interp);
  EXPECT_EQ(interp->status, 200);
  EXPECT_EQ(json::parse(interp->body).at("sections").size(), 4u);

  const auto preflight = cli.Options("/api/decode");
  ASSERT_TRUE(preflight);
  EXPECT_EQ(preflight->status, 204);
  EXPECT_NE(preflight->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);

  const auto nowhere = cli.Get("/api/nowhere");
  ASSERT_TRUE(nowhere);
  EXPECT_EQ(nowhere->status, 404);
  EXPECT_TRUE(json::parse(nowhere->body).at("error").is_string());

  server.stop();
  t.join();
}

}  // namespace
}  // namespace vspace::explorer
