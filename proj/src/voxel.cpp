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

#include "vspace/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <fmt/format.h>

#include "vspace/errors.hpp"

namespace vspace {

namespace {

constexpr char kVoxlMagic[4] = {'V', 'O', 'X', 'L'};
constexpr std::uint16_t kVoxlVersion = 1;
constexpr std::size_t kVoxlHeaderBytes = 16;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

VoxelGrid::VoxelGrid(int resolution) : resolution_(resolution) {
  if (resolution < 2) throw ConfigError(fmt::format("voxel resolution {} < 2", resolution));
  const auto r = static_cast<std::size_t>(resolution);
  cells_.assign(r * r * r, 0);
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

SectionImage::SectionImage(int resolution) : resolution_(resolution) {
  const auto r = static_cast<std::size_t>(resolution);
  pixels_.assign(r * r, 0);
}

std::size_t SectionImage::filled_count() const {
  return static_cast<std::size_t>(std::count(pixels_.begin(), pixels_.end(), std::uint8_t{1}));
}

VoxelGrid voxelize(const VesselParams& params, int resolution) {
  validate(params);
  VoxelGrid grid(resolution);
  const ProfileCurve curve = profile_of(params);
  const int R = resolution;
  const double two_r = 2.0 * R;

  // Centered coordinates use an exact integer numerator, (2i + 1 - R) / 2R,
  // so mirrored voxels get bit-identical magnitudes.
  std::vector<double> centered(static_cast<std::size_t>(R));
  for (int i = 0; i < R; ++i) centered[i] = static_cast<double>(2 * i + 1 - R) / two_r;

  for (int y = 0; y < R; ++y) {
    const double cy = static_cast<double>(2 * y + 1) / two_r;
    if (cy > params.height) continue;
    const double radius = profile_radius(curve, cy);
    for (int x = 0; x < R; ++x) {
      const double cx = centered[x];
      for (int z = 0; z < R; ++z) {
        const double cz = centered[z];
        if (std::sqrt(cx * cx + cz * cz) <= radius) grid.set(x, y, z, true);
      }
    }
  }
  return grid;
}

SectionImage section_slice(const VoxelGrid& grid) {
  const int R = grid.resolution();
  SectionImage img(R);
  const int z = R / 2;
  for (int x = 0; x < R; ++x) {
    for (int y = 0; y < R; ++y) img.set(x, y, grid.at(x, y, z));
  }
  return img;
}

double iou(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.resolution() != b.resolution()) {
    throw DimensionError(
        fmt::format("iou: resolution mismatch {} vs {}", a.resolution(), b.resolution()));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto ca = a.cells();
  const auto cb = b.cells();
  for (std::size_t i = 0; i < ca.size(); ++i) {
    inter += static_cast<std::size_t>(ca[i] & cb[i]);
    uni += static_cast<std::size_t>(ca[i] | cb[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::size_t voxl_record_bytes(int resolution) {
  const auto r = static_cast<std::size_t>(resolution);
  return (r * r * r + 7) / 8;
}

std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> bits) {
  std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
  }
  return out;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count) {
  if (packed.size() != (count + 7) / 8) {
    throw DataError(fmt::format("bit payload has {} bytes, expected {} for {} bits",
                                packed.size(), (count + 7) / 8, count));
  }
  std::vector<std::uint8_t> bits(count);
  for (std::size_t i = 0; i < count; ++i) bits[i] = (packed[i >> 3] >> (i & 7)) & 1u;
  return bits;
}

std::vector<std::uint8_t> encode_record(const VoxelGrid& grid) { return pack_bits(grid.cells()); }

VoxelGrid decode_record(std::span<const std::uint8_t> record, int resolution) {
  VoxelGrid grid(resolution);
  const auto bits = unpack_bits(record, grid.size());
  std::copy(bits.begin(), bits.end(), grid.cells().begin());
  return grid;
}

std::vector<std::uint8_t> encode_voxl(const VoxelSet& set) {
  if (set.resolution < 2 || set.resolution > 0xffff) {
    throw ConfigError(fmt::format("VOXL resolution {} out of range", set.resolution));
  }
  std::vector<std::uint8_t> out(std::begin(kVoxlMagic), std::end(kVoxlMagic));
  put_le<std::uint16_t>(out, kVoxlVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(set.resolution));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.grids.size()));
  put_le<std::uint32_t>(out, 0);
  out.reserve(out.size() + set.grids.size() * voxl_record_bytes(set.resolution));
  for (const auto& g : set.grids) {
    if (g.resolution() != set.resolution) {
      throw DimensionError(fmt::format("VOXL: grid resolution {} in a set of resolution {}",
                                       g.resolution(), set.resolution));
    }
    const auto rec = encode_record(g);
    out.insert(out.end(), rec.begin(), rec.end());
  }
  return out;
}

VoxelSet decode_voxl(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kVoxlHeaderBytes) throw DataError("VOXL: truncated header");
  if (std::memcmp(bytes.data(), kVoxlMagic, 4) != 0) throw DataError("VOXL: bad magic");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kVoxlVersion) {
    throw DataError(fmt::format("VOXL: unsupported version {}", version));
  }
  VoxelSet set;
  set.resolution = get_le<std::uint16_t>(bytes, 6);
  const auto count = get_le<std::uint32_t>(bytes, 8);
  if (get_le<std::uint32_t>(bytes, 12) != 0) throw DataError("VOXL: reserved field is not zero");
  if (set.resolution < 2) throw DataError(fmt::format("VOXL: resolution {}", set.resolution));
  const std::size_t rec = voxl_record_bytes(set.resolution);
  if (bytes.size() != kVoxlHeaderBytes + rec * count) {
    throw DataError(fmt::format("VOXL: {} bytes, expected {} for {} records of R={}",
                                bytes.size(), kVoxlHeaderBytes + rec * count, count,
                                set.resolution));
  }
  set.grids.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    set.grids.push_back(
        decode_record(bytes.subspan(kVoxlHeaderBytes + i * rec, rec), set.resolution));
  }
  return set;
}

void write_voxl(const std::filesystem::path& path, const VoxelSet& set) {
  const auto bytes = encode_voxl(set);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

VoxelSet read_voxl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {} (expected a VOXL voxel file)", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_voxl(bytes);
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace vspace
