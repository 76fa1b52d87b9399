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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vspace/vessel.hpp"

namespace vspace {

/// R x R x R binary occupancy. y is the vertical axis; the linear index is
/// x*R^2 + y*R + z.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int resolution);

  int resolution() const { return resolution_; }
  std::size_t size() const { return cells_.size(); }

  std::size_t index(int x, int y, int z) const {
    const auto r = static_cast<std::size_t>(resolution_);
    return (static_cast<std::size_t>(x) * r + static_cast<std::size_t>(y)) * r +
           static_cast<std::size_t>(z);
  }
  bool at(int x, int y, int z) const { return cells_[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { cells_[index(x, y, z)] = v ? 1 : 0; }

  std::span<const std::uint8_t> cells() const { return cells_; }
  std::span<std::uint8_t> cells() { return cells_; }

  std::size_t occupied_count() const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int resolution_ = 0;
  std::vector<std::uint8_t> cells_;  // one byte per voxel, 0 or 1
};

/// Central z-slice of a grid: pixels(x, y) = occupancy(x, y, R/2).
class SectionImage {
 public:
  SectionImage() = default;
  explicit SectionImage(int resolution);

  int resolution() const { return resolution_; }
  bool at(int x, int y) const {
    return pixels_[static_cast<std::size_t>(x) * resolution_ + y] != 0;
  }
  void set(int x, int y, bool v) {
    pixels_[static_cast<std::size_t>(x) * resolution_ + y] = v ? 1 : 0;
  }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::size_t filled_count() const;

  friend bool operator==(const SectionImage&, const SectionImage&) = default;

 private:
  int resolution_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Voxel center (x,y,z) maps to world (cx, cy, cz) with
/// cx = (x+0.5)/R - 0.5, cy = (y+0.5)/R, cz = (z+0.5)/R - 0.5; a voxel is
/// occupied iff cy <= height and hypot(cx, cz) <= profile radius at cy.
VoxelGrid voxelize(const VesselParams& params, int resolution);

SectionImage section_slice(const VoxelGrid& grid);

/// |a and b| / |a or b|, 1 when both are empty.
double iou(const VoxelGrid& a, const VoxelGrid& b);

// VOXL container. Header: "VOXL", u16 version=1, u16 R, u32 N, u32 0; then N
// records of ceil(R^3/8) bytes, bit idx stored LSB-first in byte idx>>3.
// Integers are little-endian.

std::size_t voxl_record_bytes(int resolution);

/// LSB-first bit packing of 0/1 bytes; shared by VOXL records and the
/// explorer's section payloads.
std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count);

/// One VOXL record (ceil(R^3/8) bytes).
std::vector<std::uint8_t> encode_record(const VoxelGrid& grid);
VoxelGrid decode_record(std::span<const std::uint8_t> record, int resolution);

struct VoxelSet {
  int resolution = 0;
  std::vector<VoxelGrid> grids;
};

std::vector<std::uint8_t> encode_voxl(const VoxelSet& set);
VoxelSet decode_voxl(std::span<const std::uint8_t> bytes);

void write_voxl(const std::filesystem::path& path, const VoxelSet& set);
VoxelSet read_voxl(const std::filesystem::path& path);

}  // namespace vspace
