/*
 * Copyright 2026 The volreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "volreg/rng.hpp"
#include "volreg/tensor.hpp"

namespace volreg {

// ---------------------------------------------------------------------------
// RVOL volume files
//
//   offset  size        field
//   0       4           magic "RVOL"
//   4       1           version (1)
//   5       1           axis count n, 1..5
//   6       4 * n       extents, little-endian uint32
//   6 + 4n  4 * count   payload, little-endian IEEE-754 float32, row-major

inline constexpr std::uint8_t kRvolVersion = 1;

void save_volume(const Tensor& volume, const std::filesystem::path& path);

/// Reads an RVOL file. Throws IoError on bad magic or version, a payload
/// whose size disagrees with the header, or non-finite values.
Tensor load_volume(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_volume(const Tensor& volume);
Tensor decode_volume(const std::vector<std::uint8_t>& bytes, const std::string& source = "buffer");

// ---------------------------------------------------------------------------
// Samples

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct VolumeSample {
  std::string subject_id;
  Tensor volume;  // [1,D,H,W], or [1,H,W] for 2D slices
  double age = 0.0;
  Split split = Split::kTrain;
};

/// Rescales to zero mean and unit population variance. Throws NumericalError
/// for a constant volume.
Tensor normalize_zmuv(const Tensor& volume);

/// Non-overlapping depth chunks of one subject, ascending in depth.
struct ChunkSet {
  std::string subject_id;
  double age = 0.0;
  Extent chunk_depth = 0;
  Extent dropped = 0;          // trailing slices not covered by any chunk
  std::vector<Tensor> chunks;  // each [C, chunk_depth, H, W]
};

/// floor(D / chunk_depth) chunks; the remainder slices are dropped.
ChunkSet split_chunks(const VolumeSample& sample, Extent chunk_depth);

/// One 2D sample [C,H,W] per depth index, each carrying the subject's id,
/// age and split.
std::vector<VolumeSample> extract_slices(const VolumeSample& sample);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double flip_probability = 0.5;          // flip along the width (last) axis
  std::vector<Extent> max_translation{5};  // per spatial axis, or one bound for all

  bool operator==(const AugmentConfig&) const = default;
};

struct AugmentDraw {
  bool flipped = false;
  std::vector<Extent> offsets;  // per spatial axis
};

/// Draws the flip decision, then one offset per spatial axis uniformly in
/// [-bound, +bound]. Throws ConfigError when a bound reaches its extent.
AugmentDraw draw_augmentation(const AugmentConfig& config, const Shape& shape, Rng& rng);

Tensor apply_augmentation(const Tensor& volume, const AugmentDraw& draw);

inline Tensor augment(const Tensor& volume, const AugmentConfig& config, Rng& rng) {
  return apply_augmentation(volume, draw_augmentation(config, volume.shape(), rng));
}

}  // namespace volreg
