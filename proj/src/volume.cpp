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

#include "volreg/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "volreg/error.hpp"

namespace volreg {
namespace {

constexpr char kMagic[4] = {'R', 'V', 'O', 'L'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const Tensor& volume) {
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * volume.rank() + 4 * volume.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kRvolVersion);
  out.push_back(static_cast<std::uint8_t>(volume.rank()));
  for (Extent e : volume.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!std::isfinite(volume[i])) throw NumericalError("save_volume: non-finite value at element " + std::to_string(i));
    put_u32(out, std::bit_cast<std::uint32_t>(volume[i]));
  }
  return out;
}

Tensor decode_volume(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError(source + ": bad magic, not an RVOL file");
  }
  if (bytes[4] != kRvolVersion) {
    throw IoError(source + ": unsupported RVOL version " + std::to_string(bytes[4]));
  }
  const std::size_t rank = bytes[5];
  if (rank < 1 || rank > kMaxRank) throw IoError(source + ": invalid axis count " + std::to_string(rank));
  const std::size_t header = 6 + 4 * rank;
  if (bytes.size() < header) throw IoError(source + ": truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u32(bytes.data() + 6 + 4 * i);
  std::size_t count = 0;
  try {
    count = checked_element_count(shape);
  } catch (const ShapeError& e) {
    throw IoError(source + ": " + e.what());
  }
  const std::size_t expected = 4 * count;
  const std::size_t actual = bytes.size() - header;
  if (actual != expected) {
    throw IoError(source + ": payload size mismatch, expected " + std::to_string(expected) + " bytes for shape " +
                  to_string(shape) + ", found " + std::to_string(actual));
  }
  Tensor volume(shape);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(get_u32(bytes.data() + header + 4 * i));
    if (!std::isfinite(v)) throw IoError(source + ": non-finite value at element " + std::to_string(i));
    volume[i] = v;
  }
  return volume;
}

void save_volume(const Tensor& volume, const std::filesystem::path& path) {
  const auto bytes = encode_volume(volume);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_volume(bytes, path.string());
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split '" + text + "' (expected train, val or test)");
}

Tensor normalize_zmuv(const Tensor& volume) {
  const double n = static_cast<double>(volume.size());
  const double mean = sum(volume) / n;
  double var = 0.0;
  for (float v : volume.data()) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 0.0)) throw NumericalError("normalize_zmuv: volume has zero variance");
  const double inv = 1.0 / std::sqrt(var);
  Tensor out(volume.shape());
  for (std::size_t i = 0; i < volume.size(); ++i) out[i] = static_cast<float>((volume[i] - mean) * inv);
  return out;
}

ChunkSet split_chunks(const VolumeSample& sample, Extent chunk_depth) {
  const Tensor& v = sample.volume;
  if (v.rank() != 4) throw ShapeError("split_chunks: expected a [C,D,H,W] volume, got " + to_string(v.shape()));
  const Extent depth = v.extent(1);
  if (chunk_depth < 1 || chunk_depth > depth) {
    throw ConfigError("chunk depth " + std::to_string(chunk_depth) + " outside [1, " + std::to_string(depth) + "]");
  }
  ChunkSet set;
  set.subject_id = sample.subject_id;
  set.age = sample.age;
  set.chunk_depth = chunk_depth;
  const Extent count = depth / chunk_depth;
  set.dropped = depth - count * chunk_depth;
  for (Extent i = 0; i < count; ++i) {
    const Extent start[4] = {0, i * chunk_depth, 0, 0};
    const Extent extents[4] = {v.extent(0), chunk_depth, v.extent(2), v.extent(3)};
    set.chunks.push_back(crop(v, start, extents));
  }
  return set;
}

std::vector<VolumeSample> extract_slices(const VolumeSample& sample) {
  const Tensor& v = sample.volume;
  if (v.rank() != 4) throw ShapeError("extract_slices: expected a [C,D,H,W] volume, got " + to_string(v.shape()));
  std::vector<VolumeSample> slices;
  for (Extent z = 0; z < v.extent(1); ++z) {
    const Extent start[4] = {0, z, 0, 0};
    const Extent extents[4] = {v.extent(0), 1, v.extent(2), v.extent(3)};
    Tensor slice = crop(v, start, extents).reshaped({v.extent(0), v.extent(2), v.extent(3)});
    slices.push_back({sample.subject_id, std::move(slice), sample.age, sample.split});
  }
  return slices;
}

AugmentDraw draw_augmentation(const AugmentConfig& config, const Shape& shape, Rng& rng) {
  if (!(config.flip_probability >= 0.0 && config.flip_probability <= 1.0)) {
    throw ConfigError("augment: flip_probability must lie in [0, 1]");
  }
  if (shape.size() < 2) throw ShapeError("augment: volume has no spatial axes");
  const std::size_t spatial = shape.size() - 1;
  if (config.max_translation.size() != 1 && config.max_translation.size() != spatial) {
    throw ConfigError("augment: max_translation needs 1 or " + std::to_string(spatial) + " bounds");
  }
  AugmentDraw draw;
  draw.flipped = rng.uniform() < config.flip_probability;
  for (std::size_t a = 0; a < spatial; ++a) {
    const Extent bound = config.max_translation.size() == 1 ? config.max_translation[0] : config.max_translation[a];
    if (bound < 0 || bound >= shape[a + 1]) {
      throw ConfigError("augment: translation bound " + std::to_string(bound) + " must be in [0, " +
                        std::to_string(shape[a + 1]) + ") on spatial axis " + std::to_string(a));
    }
    draw.offsets.push_back(rng.uniform_int(-bound, bound));
  }
  return draw;
}

Tensor apply_augmentation(const Tensor& volume, const AugmentDraw& draw) {
  Tensor out = draw.flipped ? flip(volume, volume.rank() - 1) : volume;
  std::vector<Extent> offsets{0};
  offsets.insert(offsets.end(), draw.offsets.begin(), draw.offsets.end());
  return shift(out, offsets, 0.0f);
}

}  // namespace volreg
