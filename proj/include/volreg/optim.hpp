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

#include "volreg/network.hpp"

namespace volreg {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

/// Throws ConfigError unless lr >= 0, 0 < beta < 1 and epsilon > 0.
void validate(const AdamConfig& config);

/// First and second moments per parameter plus the step counter.
struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static OptimizerState zeros_for(const Network<float>& net);
  bool operator==(const OptimizerState&) const = default;
};

/// One bias-corrected Adam update using each Parameter::gradient. The
/// update is evaluated in double and rounded once per element.
void adam_step(Network<float>& net, OptimizerState& state, const AdamConfig& config);

// ---------------------------------------------------------------------------
// RCKP checkpoints. All integers little-endian.
//
//   "RCKP"  u32 version  u64 epoch  u64 step  f64 label_offset  f64 label_scale
//   u32 spec_len  spec JSON bytes
//   u32 parameter count, then per parameter:
//     u32 name_len  name  u8 rank  u32 extents[rank]
//     f32 value[n]  f32 m[n]  f32 v[n]  u64 fnv1a(value, m, v bytes)
//   u64 fnv1a(all preceding bytes)

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t epoch = 0;
  std::string spec_json;
  LabelScale label_scale;
  std::vector<std::string> names;
  std::vector<Tensor> values;
  OptimizerState optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net, const OptimizerState& state,
                                            std::uint64_t epoch);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source = "buffer");

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const Network<float>& net, const OptimizerState& state, std::uint64_t epoch,
                     const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `net` (and moments into `state` when
/// given). Every name and shape is checked before anything is modified;
/// a ShapeError names the first mismatched parameter path.
void restore(const Checkpoint& ckpt, Network<float>& net, OptimizerState* state);

/// Builds the network recorded in the checkpoint and restores it.
Network<float> network_from_checkpoint(const Checkpoint& ckpt);

/// Returns the epoch stored in the file.
std::uint64_t load_checkpoint(const std::filesystem::path& path, Network<float>& net, OptimizerState* state);

}  // namespace volreg
