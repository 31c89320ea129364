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
#include <string_view>

namespace volreg {

/// Deterministic splitmix64 generator.
///
/// The output sequence depends only on the seed, so runs are reproducible
/// across processes and platforms. Independent child streams are derived
/// with `child` (from a running generator) or `derive` (from a seed, a
/// label and an index); both pass the combined key through the splitmix64
/// finalizer before seeding the new generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  /// splitmix64 output finalizer.
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    ++position_;
    return mix(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in the closed range [lo, hi], unbiased by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal deviate (Box-Muller, one value per call).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Child generator keyed by `key`; advances this generator by one draw.
  Rng child(std::uint64_t key) { return Rng(mix(next_u64() ^ mix(key + kGamma))); }

  /// Generator for (seed, label, index) triples, e.g. (seed, subject_id, epoch).
  static Rng derive(std::uint64_t seed, std::string_view label, std::uint64_t index);

  /// Number of 64-bit draws taken so far.
  std::uint64_t position() const { return position_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  std::uint64_t state_;
  std::uint64_t position_ = 0;
};

}  // namespace volreg
