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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "volreg/volume.hpp"

namespace volreg {

struct ManifestRecord {
  std::string subject_id;
  std::filesystem::path path;  // relative paths resolve against Manifest::base_dir
  double age = 0.0;
  Split split = Split::kTrain;
};

/// Subject list backing a dataset; CSV `subject_id,path,age_years,split`.
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const ManifestRecord& r) const {
    return r.path.is_absolute() ? r.path : base_dir / r.path;
  }
  std::size_t count(Split split) const;
  std::vector<ManifestRecord> select(Split split) const;
};

/// Checks unique ids, ages in (0, 130) and ids free of separators.
void validate(const Manifest& manifest);

/// Parses and validates a manifest; every volume path must exist.
Manifest read_manifest(const std::filesystem::path& csv);
void write_manifest(const Manifest& manifest, const std::filesystem::path& csv);

VolumeSample load_sample(const Manifest& manifest, const ManifestRecord& record);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  bool operator==(const SplitCounts&) const = default;
};

/// Seeded subject-level shuffle; the first `train` subjects become train,
/// the next `val` validation and the next `test` test. Subjects beyond the
/// requested total are left out of the result.
Manifest split_dataset(const Manifest& manifest, const SplitCounts& counts, std::uint64_t seed);

/// Synthetic subjects whose total intensity falls linearly with age.
struct PhantomConfig {
  Shape grid{12, 12, 12};  // D, H, W
  double age_mean = 48.6;
  double age_spread = 18.0;
  double age_min = 18.0;
  double age_max = 88.0;
  double slope = -10.0;      // intensity mass per year
  double intercept = 2000.0;
  double noise = 20.0;       // std of the Gaussian mass perturbation
  double texture = 0.05;     // std of the zero-sum texture field
  double blob_fraction = 0.2;  // blob sigma as a fraction of each extent
  std::uint64_t seed = 1;
  SplitCounts counts{64, 16, 16};

  bool operator==(const PhantomConfig&) const = default;
};

void validate(const PhantomConfig& config);

nlohmann::ordered_json to_json(const PhantomConfig& config);
PhantomConfig phantom_config_from_json(const nlohmann::json& doc);

struct PhantomSubject {
  std::string subject_id;
  double age = 0.0;
  double mass = 0.0;  // target sum of intensities
  Tensor volume;      // [1, D, H, W]
};

/// Age from a normal(age_mean, age_spread) truncated to [age_min, age_max].
double sample_age(const PhantomConfig& config, Rng& rng);

/// Centered Gaussian blob with total intensity `mass` plus a smooth
/// zero-sum texture field drawn from `rng`.
Tensor phantom_volume(const PhantomConfig& config, double mass, Rng& rng);

/// Subject i draws from Rng::derive(seed, "phantom", i).
PhantomSubject make_phantom(const PhantomConfig& config, std::size_t index);

/// Writes volumes/<id>.rvol for every subject plus manifest.csv into
/// `out_dir`, split per config.counts; returns the manifest.
Manifest generate_phantoms(const PhantomConfig& config, const std::filesystem::path& out_dir);

}  // namespace volreg
