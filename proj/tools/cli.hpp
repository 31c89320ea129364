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

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "volreg/architecture.hpp"
#include "volreg/dataset.hpp"
#include "volreg/train.hpp"

namespace volreg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

struct Paths {
  std::filesystem::path data_dir = "data";  // generate output
  std::filesystem::path manifest;           // default: <data_dir>/manifest.csv
  std::filesystem::path out_dir = "run";    // training and evaluation output
  std::filesystem::path checkpoint;         // default: <out_dir>/final.rckp

  std::filesystem::path manifest_path() const { return manifest.empty() ? data_dir / "manifest.csv" : manifest; }
  std::filesystem::path checkpoint_path() const { return checkpoint.empty() ? out_dir / "final.rckp" : checkpoint; }
};

/// Everything a run needs, read from one JSON document:
///
///   { "network":  { "preset": "default" | "tiny", "spec": { ...NetworkSpec } },
///     "train":    { ...TrainConfig },
///     "augment":  { "flip_probability": p, "max_translation": [n, ...] },
///     "phantom":  { ...PhantomConfig },
///     "evaluate": { "split": "test" },
///     "paths":    { "data_dir", "manifest", "out_dir", "checkpoint" } }
///
/// Every section and key is optional; unknown keys are rejected. Relative
/// paths resolve against the directory holding the config file.
struct RunConfig {
  std::string preset = "default";
  std::optional<NetworkSpec> spec;
  bool network_given = false;  // the config or a flag chose the network
  TrainConfig train;
  PhantomConfig phantom;
  Split eval_split = Split::kTest;
  Paths paths;
};

RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Full document, paths included.
nlohmann::ordered_json to_json(const RunConfig& config);
/// Everything except paths; two runs with equal settings in different
/// directories share this fingerprint.
std::string settings_fingerprint(const RunConfig& config);

/// Network spec for the run: the explicit spec, else the preset, in 2D for
/// slice2d mode and 3D otherwise.
NetworkSpec resolve_spec(const RunConfig& config, int dimensionality);

/// Parses `argv` and runs one command. Never throws; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace volreg::cli
