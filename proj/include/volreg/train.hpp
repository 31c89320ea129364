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
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "volreg/dataset.hpp"
#include "volreg/metrics.hpp"
#include "volreg/network.hpp"
#include "volreg/optim.hpp"

namespace volreg {

/// How a subject volume is fed to the network.
enum class FeedMode {
  kFull,     // whole volume, one forward per subject
  kChunk,    // floor(D / d) depth chunks, prediction is the chunk mean
  kSlice2d,  // every depth slice through a 2D network, prediction is the slice mean
};

std::string to_string(FeedMode mode);
FeedMode parse_feed_mode(const std::string& text);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  AdamConfig adam;
  std::uint64_t seed = 7;
  FeedMode mode = FeedMode::kFull;
  Extent chunk_depth = 4;
  std::size_t checkpoint_every = 0;  // epochs between numbered checkpoints; 0 keeps only best/final
  std::size_t threads = 0;           // 0 defers to VOLREG_THREADS, then the hardware
  bool normalize = false;            // ZMUV per volume before feeding
  bool standardize_targets = true;   // regress (age - mean) / sd of the training labels
  bool augment = true;
  AugmentConfig augmentation;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);
/// Strict: unknown keys raise ConfigError naming the key. The augmentation
/// bounds live in their own document (see augment_config_from_json) and are
/// not part of this one.
TrainConfig train_config_from_json(const nlohmann::json& doc, const std::string& path = "train");

nlohmann::ordered_json to_json(const AugmentConfig& config);
AugmentConfig augment_config_from_json(const nlohmann::json& doc, const std::string& path = "augment");

/// 16 hex digits of FNV-1a over the compact JSON text.
std::string fingerprint(const nlohmann::ordered_json& doc);

/// Network input for one subject under `mode`: the volume itself, its depth
/// chunks or its depth slices. Throws ConfigError for a bad chunk depth.
std::vector<Tensor> feed_pieces(const VolumeSample& sample, FeedMode mode, Extent chunk_depth);

/// Input shape the network must accept for volumes of `volume_shape`.
Shape feed_input_shape(const Shape& volume_shape, FeedMode mode, Extent chunk_depth);

/// Data-dependent initialization over `probes`, layer by layer in forward
/// order. Each convolution channel is rescaled to zero-mean, unit-variance
/// pre-activations (weights divided by the std, bias -mean/std); channels
/// with no variance are left alone. Dense units, including the output, only
/// get their bias set to -mean. Returns the number of rescaled channels.
std::size_t calibrate_layers(Network<float>& net, std::span<const Tensor> probes);

/// Builds a network for `spec`, calibrates it on `probes` and redraws the
/// initialization if the output still does not depend on the input. Narrow
/// ReLU stacks (the tiny spec squeezes to one channel) are frequently dead
/// at birth under plain fan-in init, which no optimizer can repair. Attempt 0
/// uses Rng(seed); later attempts use Rng::derive(seed, "init", attempt).
/// `attempts_used` receives the count.
Network<float> initialize_network(const NetworkSpec& spec, std::uint64_t seed, std::span<const Tensor> probes,
                                  std::size_t max_attempts = 64, std::size_t* attempts_used = nullptr);

/// Same weights behind a different input shape. Parameter shapes do not
/// depend on the input extents, so the copy is exact.
Network<float> with_input_shape(const Network<float>& net, const Shape& input_shape);

/// Unweighted arithmetic mean of per-piece predictions, summed in order.
/// Throws ConfigError when there are no pieces.
double aggregate_pieces(std::span<const double> predictions);

/// Runs the network on every piece of `sample` and averages. Pieces run in
/// parallel; the mean is summed in piece order.
PredictionRecord predict_subject(const Network<float>& net, const VolumeSample& sample, FeedMode mode,
                                 Extent chunk_depth, std::size_t threads = 1);

/// Predicts every subject of `split` and summarizes the errors.
MetricsReport evaluate(const Network<float>& net, const Manifest& manifest, Split split, FeedMode mode,
                       Extent chunk_depth, bool normalize, const std::string& config_fingerprint,
                       std::size_t threads = 0);

/// Baseline that answers the mean training age for everyone.
MetricsReport mean_baseline(const Manifest& manifest, Split split);

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;  // mean squared error in years^2
  double mae = 0.0;   // years

  bool operator==(const EpochRecord&) const = default;
};

/// Progress carried across calls so that training can resume.
struct TrainState {
  OptimizerState optimizer;
  std::uint64_t epoch = 0;  // completed epochs
  double best_val_mae = std::numeric_limits<double>::infinity();
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: write nothing
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> log;
};

/// Trains `net` from `state.epoch` up to `config.epochs` epochs.
///
/// Each epoch shuffles the training pieces with a stream derived from
/// (seed, epoch); augmentation draws come from (seed, subject id, epoch), one child
/// stream per piece. Samples
/// in a batch run in parallel and their gradients are reduced in sample
/// order, so results do not depend on the worker count. With an output
/// directory the loss log (`loss_log.csv`), `final.rckp`, `best.rckp`
/// (lowest validation MAE) and numbered checkpoints are written there.
///
/// Throws ShapeError when the data does not fit the network and
/// NumericalError on a non-finite loss.
std::vector<EpochRecord> train(Network<float>& net, const Manifest& manifest, const TrainConfig& config,
                               TrainState& state, const TrainOptions& options = {});

/// CSV `epoch,split,loss,mae`; doubles in shortest round-trip form.
void write_loss_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path, bool append = false);
std::vector<EpochRecord> read_loss_log(const std::filesystem::path& path);

}  // namespace volreg
