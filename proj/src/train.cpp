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

#include "volreg/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "volreg/digest.hpp"
#include "volreg/error.hpp"
#include "volreg/json_util.hpp"
#include "volreg/parallel.hpp"

namespace volreg {
namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Piece {
  std::size_t subject = 0;
  std::size_t index = 0;  // position within the subject's pieces
  std::string key;        // "<subject_id>/<index>", used in diagnostics
  double age = 0.0;
  Tensor input;
};

std::vector<VolumeSample> load_split(const Manifest& manifest, Split split, bool normalize) {
  std::vector<VolumeSample> out;
  for (const auto& record : manifest.select(split)) {
    VolumeSample s = load_sample(manifest, record);
    if (normalize) s.volume = normalize_zmuv(s.volume);
    out.push_back(std::move(s));
  }
  return out;
}

void require_shape(const Network<float>& net, const Shape& shape, const std::string& what) {
  if (net.spec().input_shape != shape) {
    throw ShapeError("shape mismatch between data and net: " + what + " pieces are " + to_string(shape) +
                     " but the network expects " + to_string(net.spec().input_shape));
  }
}

void check_dimensionality(const Network<float>& net, FeedMode mode, const Shape& piece_shape) {
  const std::size_t want = static_cast<std::size_t>(net.spec().dimensionality) + 1;
  if (piece_shape.size() != want) {
    throw ShapeError("shape mismatch between data and net: " + to_string(mode) + " mode yields " +
                     to_string(piece_shape) + " pieces for a " + std::to_string(net.spec().dimensionality) +
                     "D network");
  }
}

std::pair<double, double> mean_and_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

std::string to_string(FeedMode mode) {
  switch (mode) {
    case FeedMode::kFull: return "full";
    case FeedMode::kChunk: return "chunk";
    case FeedMode::kSlice2d: return "slice2d";
  }
  return "?";
}

FeedMode parse_feed_mode(const std::string& text) {
  if (text == "full") return FeedMode::kFull;
  if (text == "chunk") return FeedMode::kChunk;
  if (text == "slice2d") return FeedMode::kSlice2d;
  throw ConfigError("unknown feeding mode '" + text + "' (expected full, chunk or slice2d)");
}

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  validate(c.adam);
  if (c.chunk_depth < 1) throw ConfigError("chunk_depth must be >= 1");
  if (!(c.augmentation.flip_probability >= 0.0 && c.augmentation.flip_probability <= 1.0)) {
    throw ConfigError("flip_probability must lie in [0, 1]");
  }
  for (Extent t : c.augmentation.max_translation) {
    if (t < 0) throw ConfigError("max_translation must be >= 0");
  }
}

nlohmann::ordered_json to_json(const AugmentConfig& c) {
  return nlohmann::ordered_json{{"flip_probability", c.flip_probability}, {"max_translation", c.max_translation}};
}

AugmentConfig augment_config_from_json(const nlohmann::json& doc, const std::string& path) {
  reject_unknown_keys(doc, {"flip_probability", "max_translation"}, path);
  AugmentConfig c;
  read_optional(doc, "flip_probability", c.flip_probability, path);
  read_optional(doc, "max_translation", c.max_translation, path);
  if (!(c.flip_probability >= 0.0 && c.flip_probability <= 1.0)) {
    throw ConfigError(path + ".flip_probability must lie in [0, 1]");
  }
  if (c.max_translation.empty()) throw ConfigError(path + ".max_translation must not be empty");
  for (Extent t : c.max_translation) {
    if (t < 0) throw ConfigError(path + ".max_translation must be >= 0");
  }
  return c;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return nlohmann::ordered_json{{"epochs", c.epochs},
                                {"batch_size", c.batch_size},
                                {"learning_rate", c.adam.learning_rate},
                                {"beta1", c.adam.beta1},
                                {"beta2", c.adam.beta2},
                                {"epsilon", c.adam.epsilon},
                                {"seed", c.seed},
                                {"mode", to_string(c.mode)},
                                {"chunk_depth", c.chunk_depth},
                                {"checkpoint_every", c.checkpoint_every},
                                {"threads", c.threads},
                                {"normalize", c.normalize},
                                {"standardize_targets", c.standardize_targets},
                                {"augment", c.augment}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc, const std::string& path) {
  reject_unknown_keys(doc,
                      {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "seed", "mode",
                       "chunk_depth", "checkpoint_every", "threads", "normalize", "standardize_targets", "augment"},
                      path);
  TrainConfig c;
  read_optional(doc, "epochs", c.epochs, path);
  read_optional(doc, "batch_size", c.batch_size, path);
  read_optional(doc, "learning_rate", c.adam.learning_rate, path);
  read_optional(doc, "beta1", c.adam.beta1, path);
  read_optional(doc, "beta2", c.adam.beta2, path);
  read_optional(doc, "epsilon", c.adam.epsilon, path);
  read_optional(doc, "seed", c.seed, path);
  std::string mode = to_string(c.mode);
  read_optional(doc, "mode", mode, path);
  c.mode = parse_feed_mode(mode);
  read_optional(doc, "chunk_depth", c.chunk_depth, path);
  read_optional(doc, "checkpoint_every", c.checkpoint_every, path);
  read_optional(doc, "threads", c.threads, path);
  read_optional(doc, "normalize", c.normalize, path);
  read_optional(doc, "standardize_targets", c.standardize_targets, path);
  read_optional(doc, "augment", c.augment, path);
  validate(c);
  return c;
}

std::string fingerprint(const nlohmann::ordered_json& doc) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buf;
}

std::vector<Tensor> feed_pieces(const VolumeSample& sample, FeedMode mode, Extent chunk_depth) {
  switch (mode) {
    case FeedMode::kFull: return {sample.volume};
    case FeedMode::kChunk: return split_chunks(sample, chunk_depth).chunks;
    case FeedMode::kSlice2d: {
      std::vector<Tensor> out;
      for (auto& s : extract_slices(sample)) out.push_back(std::move(s.volume));
      return out;
    }
  }
  return {};
}

Shape feed_input_shape(const Shape& v, FeedMode mode, Extent chunk_depth) {
  switch (mode) {
    case FeedMode::kFull: return v;
    case FeedMode::kChunk:
      if (v.size() != 4) throw ShapeError("chunk mode needs [C,D,H,W] volumes, got " + to_string(v));
      if (chunk_depth < 1 || chunk_depth > v[1]) {
        throw ConfigError("chunk depth " + std::to_string(chunk_depth) + " is outside [1, " + std::to_string(v[1]) +
                          "]");
      }
      return {v[0], chunk_depth, v[2], v[3]};
    case FeedMode::kSlice2d:
      if (v.size() != 4) throw ShapeError("slice2d mode needs [C,D,H,W] volumes, got " + to_string(v));
      return {v[0], v[2], v[3]};
  }
  return v;
}

namespace {

struct LayerRef {
  const ConvCache<float>* conv = nullptr;
  const DenseCache<float>* dense = nullptr;
};

// Weighted layers of a trace in parameter order.
std::vector<LayerRef> weighted_layers(const ForwardTrace<float>& t) {
  std::vector<LayerRef> out;
  for (const auto& c : t.stem_conv) out.push_back({&c.conv, nullptr});
  for (const auto& m : t.modules) {
    for (const auto& i : m.inception) {
      for (const auto* c : {&i.b1, &i.b3_reduce, &i.b3, &i.b5_reduce, &i.b5, &i.pool_proj}) out.push_back({&c->conv, nullptr});
    }
    for (const auto* c : {&m.fire.squeeze, &m.fire.e1, &m.fire.e3}) out.push_back({&c->conv, nullptr});
  }
  for (const auto& d : t.dense) out.push_back({nullptr, &d});
  out.push_back({nullptr, &t.output});
  return out;
}

bool layer_is_conv(const Network<float>& net, std::size_t k) { return net.parameters()[2 * k].value.shape().size() > 2; }

}  // namespace

std::size_t calibrate_layers(Network<float>& net, std::span<const Tensor> probes) {
  auto& params = net.parameters();
  std::size_t rescaled = 0;
  for (std::size_t k = 0; 2 * k + 1 < params.size(); ++k) {
    Tensor& w = params[2 * k].value;
    Tensor& b = params[2 * k + 1].value;
    const std::size_t channels = b.size();
    const std::size_t fan = w.size() / channels;
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    double count = 0.0;
    for (const Tensor& x : probes) {
      const auto trace = net.forward(x).second;
      const LayerRef layer = weighted_layers(trace).at(k);
      const Tensor zero(Shape{static_cast<Extent>(channels)});
      const Tensor y = layer.conv ? conv3d_forward(layer.conv->input, layer.conv->weight, zero, layer.conv->stride,
                                                   layer.conv->padding).first
                                  : dense_forward(layer.dense->input, layer.dense->weight, zero).first;
      const std::size_t per = y.size() / channels;
      const std::span<const float> v = y.data();
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t q = 0; q < per; ++q) {
          const double a = v[c * per + q];
          sum[c] += a;
          sq[c] += a * a;
        }
      }
      count += static_cast<double>(per);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double mean = sum[c] / count;
      const double var = sq[c] / count - mean * mean;
      if (!layer_is_conv(net, k)) {
        // Dense units see one value per probe; dividing by that spread overfits the probes.
        b.data()[c] = static_cast<float>(-mean);
        continue;
      }
      if (!(var > 1e-20) || !std::isfinite(var)) continue;
      const double f = 1.0 / std::sqrt(var);
      for (float& q : w.data().subspan(c * fan, fan)) q = static_cast<float>(q * f);
      b.data()[c] = static_cast<float>(-mean * f);
      ++rescaled;
    }
  }
  return rescaled;
}

Network<float> initialize_network(const NetworkSpec& spec, std::uint64_t seed, std::span<const Tensor> probes,
                                  std::size_t max_attempts, std::size_t* attempts_used) {
  if (probes.empty()) throw ConfigError("initialize_network needs at least one probe input");
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(max_attempts, 1); ++attempt) {
    Rng rng = attempt == 0 ? Rng(seed) : Rng::derive(seed, "init", attempt);
    Network<float> net = Network<float>::build(spec, rng);
    calibrate_layers(net, probes);
    const double first = net.predict(probes.front());
    bool live = first != 0.0;
    for (std::size_t i = 1; i < probes.size() && live; ++i) live = net.predict(probes[i]) != first;
    if (live || attempt + 1 == max_attempts) {
      if (attempts_used) *attempts_used = attempt + 1;
      return net;
    }
  }
  throw NumericalError("unreachable");
}

Network<float> with_input_shape(const Network<float>& net, const Shape& input_shape) {
  Rng rng(0);
  Network<float> out = Network<float>::build(with_input_shape(net.spec(), input_shape), rng);
  auto& dst = out.parameters();
  const auto& src = net.parameters();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k].value = src[k].value;
  out.label_scale() = net.label_scale();
  return out;
}

double aggregate_pieces(std::span<const double> predictions) {
  if (predictions.empty()) throw ConfigError("no piece predictions to aggregate");
  double total = 0.0;
  for (double p : predictions) total += p;
  return total / static_cast<double>(predictions.size());
}

PredictionRecord predict_subject(const Network<float>& net, const VolumeSample& sample, FeedMode mode,
                                 Extent chunk_depth, std::size_t threads) {
  const std::vector<Tensor> pieces = feed_pieces(sample, mode, chunk_depth);
  check_dimensionality(net, mode, pieces.front().shape());
  const bool same = pieces.front().shape() == net.spec().input_shape;
  const Network<float> retargeted = same ? Network<float>() : with_input_shape(net, pieces.front().shape());
  const Network<float>& model = same ? net : retargeted;

  std::vector<double> outputs(pieces.size());
  parallel_for(pieces.size(), threads, [&](std::size_t i) { outputs[i] = model.predict(pieces[i]); });

  PredictionRecord record;
  record.subject_id = sample.subject_id;
  record.true_age = sample.age;
  record.predicted_age = aggregate_pieces(outputs);
  if (mode != FeedMode::kFull) record.pieces = std::move(outputs);
  return record;
}

MetricsReport evaluate(const Network<float>& net, const Manifest& manifest, Split split, FeedMode mode,
                       Extent chunk_depth, bool normalize, const std::string& config_fingerprint,
                       std::size_t threads) {
  const std::vector<VolumeSample> samples = load_split(manifest, split, normalize);
  if (samples.empty()) throw ConfigError("the " + to_string(split) + " split is empty");
  const Shape shape = feed_input_shape(samples.front().volume.shape(), mode, chunk_depth);
  check_dimensionality(net, mode, shape);
  const Network<float> model = net.spec().input_shape == shape ? net : with_input_shape(net, shape);
  if (threads == 0) threads = default_thread_count();

  std::vector<PredictionRecord> records(samples.size());
  parallel_for(samples.size(), threads,
               [&](std::size_t i) { records[i] = predict_subject(model, samples[i], mode, chunk_depth, 1); });
  return make_report(to_string(split), to_string(mode), std::move(records), config_fingerprint);
}

MetricsReport mean_baseline(const Manifest& manifest, Split split) {
  std::vector<double> train_ages;
  for (const auto& r : manifest.select(Split::kTrain)) train_ages.push_back(r.age);
  if (train_ages.empty()) throw ConfigError("the train split is empty");
  const double mean = mean_and_sd(train_ages).first;
  std::vector<PredictionRecord> records;
  for (const auto& r : manifest.select(split)) records.push_back({r.subject_id, r.age, mean, {}});
  return make_report(to_string(split), "mean-baseline", std::move(records), "");
}

std::vector<EpochRecord> train(Network<float>& net, const Manifest& manifest, const TrainConfig& config,
                               TrainState& state, const TrainOptions& options) {
  validate(config);
  const std::vector<VolumeSample> subjects = load_split(manifest, Split::kTrain, config.normalize);
  if (subjects.empty()) throw ConfigError("the train split is empty");
  const std::vector<VolumeSample> val = load_split(manifest, Split::kVal, config.normalize);

  std::vector<Piece> pieces;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    std::vector<Tensor> inputs = feed_pieces(subjects[s], config.mode, config.chunk_depth);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      pieces.push_back(
          {s, i, subjects[s].subject_id + "/" + std::to_string(i), subjects[s].age, std::move(inputs[i])});
    }
  }
  check_dimensionality(net, config.mode, pieces.front().input.shape());
  require_shape(net, pieces.front().input.shape(), to_string(config.mode));
  for (const Piece& p : pieces) {
    if (p.input.shape() != pieces.front().input.shape()) {
      throw ShapeError("shape mismatch between data and net: subject " + subjects[p.subject].subject_id +
                       " has piece shape " + to_string(p.input.shape()));
    }
  }
  if (options.log) {
    options.log(std::to_string(subjects.size()) + " training subjects, " + std::to_string(pieces.size()) + " " +
                to_string(config.mode) + " pieces (" + std::to_string(pieces.size() / subjects.size()) +
                " per subject)");
  }

  if (state.optimizer.m.empty()) state.optimizer = OptimizerState::zeros_for(net);
  if (state.epoch == 0 && config.standardize_targets) {
    std::vector<double> ages;
    for (const auto& s : subjects) ages.push_back(s.age);
    auto [mean, sd] = mean_and_sd(ages);
    net.label_scale() = {mean, sd > 0.0 ? sd : 1.0};
  }

  const std::size_t threads = config.threads ? config.threads : default_thread_count();
  const bool write = !options.out_dir.empty();
  if (write) std::filesystem::create_directories(options.out_dir);

  std::vector<EpochRecord> log;
  for (std::size_t epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(pieces.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = Rng::derive(config.seed, "epoch", epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    }

    double sq_sum = 0.0, abs_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const double scale = net.label_scale().scale;
      std::vector<GradientSet<float>> grads(count);
      std::vector<double> preds(count);
      const Network<float>& model = net;
      parallel_for(count, threads, [&](std::size_t b) {
        const Piece& piece = pieces[order[start + b]];
        Tensor x = piece.input;
        if (config.augment) {
          Rng rng = Rng::derive(config.seed, subjects[piece.subject].subject_id, epoch).child(piece.index);
          x = volreg::augment(x, config.augmentation, rng);
        }
        auto [pred, trace] = model.forward(x);
        preds[b] = pred;
        if (!std::isfinite(pred)) return;
        // Loss per sample ((pred - age) / scale)^2, averaged over the batch.
        const double grad = 2.0 * (pred - piece.age) / (scale * scale) / static_cast<double>(count);
        grads[b] = model.zero_gradients();
        model.backward(trace, grad, grads[b]);
      });
      for (std::size_t b = 0; b < count; ++b) {
        const Piece& piece = pieces[order[start + b]];
        const double e = preds[b] - piece.age;
        if (!std::isfinite(e)) {
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " on " + piece.key +
                               " (prediction " + shortest(preds[b]) + ")");
        }
        sq_sum += e * e;
        abs_sum += std::abs(e);
      }
      net.zero_grad();
      auto& params = net.parameters();
      for (std::size_t b = 0; b < count; ++b) {
        for (std::size_t k = 0; k < params.size(); ++k) {
          Tensor& g = params[k].gradient;
          const Tensor& src = grads[b][k];
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
        }
      }
      for (const auto& p : params) {
        for (float g : p.gradient.values()) {
          if (!std::isfinite(g)) {
            throw NumericalError("non-finite gradient for " + p.name + " at epoch " + std::to_string(epoch));
          }
        }
      }
      adam_step(net, state.optimizer, config.adam);
    }

    const double n = static_cast<double>(pieces.size());
    std::vector<EpochRecord> rows{{epoch, "train", sq_sum / n, abs_sum / n}};
    std::optional<double> val_mae;
    if (!val.empty()) {
      std::vector<PredictionRecord> records(val.size());
      const Shape shape = feed_input_shape(val.front().volume.shape(), config.mode, config.chunk_depth);
      require_shape(net, shape, "validation");
      parallel_for(val.size(), threads, [&](std::size_t i) {
        records[i] = predict_subject(net, val[i], config.mode, config.chunk_depth, 1);
      });
      const Metrics m = compute_metrics(records);
      if (!std::isfinite(m.rmse)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
      rows.push_back({epoch, "val", m.rmse * m.rmse, m.mae});
      val_mae = m.mae;
    }

    state.epoch = epoch;
    if (write) {
      write_loss_log(rows, options.out_dir / "loss_log.csv", epoch > 1);
      if (val_mae && *val_mae < state.best_val_mae) {
        state.best_val_mae = *val_mae;
        save_checkpoint(net, state.optimizer, epoch, options.out_dir / "best.rckp");
      }
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch-%04zu.rckp", epoch);
        save_checkpoint(net, state.optimizer, epoch, options.out_dir / name);
      }
      if (epoch == config.epochs) save_checkpoint(net, state.optimizer, epoch, options.out_dir / "final.rckp");
    } else if (val_mae && *val_mae < state.best_val_mae) {
      state.best_val_mae = *val_mae;
    }
    for (const auto& r : rows) {
      if (options.on_epoch) options.on_epoch(r);
      log.push_back(r);
    }
  }
  return log;
}

void write_loss_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot write loss log " + path.string());
  if (header) out << "epoch,split,loss,mae\n";
  for (const auto& r : log) out << r.epoch << ',' << r.split << ',' << shortest(r.loss) << ',' << shortest(r.mae) << '\n';
  if (!out) throw IoError("failed writing loss log " + path.string());
}

std::vector<EpochRecord> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss log " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,split,loss,mae") throw IoError(path.string() + ": unexpected loss log header");
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string epoch, split, loss, mae;
    std::getline(ss, epoch, ',');
    std::getline(ss, split, ',');
    std::getline(ss, loss, ',');
    std::getline(ss, mae, ',');
    EpochRecord r;
    r.split = split;
    const auto bad = [&] { throw IoError(path.string() + ": malformed loss log line '" + line + "'"); };
    if (std::from_chars(epoch.data(), epoch.data() + epoch.size(), r.epoch).ec != std::errc{}) bad();
    if (std::from_chars(loss.data(), loss.data() + loss.size(), r.loss).ec != std::errc{}) bad();
    if (std::from_chars(mae.data(), mae.data() + mae.size(), r.mae).ec != std::errc{}) bad();
    out.push_back(r);
  }
  return out;
}

}  // namespace volreg
