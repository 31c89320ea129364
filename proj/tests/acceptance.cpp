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

// Acceptance suite: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cli.hpp"
#include "conv_oracle.hpp"
#include "volreg/architecture.hpp"
#include "volreg/dataset.hpp"
#include "volreg/gradcheck.hpp"
#include "volreg/metrics.hpp"
#include "volreg/nn_ops.hpp"
#include "volreg/optim.hpp"
#include "volreg/train.hpp"
#include "volreg/volume.hpp"

using namespace volreg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

std::vector<double> as_double(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

fs::path fresh(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 ------------------------------------------------------------------------

Outcome table1() {
  const auto checks = verify_table1_identity(table1_rows());
  std::size_t ok = 0;
  double worst = 0.0, full_brain = 0.0;
  for (const auto& c : checks) {
    ok += c.passed();
    worst = std::max(worst, std::abs(c.derived_rmse - c.row.rmse));
    if (std::string(c.row.dataset) == "brain" && std::string(c.row.model) == "3D-CNN-full") full_brain = c.derived_rmse;
  }
  return {checks.size() == 10 && ok == 10,
          std::to_string(ok) + "/10 rows, max |derived - reported| " + fmt("%.4f", worst) +
              ", brain 3D-CNN-full " + fmt("%.4f", full_brain) + " vs 3.581"};
}

// 2 ------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckSuiteOptions opt;
  opt.seeds = {1, 2, 3, 4, 5};
  const auto reports = run_gradcheck_suite(opt);
  const double elapsed = seconds_since(t0);
  bool all = true;
  double worst_layer = 0.0, network = 0.0;
  for (const auto& r : reports) {
    all = all && r.passed;
    if (r.name.rfind("network", 0) == 0) {
      network = r.max_rel_error;
    } else {
      worst_layer = std::max(worst_layer, r.max_rel_error);
    }
  }
  return {all && elapsed < 60.0,
          std::to_string(reports.size()) + " checks x 5 seeds, worst layer " + fmt("%.2e", worst_layer) +
              " (< 1e-5), end-to-end " + fmt("%.2e", network) + " (< 1e-4), " + fmt("%.1f", elapsed) + " s (< 60 s)"};
}

// 3 ------------------------------------------------------------------------

struct OracleStats {
  std::size_t cases = 0;
  double max_error = 0.0;
};

void compare(const std::vector<double>& got, const std::vector<double>& want, OracleStats& s) {
  for (std::size_t i = 0; i < want.size(); ++i) s.max_error = std::max(s.max_error, std::abs(got[i] - want[i]));
}

template <typename Fwd, typename Bwd>
void check_case(const Tensor& x, const Tensor& w, const Tensor& b, const std::array<Extent, 4>& xs,
                const std::array<Extent, 5>& ws, std::array<Extent, 3> stride, bool same, Rng& rng, Fwd fwd, Bwd bwd,
                OracleStats& s) {
  auto [y, cache] = fwd(x, w, b);
  oracle::Geometry g;
  const auto ref = oracle::conv3d(as_double(x), xs, as_double(w), ws, as_double(b), stride, same, &g);
  if (static_cast<Extent>(y.size()) != ws[0] * g.out[0] * g.out[1] * g.out[2]) {
    s.max_error = INFINITY;
    return;
  }
  compare(as_double(y), ref, s);
  const Tensor gy = random_tensor(y.shape(), rng);
  const auto grads = bwd(gy, cache);
  std::vector<double> gx, gw, gb;
  oracle::conv3d_adjoint(as_double(x), xs, as_double(w), ws, as_double(gy), stride, same, gx, gw, gb);
  compare(as_double(grads.input), gx, s);
  compare(as_double(grads.weight), gw, s);
  compare(as_double(grads.bias), gb, s);
  ++s.cases;
}

Outcome conv_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr Extent C = 2, K = 2;
  Rng rng(2024);
  OracleStats s3, s2;
  for (Extent d = 1; d <= 6; ++d)
    for (Extent h = 1; h <= 6; ++h)
      for (Extent w = 1; w <= 6; ++w) {
        const Tensor x = random_tensor({C, d, h, w}, rng);
        for (Extent kd = 1; kd <= 6; ++kd)
          for (Extent kh = 1; kh <= 6; ++kh)
            for (Extent kw = 1; kw <= 6; ++kw) {
              const Tensor wt = random_tensor({K, C, kd, kh, kw}, rng), b = random_tensor({K}, rng);
              for (Extent st : {1, 2}) {
                const Triple stride{st, st, st};
                for (Padding p : {Padding::kValid, Padding::kSame}) {
                  if (p == Padding::kValid && (kd > d || kh > h || kw > w)) continue;
                  check_case(
                      x, wt, b, {C, d, h, w}, {K, C, kd, kh, kw}, stride, p == Padding::kSame, rng,
                      [&](const Tensor& a, const Tensor& k, const Tensor& c) { return conv3d_forward(a, k, c, stride, p); },
                      [](const Tensor& gy, const ConvCache<float>& cache) { return conv3d_backward(gy, cache); }, s3);
                }
              }
            }
      }
  for (Extent h = 1; h <= 6; ++h)
    for (Extent w = 1; w <= 6; ++w) {
      const Tensor x = random_tensor({C, h, w}, rng);
      for (Extent kh = 1; kh <= 6; ++kh)
        for (Extent kw = 1; kw <= 6; ++kw) {
          const Tensor wt = random_tensor({K, C, kh, kw}, rng), b = random_tensor({K}, rng);
          for (Extent st : {1, 2}) {
            for (Padding p : {Padding::kValid, Padding::kSame}) {
              if (p == Padding::kValid && (kh > h || kw > w)) continue;
              check_case(
                  x.reshaped({C, 1, h, w}), wt.reshaped({K, C, 1, kh, kw}), b, {C, 1, h, w}, {K, C, 1, kh, kw},
                  {1, st, st}, p == Padding::kSame, rng,
                  [&](const Tensor& a, const Tensor& k, const Tensor& c) {
                    return conv2d_forward(a.reshaped({C, h, w}), k.reshaped({K, C, kh, kw}), c, Pair{st, st}, p);
                  },
                  [](const Tensor& gy, const ConvCache<float>& cache) { return conv2d_backward(gy, cache); }, s2);
            }
          }
        }
    }
  const double elapsed = seconds_since(t0);
  const double worst = std::max(s3.max_error, s2.max_error);
  return {worst <= 1e-5 && elapsed < 120.0,
          std::to_string(s3.cases) + " conv3d + " + std::to_string(s2.cases) +
              " conv2d cases (forward and backward, extents <= 6, strides 1-2, valid and same), max |error| " +
              fmt("%.2e", worst) + " (<= 1e-5), " + fmt("%.1f", elapsed) + " s (< 120 s)"};
}

// 4 ------------------------------------------------------------------------

Outcome chunks() {
  Rng rng(4);
  bool ok = true;
  std::string detail;
  for (const auto& [shape, depth, want, dropped] : {std::tuple<Shape, Extent, std::size_t, Extent>{{1, 121, 145, 121}, 12, 10, 1},
                                                    std::tuple<Shape, Extent, std::size_t, Extent>{{1, 28, 320, 320}, 4, 7, 0}}) {
    const VolumeSample sample{"sub-0001", random_tensor(shape, rng), 50.0, Split::kTrain};
    const ChunkSet set = split_chunks(sample, depth);
    const Tensor joined = concatenate(std::span<const Tensor>(set.chunks), 1);
    const Extent start[] = {0, 0, 0, 0}, ext[] = {1, static_cast<Extent>(want) * depth, shape[2], shape[3]};
    const Tensor prefix = crop(sample.volume, std::span<const Extent>(start), std::span<const Extent>(ext));
    const bool exact = joined.shape() == prefix.shape() &&
                       std::memcmp(joined.values().data(), prefix.values().data(), prefix.size() * sizeof(float)) == 0;
    ok = ok && set.chunks.size() == want && set.dropped == dropped && exact;
    if (!detail.empty()) detail += "; ";
    detail += "D=" + std::to_string(shape[1]) + " d=" + std::to_string(depth) + " -> " +
              std::to_string(set.chunks.size()) + " chunks, " + std::to_string(set.dropped) + " dropped, prefix " +
              (exact ? "bit-exact" : "differs");
  }
  return {ok, detail};
}

// 5 ------------------------------------------------------------------------

Outcome architecture() {
  Extent gap = 0;
  for (const auto& row : infer_shapes(default_spec(3))) {
    if (row.name == "gap") gap = row.output.at(0);
  }
  bool fire_smaller = true;
  double worst_ratio = 0.0;
  for (const NetworkSpec& spec : {default_spec(3), tiny_spec(3)}) {
    for (const auto& m : spec.modules) {
      const auto fire = fire_parameter_count(m.fire, 3), plain = plain_conv_parameter_count(m.fire, 3);
      fire_smaller = fire_smaller && fire < plain;
      worst_ratio = std::max(worst_ratio, static_cast<double>(fire) / static_cast<double>(plain));
    }
  }
  const FireSpec example{16, 4, 8, 8};
  const auto f16 = fire_parameter_count(example, 3), p16 = conv_parameter_count(16, 16, 3, 3);
  return {gap == 512 && fire_smaller && f16 == 980 && p16 == 6928 && f16 < p16,
          "default GAP channels " + std::to_string(gap) + ", 8/8 fire modules smaller (max ratio " +
              fmt("%.4f", worst_ratio) + "), 16-channel case " + std::to_string(f16) + " < " + std::to_string(p16)};
}

// 6 ------------------------------------------------------------------------

std::vector<Tensor> probes_for(const Manifest& m, FeedMode mode, Extent depth) {
  std::vector<Tensor> probes;
  for (const auto& r : m.select(Split::kTrain)) {
    if (probes.size() == 4) break;
    probes.push_back(feed_pieces(load_sample(m, r), mode, depth).front());
  }
  return probes;
}

Outcome overfit(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  PhantomConfig pc;
  pc.noise = 0.0;
  pc.texture = 0.0;
  pc.counts = {8, 0, 0};
  const Manifest m = generate_phantoms(pc, fresh(work / "overfit"));
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 8;
  tc.adam.learning_rate = 3e-4;
  tc.threads = 1;
  tc.augment = false;
  const auto probes = probes_for(m, FeedMode::kFull, 4);
  Network<float> net = initialize_network(with_input_shape(tiny_spec(3), probes.front().shape()), tc.seed, probes);
  TrainState state;
  train(net, m, tc, state);
  const MetricsReport fit = evaluate(net, m, Split::kTrain, FeedMode::kFull, 4, false, "", 1);
  const double elapsed = seconds_since(t0);
  return {fit.metrics.mae < 1.0 && elapsed < 300.0,
          "8 noise-free phantoms, 200 epochs, 1 worker: train MAE " + fmt("%.3f", fit.metrics.mae) +
              " years (< 1.0), " + fmt("%.1f", elapsed) + " s (< 300 s)"};
}

// 7 ------------------------------------------------------------------------

struct Learnability {
  double test_mae = 0.0;
  double baseline = 0.0;
  double chunk_mean_error = 0.0;
};

Learnability learn(const Manifest& m, FeedMode mode, Extent depth, Extent translation, const fs::path& out) {
  TrainConfig tc;
  tc.epochs = 150;
  tc.batch_size = 8;
  tc.adam.learning_rate = 3e-4;
  tc.threads = 1;
  tc.mode = mode;
  tc.chunk_depth = depth;
  tc.augmentation.max_translation = {translation};
  const auto probes = probes_for(m, mode, depth);
  Network<float> net = initialize_network(with_input_shape(tiny_spec(3), probes.front().shape()), tc.seed, probes);
  TrainState state;
  TrainOptions options;
  options.out_dir = fresh(out);
  train(net, m, tc, state, options);
  // Best-validation checkpoint, as the CLI would ship it.
  const Network<float> best = network_from_checkpoint(read_checkpoint(out / "best.rckp"));
  const MetricsReport report = evaluate(best, m, Split::kTest, mode, depth, false, "", 1);
  Learnability r{report.metrics.mae, mean_baseline(m, Split::kTest).metrics.mae, 0.0};
  if (mode == FeedMode::kChunk) {
    for (const auto& rec : report.records) {
      const auto& record = *std::find_if(m.records.begin(), m.records.end(),
                                         [&](const ManifestRecord& x) { return x.subject_id == rec.subject_id; });
      const ChunkSet set = split_chunks(load_sample(m, record), depth);
      double total = 0.0;
      for (const Tensor& c : set.chunks) total += best.predict(c);
      const double mean = total / static_cast<double>(set.chunks.size());
      r.chunk_mean_error = std::max(r.chunk_mean_error, std::abs(rec.predicted_age - mean));
    }
  }
  return r;
}

Outcome learnability(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const Manifest m = generate_phantoms(PhantomConfig{}, fresh(work / "learn" / "data"));
  const Learnability full = learn(m, FeedMode::kFull, 4, 1, work / "learn" / "full");
  const Learnability chunk = learn(m, FeedMode::kChunk, 6, 0, work / "learn" / "chunk");
  const double elapsed = seconds_since(t0);
  const double rf = full.test_mae / full.baseline, rc = chunk.test_mae / chunk.baseline;
  return {rf <= 0.5 && rc <= 0.5 && chunk.chunk_mean_error <= 1e-6 && elapsed < 1800.0,
          "baseline test MAE " + fmt("%.3f", full.baseline) + "; full " + fmt("%.3f", full.test_mae) + " (ratio " +
              fmt("%.3f", rf) + "), chunk d=6 " + fmt("%.3f", chunk.test_mae) + " (ratio " + fmt("%.3f", rc) +
              ") both <= 0.5; chunk mean error " + fmt("%.1e", chunk.chunk_mean_error) + " (<= 1e-6); " +
              fmt("%.0f", elapsed) + " s (< 1800 s)"};
}

// 8 ------------------------------------------------------------------------

int cli_call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Outcome determinism(const fs::path& work) {
  std::vector<fs::path> runs;
  for (const char* name : {"a", "b"}) {
    const fs::path dir = fresh(work / "determinism" / name);
    fs::create_directories(dir / "data");
    std::ofstream(dir / "config.json") << R"({
  "network": {"preset": "tiny"},
  "train": {"epochs": 4, "batch_size": 8, "learning_rate": 0.0003, "seed": 11, "checkpoint_every": 2},
  "phantom": {"seed": 3},
  "paths": {"data_dir": "data", "out_dir": "run"}
})";
    const std::string cfg = (dir / "config.json").string();
    if (cli_call({"generate", "--config", cfg}) || cli_call({"train", "--config", cfg}) ||
        cli_call({"evaluate", "--config", cfg})) {
      return {false, std::string("pipeline ") + name + " failed"};
    }
    runs.push_back(dir);
  }
  const MetricsReport a = read_report(runs[0] / "run" / "report-full.json");
  const MetricsReport b = read_report(runs[1] / "run" / "report-full.json");
  const bool metrics_equal = std::memcmp(&a.metrics, &b.metrics, sizeof(Metrics)) == 0;
  bool checkpoints_equal = true;
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(runs[0] / "run")) {
    if (entry.path().extension() != ".rckp") continue;
    checkpoints_equal = checkpoints_equal && slurp(entry.path()) == slurp(runs[1] / "run" / entry.path().filename());
    ++compared;
  }
  const bool volumes_equal = slurp(runs[0] / "data" / "manifest.csv") == slurp(runs[1] / "data" / "manifest.csv");
  return {metrics_equal && a == b && checkpoints_equal && compared >= 3 && volumes_equal,
          std::string("metrics ") + (metrics_equal ? "bit-equal" : "differ") + ", reports " +
              (a == b ? "identical" : "differ") + ", " + std::to_string(compared) + " checkpoints " +
              (checkpoints_equal ? "byte-identical" : "differ") + " (MAE " + fmt("%.6f", a.metrics.mae) + ")"};
}

// 9 ------------------------------------------------------------------------

Outcome metric_properties() {
  Rng rng(99);
  std::size_t trials = 0, failures = 0;
  double worst_identity = 0.0;
  for (; trials < 2000; ++trials) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 200));
    std::vector<PredictionRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
      const double age = rng.uniform(1.0, 120.0);
      recs.push_back({"s" + std::to_string(i), age, age + rng.uniform(-30.0, 30.0) * rng.uniform(), {}});
    }
    const Metrics m = compute_metrics(recs);
    const double identity = std::abs(m.rmse * m.rmse - (m.sd * m.sd + m.bias * m.bias));
    worst_identity = std::max(worst_identity, identity / std::max(1.0, m.rmse * m.rmse));
    bool ok = identity <= 1e-9 * std::max(1.0, m.rmse * m.rmse) && m.mae <= m.rmse && m.mae >= 0 && m.sd >= 0;
    const double c = std::ldexp(static_cast<double>(rng.uniform_int(-64, 64)), -3);
    for (auto& r : recs) r.predicted_age += c;
    const Metrics shifted = compute_metrics(recs);
    ok = ok && std::abs(shifted.bias - (m.bias + c)) <= 1e-9 && std::abs(shifted.sd - m.sd) <= 1e-9;
    for (auto& r : recs) r.predicted_age = r.true_age;
    ok = ok && compute_metrics(recs) == Metrics{};
    failures += !ok;
  }
  return {failures == 0, std::to_string(trials) + " random record sets, " + std::to_string(failures) +
                             " failures, worst relative identity gap " + fmt("%.1e", worst_identity)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volreg acceptance suite"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "criteria to run (default: all)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"reference table metric identity", table1},
      {"gradient suite", gradients},
      {"convolution oracle equivalence", conv_oracle},
      {"chunk geometry", chunks},
      {"architecture claims", architecture},
      {"overfit check", [&] { return overfit(work); }},
      {"learnability check", [&] { return learnability(work); }},
      {"determinism", [&] { return determinism(work); }},
      {"metric property suite", metric_properties},
  };
  fs::create_directories(work);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.passed;
    std::printf("%s %d. %s: %s [%.1f s]\n", o.passed ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
