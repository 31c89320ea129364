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

#include "cli.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <sstream>

#include "CLI11.hpp"
#include "volreg/digest.hpp"
#include "volreg/error.hpp"
#include "volreg/gradcheck.hpp"
#include "volreg/json_util.hpp"
#include "volreg/metrics.hpp"
#include "volreg/optim.hpp"

namespace volreg::cli {
namespace {

struct Flags {
  std::string config;
  std::string mode;
  Extent chunk_depth = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string checkpoint;
  std::string manifest;
  bool tiny = false;
  int dims = 3;
  std::string split;
  bool corrupt_conv_backward = false;

  bool has_chunk_depth = false;
  bool has_seed = false;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const nlohmann::ordered_json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

RunConfig resolve_config(const Flags& flags) {
  RunConfig c = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
  if (!flags.mode.empty()) c.train.mode = parse_feed_mode(flags.mode);
  if (flags.has_chunk_depth) c.train.chunk_depth = flags.chunk_depth;
  if (flags.has_seed) {
    c.train.seed = flags.seed;
    c.phantom.seed = flags.seed;
  }
  if (flags.tiny) {
    c.preset = "tiny";
    c.spec.reset();
    c.network_given = true;
  }
  if (!flags.manifest.empty()) c.paths.manifest = flags.manifest;
  if (!flags.checkpoint.empty()) c.paths.checkpoint = flags.checkpoint;
  if (!flags.split.empty()) c.eval_split = parse_split(flags.split);
  validate(c.train);
  return c;
}

int dimensionality_for(FeedMode mode) { return mode == FeedMode::kSlice2d ? 2 : 3; }

Manifest open_manifest(const RunConfig& c) {
  const auto path = c.paths.manifest_path();
  if (!std::filesystem::exists(path)) throw ConfigError("manifest not found: " + path.string());
  return read_manifest(path);
}

// ---------------------------------------------------------------------------

int cmd_generate(const Flags& flags, std::ostream& out) {
  RunConfig c = resolve_config(flags);
  if (!flags.out.empty()) c.paths.data_dir = flags.out;
  const auto& dir = c.paths.data_dir;
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError("output directory does not exist: " + dir.string());
  }
  const Manifest manifest = generate_phantoms(c.phantom, dir);
  nlohmann::ordered_json provenance{{"command", "generate"},
                                    {"seed", c.phantom.seed},
                                    {"subjects", manifest.records.size()},
                                    {"counts",
                                     {{"train", manifest.count(Split::kTrain)},
                                      {"val", manifest.count(Split::kVal)},
                                      {"test", manifest.count(Split::kTest)}}},
                                    {"config", to_json(c)},
                                    {"created_utc", utc_now()}};
  write_json(provenance, dir / "provenance.json");
  out << "generated " << manifest.records.size() << " phantom subjects (" << manifest.count(Split::kTrain) << " train, "
      << manifest.count(Split::kVal) << " val, " << manifest.count(Split::kTest) << " test) in " << dir.string()
      << "\n";
  return kExitOk;
}

int cmd_train(const Flags& flags, std::ostream& out) {
  RunConfig c = resolve_config(flags);
  if (!flags.out.empty()) c.paths.out_dir = flags.out;
  const Manifest manifest = open_manifest(c);
  const bool resume = !flags.checkpoint.empty();
  if (resume && !std::filesystem::exists(c.paths.checkpoint)) {
    throw ConfigError("checkpoint not found: " + c.paths.checkpoint.string());
  }

  const auto train_records = manifest.select(Split::kTrain);
  if (train_records.empty()) throw ConfigError("the train split is empty");
  std::vector<Tensor> probes;
  for (const auto& r : train_records) {
    if (probes.size() == 4) break;
    VolumeSample s = load_sample(manifest, r);
    if (c.train.normalize) s.volume = normalize_zmuv(s.volume);
    probes.push_back(feed_pieces(s, c.train.mode, c.train.chunk_depth).front());
  }
  const NetworkSpec spec = with_input_shape(resolve_spec(c, dimensionality_for(c.train.mode)), probes.front().shape());

  TrainState state;
  Network<float> net;
  if (resume) {
    Rng rng(0);
    net = Network<float>::build(spec, rng);
    state.epoch = load_checkpoint(c.paths.checkpoint, net, &state.optimizer);
    out << "resuming from " << c.paths.checkpoint.string() << " after epoch " << state.epoch << "\n";
  } else {
    std::size_t attempts = 0;
    net = initialize_network(spec, c.train.seed, probes, 64, &attempts);
    if (attempts > 1) out << "initialization redrawn " << attempts - 1 << " time(s) to avoid a dead network\n";
  }
  out << "network: " << net.parameter_count() << " parameters, input " << to_string(spec.input_shape) << "\n";

  std::filesystem::create_directories(c.paths.out_dir);
  write_json(to_json(c), c.paths.out_dir / "run_config.json");

  TrainOptions options;
  options.out_dir = c.paths.out_dir;
  options.log = [&](const std::string& line) { out << line << "\n"; };
  options.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " " << r.split << " loss " << fixed(r.loss, 4) << " mae " << fixed(r.mae, 4) << "\n";
  };
  train(net, manifest, c.train, state, options);

  const MetricsReport fit = evaluate(net, manifest, Split::kTrain, c.train.mode, c.train.chunk_depth,
                                     c.train.normalize, settings_fingerprint(c), c.train.threads);
  out << "final train MAE " << fixed(fit.metrics.mae, 4) << "\n";
  out << "checkpoint " << (c.paths.out_dir / "final.rckp").string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const Flags& flags, std::ostream& out) {
  RunConfig c = resolve_config(flags);
  const std::filesystem::path report_dir = flags.out.empty() ? c.paths.out_dir : std::filesystem::path(flags.out);
  const auto ckpt_path = c.paths.checkpoint_path();
  if (!std::filesystem::exists(ckpt_path)) throw ConfigError("checkpoint not found: " + ckpt_path.string());
  const Manifest manifest = open_manifest(c);
  if (manifest.count(c.eval_split) == 0) throw ConfigError("the " + to_string(c.eval_split) + " split is empty");

  std::ifstream in(ckpt_path, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const Checkpoint ckpt = decode_checkpoint(bytes, ckpt_path.string());

  Network<float> net;
  if (c.network_given) {
    // The caller named a network; it has to agree with the stored weights.
    NetworkSpec spec = resolve_spec(c, dimensionality_for(c.train.mode));
    const NetworkSpec stored = spec_from_json(nlohmann::json::parse(ckpt.spec_json));
    spec = with_input_shape(spec, stored.input_shape.size() == spec.input_shape.size() ? stored.input_shape
                                                                                         : spec.input_shape);
    Rng rng(0);
    net = Network<float>::build(spec, rng);
    restore(ckpt, net, nullptr);
  } else {
    net = network_from_checkpoint(ckpt);
  }

  nlohmann::ordered_json fp{{"settings", settings_fingerprint(c)},
                            {"checkpoint", hex64(fnv1a(std::as_bytes(std::span(bytes))))}};
  const MetricsReport report = evaluate(net, manifest, c.eval_split, c.train.mode, c.train.chunk_depth,
                                        c.train.normalize, fingerprint(fp), c.train.threads);
  std::filesystem::create_directories(report_dir);
  const auto path = report_dir / ("report-" + to_string(c.train.mode) + ".json");
  emit_report(report, path);
  out << "split " << report.split << ", mode " << report.mode << ", " << report.records.size() << " subjects\n";
  out << "MAE SD Bias RMSE\n" << format_metrics_row(report.metrics) << "\n";
  out << "report " << path.string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Flags& flags, std::ostream& out) {
  GradCheckSuiteOptions options;
  options.corrupt_conv_backward = flags.corrupt_conv_backward;
  const auto reports = run_gradcheck_suite(options);
  bool all = true;
  out << std::left << std::setw(28) << "check" << std::setw(14) << "max_rel_err" << std::setw(11) << "tolerance"
      << std::setw(9) << "checked" << std::setw(9) << "skipped" << "status\n";
  for (const auto& r : reports) {
    char err[32], tol[32];
    std::snprintf(err, sizeof(err), "%.3e", r.max_rel_error);
    std::snprintf(tol, sizeof(tol), "%.0e", r.tolerance);
    out << std::left << std::setw(28) << r.name << std::setw(14) << err << std::setw(11) << tol << std::setw(9)
        << r.checked << std::setw(9) << r.skipped << (r.passed ? "PASS" : "FAIL") << "\n";
    all = all && r.passed;
  }
  out << (all ? "all checks passed" : "gradient check FAILED") << "\n";
  return all ? kExitOk : kExitNumerical;
}

int cmd_summary(const Flags& flags, std::ostream& out) {
  RunConfig c = resolve_config(flags);
  const NetworkSpec spec = resolve_spec(c, flags.dims);
  validate(spec);
  const auto rows = infer_shapes(spec);
  out << spec.dimensionality << "D network, input " << to_string(spec.input_shape) << "\n\n";
  std::vector<std::array<std::string, 5>> table{{"layer", "kind", "kernel", "output", "parameters"}};
  for (const auto& r : rows) table.push_back({r.name, r.kind, r.kernel, to_string(r.output), std::to_string(r.parameters)});
  std::array<std::size_t, 5> width{};
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size() + 2);
  }
  for (const auto& row : table) {
    for (std::size_t i = 0; i + 1 < row.size(); ++i) out << std::left << std::setw(static_cast<int>(width[i])) << row[i];
    out << row.back();
    out << "\n";
  }
  const ParameterCount count = count_parameters(spec);
  out << "\ntotal parameters " << count.total << "\n";
  for (const auto& r : rows) {
    if (r.name == "gap") out << "GAP features " << r.output.front() << "\n";
  }
  out << "\nfire module vs plain " << (spec.dimensionality == 3 ? "3x3x3" : "3x3") << " convolution\n";
  for (std::size_t i = 0; i < spec.modules.size(); ++i) {
    const FireSpec& f = spec.modules[i].fire;
    const std::size_t fire = fire_parameter_count(f, spec.dimensionality);
    const std::size_t plain = plain_conv_parameter_count(f, spec.dimensionality);
    out << "module" << i + 1 << " " << f.in_channels << "->" << f.out_channels() << " fire " << fire << " plain "
        << plain << " ratio " << fixed(static_cast<double>(fire) / static_cast<double>(plain), 4) << "\n";
  }
  return kExitOk;
}

int cmd_verify_table1(std::ostream& out) {
  const auto checks = verify_table1_identity(table1_rows());
  bool all = true;
  out << std::left << std::setw(7) << "data" << std::setw(14) << "model" << std::setw(8) << "MAE" << std::setw(8)
      << "SD" << std::setw(8) << "Bias" << std::setw(8) << "RMSE" << std::setw(10) << "derived" << "status\n";
  for (const auto& ch : checks) {
    out << std::left << std::setw(7) << ch.row.dataset << std::setw(14) << ch.row.model << std::setw(8)
        << fixed(ch.row.mae, 3) << std::setw(8) << fixed(ch.row.sd, 3) << std::setw(8) << fixed(ch.row.bias, 3)
        << std::setw(8) << fixed(ch.row.rmse, 3) << std::setw(10) << fixed(ch.derived_rmse, 4)
        << (ch.passed() ? "PASS" : "FAIL") << "\n";
    all = all && ch.passed();
  }
  out << (all ? "all rows satisfy RMSE^2 = SD^2 + bias^2 (tolerance 0.005) and MAE <= RMSE"
              : "table identity check FAILED")
      << "\n";
  return all ? kExitOk : kExitNumerical;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  reject_unknown_keys(doc, {"network", "train", "augment", "phantom", "evaluate", "paths"}, "");
  RunConfig c;
  if (auto it = doc.find("network"); it != doc.end()) {
    reject_unknown_keys(*it, {"preset", "spec"}, "network");
    read_optional(*it, "preset", c.preset, "network");
    if (c.preset != "default" && c.preset != "tiny") {
      throw ConfigError("network.preset must be \"default\" or \"tiny\", got \"" + c.preset + "\"");
    }
    if (auto s = it->find("spec"); s != it->end()) c.spec = spec_from_json(*s);
    c.network_given = true;
  }
  if (auto it = doc.find("train"); it != doc.end()) c.train = train_config_from_json(*it, "train");
  if (auto it = doc.find("augment"); it != doc.end()) c.train.augmentation = augment_config_from_json(*it, "augment");
  if (auto it = doc.find("phantom"); it != doc.end()) c.phantom = phantom_config_from_json(*it);
  if (auto it = doc.find("evaluate"); it != doc.end()) {
    reject_unknown_keys(*it, {"split"}, "evaluate");
    std::string split = to_string(c.eval_split);
    read_optional(*it, "split", split, "evaluate");
    c.eval_split = parse_split(split);
  }
  if (auto it = doc.find("paths"); it != doc.end()) {
    reject_unknown_keys(*it, {"data_dir", "manifest", "out_dir", "checkpoint"}, "paths");
    for (const char* key : {"data_dir", "manifest", "out_dir", "checkpoint"}) {
      std::string value;
      read_optional(*it, key, value, "paths");
      if (value.empty()) continue;
      const auto p = resolve(base_dir, value);
      const std::string k = key;
      if (k == "data_dir") c.paths.data_dir = p;
      if (k == "manifest") c.paths.manifest = p;
      if (k == "out_dir") c.paths.out_dir = p;
      if (k == "checkpoint") c.paths.checkpoint = p;
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc, path.parent_path());
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json network{{"preset", c.preset}};
  if (c.spec) network["spec"] = to_json(*c.spec);
  return nlohmann::ordered_json{{"network", network},
                                {"train", to_json(c.train)},
                                {"augment", to_json(c.train.augmentation)},
                                {"phantom", to_json(c.phantom)},
                                {"evaluate", {{"split", to_string(c.eval_split)}}},
                                {"paths",
                                 {{"data_dir", c.paths.data_dir.string()},
                                  {"manifest", c.paths.manifest_path().string()},
                                  {"out_dir", c.paths.out_dir.string()},
                                  {"checkpoint", c.paths.checkpoint_path().string()}}}};
}

std::string settings_fingerprint(const RunConfig& c) {
  nlohmann::ordered_json doc = to_json(c);
  doc.erase("paths");
  return fingerprint(doc);
}

NetworkSpec resolve_spec(const RunConfig& c, int dimensionality) {
  if (c.spec) {
    if (c.spec->dimensionality != dimensionality) {
      throw ConfigError("network.spec is " + std::to_string(c.spec->dimensionality) + "D but the run needs a " +
                        std::to_string(dimensionality) + "D network");
    }
    return *c.spec;
  }
  return c.preset == "tiny" ? tiny_spec(dimensionality) : default_spec(dimensionality);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"volreg: volumetric age regression with inception/fire networks"};
  app.require_subcommand(1);
  Flags flags;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config, "run configuration (JSON)");
    cmd->add_option("--seed", flags.seed, "seed for phantoms, initialization and training")
        ->each([&](const std::string&) { flags.has_seed = true; });
    cmd->add_flag("--tiny", flags.tiny, "use the tiny network preset");
  };
  auto add_data = [&](CLI::App* cmd) {
    cmd->add_option("--mode", flags.mode, "feeding mode")->check(CLI::IsMember({"full", "chunk", "slice2d"}));
    cmd->add_option("--chunk-depth", flags.chunk_depth, "chunk depth in slices")
        ->check(CLI::PositiveNumber)
        ->each([&](const std::string&) { flags.has_chunk_depth = true; });
    cmd->add_option("--manifest", flags.manifest, "dataset manifest CSV");
    cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint to resume from / evaluate");
  };

  auto* generate = app.add_subcommand("generate", "write a synthetic phantom dataset");
  add_common(generate);
  generate->add_option("--out", flags.out, "existing output directory");

  auto* train_cmd = app.add_subcommand("train", "train a network");
  add_common(train_cmd);
  add_data(train_cmd);
  train_cmd->add_option("--out", flags.out, "run directory for checkpoints and the loss log");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint and write a metrics report");
  add_common(evaluate_cmd);
  add_data(evaluate_cmd);
  evaluate_cmd->add_option("--out", flags.out, "directory for the report");
  evaluate_cmd->add_option("--split", flags.split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer and the tiny network");
  gradcheck->add_flag("--corrupt-conv-backward", flags.corrupt_conv_backward)->group("");

  auto* summary = app.add_subcommand("summary", "layer shapes and parameter counts");
  add_common(summary);
  summary->add_option("--dims", flags.dims, "2 or 3")->check(CLI::IsMember({2, 3}));

  auto* verify = app.add_subcommand("verify-table1", "check the reference metric table for internal consistency");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*generate) return cmd_generate(flags, out);
    if (*train_cmd) return cmd_train(flags, out);
    if (*evaluate_cmd) return cmd_evaluate(flags, out);
    if (*gradcheck) return cmd_gradcheck(flags, out);
    if (*summary) return cmd_summary(flags, out);
    if (*verify) return cmd_verify_table1(out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"volreg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace volreg::cli
