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

#include "volreg/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "volreg/error.hpp"
#include "volreg/json_util.hpp"

namespace volreg {
namespace {

constexpr const char* kManifestHeader = "subject_id,path,age_years,split";

std::string format_double(double v) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), v);
  if (result.ec != std::errc() || result.ptr != text.data() + text.size()) {
    throw ConfigError(where + ": '" + text + "' is not a number");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::size_t Manifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const ManifestRecord& r) { return r.split == split; }));
}

std::vector<ManifestRecord> Manifest::select(Split split) const {
  std::vector<ManifestRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const ManifestRecord& r) { return r.split == split; });
  return out;
}

void validate(const Manifest& manifest) {
  std::set<std::string> seen;
  for (const auto& r : manifest.records) {
    if (r.subject_id.empty() || r.subject_id.find_first_of(",\n\r") != std::string::npos) {
      throw ConfigError("manifest: invalid subject id '" + r.subject_id + "'");
    }
    if (!seen.insert(r.subject_id).second) throw ConfigError("manifest: duplicate subject id '" + r.subject_id + "'");
    if (!(r.age > 0.0 && r.age < 130.0)) {
      throw ConfigError("manifest: age " + format_double(r.age) + " of " + r.subject_id + " outside (0, 130)");
    }
  }
}

Manifest read_manifest(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open manifest " + csv.string());
  Manifest manifest;
  manifest.base_dir = csv.parent_path();
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw IoError(csv.string() + ": expected header '" + std::string(kManifestHeader) + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = csv.string() + ":" + std::to_string(line_no);
    if (fields.size() != 4) throw IoError(where + ": expected 4 fields, found " + std::to_string(fields.size()));
    manifest.records.push_back({fields[0], fields[1], parse_double(fields[2], where), parse_split(fields[3])});
  }
  validate(manifest);
  for (const auto& r : manifest.records) {
    if (!std::filesystem::exists(manifest.resolve(r))) {
      throw IoError("manifest: volume for " + r.subject_id + " not found at " + manifest.resolve(r).string());
    }
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& csv) {
  validate(manifest);
  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + csv.string());
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    out << r.subject_id << ',' << r.path.generic_string() << ',' << format_double(r.age) << ',' << to_string(r.split)
        << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + csv.string());
}

VolumeSample load_sample(const Manifest& manifest, const ManifestRecord& record) {
  return {record.subject_id, load_volume(manifest.resolve(record)), record.age, record.split};
}

Manifest split_dataset(const Manifest& manifest, const SplitCounts& counts, std::uint64_t seed) {
  const std::size_t wanted = counts.train + counts.val + counts.test;
  if (wanted > manifest.records.size()) {
    throw ConfigError("split_dataset: requested " + std::to_string(wanted) + " subjects but only " +
                      std::to_string(manifest.records.size()) + " are available");
  }
  std::vector<std::size_t> order(manifest.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  Manifest out;
  out.base_dir = manifest.base_dir;
  for (std::size_t k = 0; k < wanted; ++k) {
    ManifestRecord r = manifest.records[order[k]];
    r.split = k < counts.train ? Split::kTrain : (k < counts.train + counts.val ? Split::kVal : Split::kTest);
    out.records.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

void validate(const PhantomConfig& c) {
  if (c.grid.size() != 3) throw ConfigError("phantom.grid must list 3 extents (D, H, W)");
  for (Extent e : c.grid) {
    if (e < 1) throw ConfigError("phantom.grid extents must be positive");
  }
  if (!(c.slope < 0.0)) throw ConfigError("phantom.slope must be negative (mass declines with age)");
  if (!(c.age_min > 0.0 && c.age_max < 130.0 && c.age_min <= c.age_max)) {
    throw ConfigError("phantom ages need 0 < age_min <= age_max < 130");
  }
  if (!(c.age_spread >= 0.0) || !(c.noise >= 0.0) || !(c.texture >= 0.0)) {
    throw ConfigError("phantom age_spread, noise and texture must be non-negative");
  }
  if (!(c.blob_fraction > 0.0)) throw ConfigError("phantom.blob_fraction must be positive");
  if (!(c.intercept + c.slope * c.age_max > 0.0)) {
    throw ConfigError("phantom mass intercept + slope * age_max must stay positive");
  }
  if (c.counts.train + c.counts.val + c.counts.test == 0) throw ConfigError("phantom.counts must request subjects");
}

nlohmann::ordered_json to_json(const PhantomConfig& c) {
  return nlohmann::ordered_json{{"grid", c.grid},
                                {"age_mean", c.age_mean},
                                {"age_spread", c.age_spread},
                                {"age_min", c.age_min},
                                {"age_max", c.age_max},
                                {"slope", c.slope},
                                {"intercept", c.intercept},
                                {"noise", c.noise},
                                {"texture", c.texture},
                                {"blob_fraction", c.blob_fraction},
                                {"seed", c.seed},
                                {"counts", {c.counts.train, c.counts.val, c.counts.test}}};
}

PhantomConfig phantom_config_from_json(const nlohmann::json& doc) {
  const std::string path = "phantom";
  reject_unknown_keys(doc, {"grid", "age_mean", "age_spread", "age_min", "age_max", "slope", "intercept", "noise",
                            "texture", "blob_fraction", "seed", "counts"},
                      path);
  PhantomConfig c;
  read_optional(doc, "grid", c.grid, path);
  read_optional(doc, "age_mean", c.age_mean, path);
  read_optional(doc, "age_spread", c.age_spread, path);
  read_optional(doc, "age_min", c.age_min, path);
  read_optional(doc, "age_max", c.age_max, path);
  read_optional(doc, "slope", c.slope, path);
  read_optional(doc, "intercept", c.intercept, path);
  read_optional(doc, "noise", c.noise, path);
  read_optional(doc, "texture", c.texture, path);
  read_optional(doc, "blob_fraction", c.blob_fraction, path);
  read_optional(doc, "seed", c.seed, path);
  std::array<std::size_t, 3> counts{c.counts.train, c.counts.val, c.counts.test};
  read_optional(doc, "counts", counts, path);
  c.counts = {counts[0], counts[1], counts[2]};
  validate(c);
  return c;
}

double sample_age(const PhantomConfig& c, Rng& rng) {
  if (c.age_min == c.age_max) return c.age_min;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double age = rng.normal(c.age_mean, c.age_spread);
    if (age >= c.age_min && age <= c.age_max) return age;
  }
  return std::clamp(c.age_mean, c.age_min, c.age_max);
}

Tensor phantom_volume(const PhantomConfig& c, double mass, Rng& rng) {
  const Extent depth = c.grid[0], height = c.grid[1], width = c.grid[2];
  const std::size_t n = static_cast<std::size_t>(depth * height * width);

  std::vector<double> blob(n);
  double blob_total = 0.0;
  const double sz = std::max(0.5, c.blob_fraction * static_cast<double>(depth));
  const double sy = std::max(0.5, c.blob_fraction * static_cast<double>(height));
  const double sx = std::max(0.5, c.blob_fraction * static_cast<double>(width));
  std::size_t i = 0;
  for (Extent z = 0; z < depth; ++z) {
    const double dz = (static_cast<double>(z) - 0.5 * static_cast<double>(depth - 1)) / sz;
    for (Extent y = 0; y < height; ++y) {
      const double dy = (static_cast<double>(y) - 0.5 * static_cast<double>(height - 1)) / sy;
      for (Extent x = 0; x < width; ++x, ++i) {
        const double dx = (static_cast<double>(x) - 0.5 * static_cast<double>(width - 1)) / sx;
        blob[i] = std::exp(-0.5 * (dz * dz + dy * dy + dx * dx));
        blob_total += blob[i];
      }
    }
  }

  // Texture: smoothed white noise, made exactly zero-sum and scaled to the
  // requested standard deviation.
  Tensor64 noise(Shape{1, depth, height, width});
  for (double& v : noise.data()) v = rng.uniform(-1.0, 1.0);
  const double fwhm = 2.0;
  noise = gaussian_smooth(noise, std::span<const double>(&fwhm, 1));
  const double mean = sum(noise) / static_cast<double>(n);
  double var = 0.0;
  for (double& v : noise.data()) {
    v -= mean;
    var += v * v;
  }
  const double scale = var > 0.0 ? c.texture / std::sqrt(var / static_cast<double>(n)) : 0.0;

  Tensor volume(Shape{1, depth, height, width});
  for (std::size_t k = 0; k < n; ++k) volume[k] = static_cast<float>(mass * blob[k] / blob_total + scale * noise[k]);
  return volume;
}

PhantomSubject make_phantom(const PhantomConfig& c, std::size_t index) {
  Rng rng = Rng::derive(c.seed, "phantom", index);
  PhantomSubject s;
  char id[32];
  std::snprintf(id, sizeof(id), "sub-%04zu", index + 1);
  s.subject_id = id;
  s.age = sample_age(c, rng);
  s.mass = c.intercept + c.slope * s.age + c.noise * rng.normal();
  s.volume = phantom_volume(c, s.mass, rng);
  return s;
}

Manifest generate_phantoms(const PhantomConfig& c, const std::filesystem::path& out_dir) {
  validate(c);
  const std::size_t total = c.counts.train + c.counts.val + c.counts.test;
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "volumes", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "volumes").string() + ": " + ec.message());

  Manifest all;
  all.base_dir = out_dir;
  for (std::size_t i = 0; i < total; ++i) {
    PhantomSubject s = make_phantom(c, i);
    const std::filesystem::path rel = std::filesystem::path("volumes") / (s.subject_id + ".rvol");
    save_volume(s.volume, out_dir / rel);
    all.records.push_back({s.subject_id, rel, s.age, Split::kTrain});
  }
  Manifest manifest = split_dataset(all, c.counts, c.seed);
  std::sort(manifest.records.begin(), manifest.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.subject_id < b.subject_id; });
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace volreg
