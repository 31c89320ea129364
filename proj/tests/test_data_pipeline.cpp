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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "volreg/dataset.hpp"
#include "volreg/error.hpp"
#include "volreg/volume.hpp"

using namespace volreg;
using volreg::testing::random_tensor;
using volreg::testing::scratch_dir;

namespace {

VolumeSample sample_of(Tensor volume, std::string id = "sub-0001", double age = 40.0) {
  return VolumeSample{std::move(id), std::move(volume), age, Split::kTrain};
}

Manifest fake_manifest(std::size_t n) {
  Manifest m;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "sub-%04zu", i);
    m.records.push_back({id, std::string(id) + ".rvol", 20.0 + static_cast<double>(i), Split::kTrain});
  }
  return m;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("RVOL round trip is bit-identical") {
  const auto dir = scratch_dir("rvol");
  Rng rng(1);
  for (const Shape& shape : {Shape{1, 8, 8, 8}, Shape{1, 5, 7}, Shape{3}}) {
    const Tensor v = random_tensor(shape, rng, -100.0, 100.0);
    save_volume(v, dir / "v.rvol");
    const Tensor back = load_volume(dir / "v.rvol");
    CHECK(back.shape() == v.shape());
    CHECK(std::equal(v.values().begin(), v.values().end(), back.values().begin(),
                     [](float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }));
  }
  const auto bytes = encode_volume(Tensor({1, 2, 2}, 1.0f));
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RVOL");
  CHECK(bytes.size() == 4u + 1u + 1u + 3u * 4u + 4u * 4u);
}

TEST_CASE("RVOL corruption is reported") {
  auto bytes = encode_volume(Tensor({1, 4, 4, 4}, 2.0f));
  auto truncated = bytes;
  truncated.resize(truncated.size() - 10);
  const std::string msg = message_of([&] { decode_volume(truncated, "t.rvol"); });
  CHECK(msg.find("expected 256") != std::string::npos);
  CHECK(msg.find("246") != std::string::npos);
  CHECK_THROWS_AS(decode_volume(truncated), IoError);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_volume(magic), IoError);

  auto nan = bytes;
  const float q = std::nanf("");
  std::memcpy(nan.data() + nan.size() - 4, &q, 4);
  CHECK_THROWS_AS(decode_volume(nan), IoError);
  CHECK_THROWS_AS(encode_volume(Tensor({2}, {1.0f, q})), NumericalError);
  CHECK_THROWS_AS(load_volume(scratch_dir("rvol_missing") / "none.rvol"), IoError);
}

TEST_CASE("brain-sized header") {
  const auto bytes = encode_volume(Tensor({1, 121, 145, 121}));
  const Tensor v = decode_volume(bytes);
  CHECK(v.size() == 2122945u);
}

TEST_CASE("normalize_zmuv") {
  const Tensor two = normalize_zmuv(Tensor({2}, {0, 2}));
  CHECK(two[0] == doctest::Approx(-1.0));
  CHECK(two[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(normalize_zmuv(Tensor({1, 3, 3, 3}, 5.0f)), NumericalError);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor v = random_tensor({1, 6, 5, 4}, rng, -3.0, 40.0);
    const Tensor n = normalize_zmuv(v);
    double mean = 0, sq = 0;
    for (float x : n.values()) mean += x;
    mean /= static_cast<double>(n.size());
    for (float x : n.values()) sq += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(std::sqrt(sq / static_cast<double>(n.size())) - 1.0) < 1e-5);
    const Tensor nn = normalize_zmuv(n);
    for (std::size_t i = 0; i < n.size(); ++i) CHECK(std::abs(nn[i] - n[i]) < 1e-5);
  }
}

TEST_CASE("split_chunks geometry") {
  const ChunkSet brain = split_chunks(sample_of(Tensor({1, 121, 4, 3})), 12);
  CHECK(brain.chunks.size() == 10u);
  CHECK(brain.dropped == 1);
  CHECK(brain.chunks[0].shape() == Shape{1, 12, 4, 3});
  const ChunkSet knee = split_chunks(sample_of(Tensor({1, 28, 3, 3})), 4);
  CHECK(knee.chunks.size() == 7u);
  CHECK(knee.dropped == 0);
  Rng rng(3);
  const Tensor v = random_tensor({1, 5, 3, 2}, rng);
  const ChunkSet whole = split_chunks(sample_of(v), 5);
  REQUIRE(whole.chunks.size() == 1u);
  CHECK(whole.chunks[0] == v);
  CHECK(whole.age == 40.0);
  CHECK_THROWS_AS(split_chunks(sample_of(v), 0), ConfigError);
  CHECK_THROWS_AS(split_chunks(sample_of(v), 6), ConfigError);
  CHECK_THROWS_AS(split_chunks(sample_of(Tensor({1, 5, 3})), 1), ShapeError);
}

TEST_CASE("chunks partition the leading slices") {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const Extent depth = rng.uniform_int(1, 20);
    const Extent d = rng.uniform_int(1, depth);
    const Tensor v = random_tensor({rng.uniform_int(1, 2), depth, 3, 2}, rng);
    const ChunkSet set = split_chunks(sample_of(v), d);
    CHECK(set.chunks.size() == static_cast<std::size_t>(depth / d));
    CHECK(set.dropped == depth % d);
    const Tensor joined = concatenate(std::span<const Tensor>(set.chunks), 1);
    const Extent start[] = {0, 0, 0, 0}, ext[] = {v.extent(0), (depth / d) * d, 3, 2};
    CHECK(joined == crop(v, std::span<const Extent>(start), std::span<const Extent>(ext)));
  }
}

TEST_CASE("extract_slices") {
  const auto brain = extract_slices(sample_of(Tensor({1, 121, 145, 121})));
  CHECK(brain.size() == 121u);
  CHECK(brain[0].volume.shape() == Shape{1, 145, 121});
  CHECK(brain[60].age == 40.0);
  CHECK(brain[60].subject_id == "sub-0001");
  const auto knee = extract_slices(sample_of(Tensor({1, 28, 320, 320})));
  CHECK(knee.size() == 28u);
  CHECK(knee[27].volume.shape() == Shape{1, 320, 320});
  Rng rng(5);
  const Tensor one = random_tensor({1, 1, 4, 3}, rng);
  const auto single = extract_slices(sample_of(one));
  REQUIRE(single.size() == 1u);
  CHECK(single[0].volume.values() == one.values());
  const Tensor v = random_tensor({1, 3, 2, 2}, rng);
  const auto slices = extract_slices(sample_of(v));
  CHECK(slices[2].volume[3] == v.at(0, 2, 1, 1));
}

TEST_CASE("augmentation identity and flip") {
  Rng rng(6);
  const Tensor v = random_tensor({1, 4, 5, 6}, rng);
  AugmentConfig none;
  none.flip_probability = 0.0;
  none.max_translation = {0};
  Rng r1(1);
  CHECK(augment(v, none, r1) == v);
  AugmentConfig flip = none;
  flip.flip_probability = 1.0;
  Rng r2(2);
  CHECK(augment(v, flip, r2) == volreg::flip(v, 3));

  AugmentConfig bad = none;
  bad.max_translation = {4};
  CHECK_THROWS_AS(augment(v, bad, r2), ConfigError);
  bad.max_translation = {1, 1};
  CHECK_THROWS_AS(augment(v, bad, r2), ConfigError);
  bad = none;
  bad.flip_probability = 1.5;
  CHECK_THROWS_AS(augment(v, bad, r2), ConfigError);
}

TEST_CASE("augmentation offsets stay in bounds and are uniform") {
  AugmentConfig cfg;
  cfg.flip_probability = 0.3;
  cfg.max_translation = {2};
  Rng rng(7);
  std::vector<int> hist(5, 0);
  int flips = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const AugmentDraw d = draw_augmentation(cfg, {1, 8, 8, 8}, rng);
    REQUIRE(d.offsets.size() == 3u);
    for (Extent o : d.offsets) {
      REQUIRE(std::abs(o) <= 2);
      ++hist[static_cast<std::size_t>(o + 2)];
    }
    flips += d.flipped;
  }
  for (int h : hist) CHECK(std::abs(h / (3.0 * n) - 0.2) < 0.01);
  CHECK(std::abs(flips / static_cast<double>(n) - 0.3) < 0.015);
}

TEST_CASE("augmentation transcript is frozen") {
  AugmentConfig cfg;
  cfg.flip_probability = 0.5;
  cfg.max_translation = {2, 3, 4};
  Rng rng = Rng::derive(7, "sub-0001", 3);
  const std::vector<std::pair<bool, std::vector<Extent>>> expected{
      {false, {1, 3, -2}}, {false, {-1, -3, 3}}, {false, {-2, 0, -2}},
      {false, {0, 2, 3}},  {true, {0, 1, -1}},   {true, {2, 3, -4}},
  };
  for (const auto& [flipped, offsets] : expected) {
    const AugmentDraw d = draw_augmentation(cfg, {1, 12, 12, 12}, rng);
    CHECK(d.flipped == flipped);
    CHECK(d.offsets == offsets);
  }
}

TEST_CASE("augmentation applies shift then keeps labels") {
  Tensor v({1, 1, 1, 4}, {1, 2, 3, 4});
  CHECK(apply_augmentation(v, {false, {0, 0, 1}}) == Tensor({1, 1, 1, 4}, {0, 1, 2, 3}));
  CHECK(apply_augmentation(v, {true, {0, 0, 0}}) == Tensor({1, 1, 1, 4}, {4, 3, 2, 1}));
}

TEST_CASE("phantom mass follows the linear age model") {
  PhantomConfig cfg;
  cfg.noise = 0.0;
  Rng rng(8);
  const Tensor v = phantom_volume(cfg, cfg.intercept + cfg.slope * 50.0, rng);
  CHECK(v.shape() == Shape{1, 12, 12, 12});
  CHECK(std::abs(sum(v) - 1500.0) <= 1e-3 * 1500.0);

  std::vector<double> ages, masses;
  for (std::size_t i = 0; i < 64; ++i) {
    const PhantomSubject s = make_phantom(cfg, i);
    const double mass = sum(s.volume);
    CHECK(std::abs(mass - (cfg.intercept + cfg.slope * s.age)) <= 1e-3 * std::abs(mass));
    CHECK(s.age >= cfg.age_min);
    CHECK(s.age <= cfg.age_max);
    ages.push_back(s.age);
    masses.push_back(mass);
  }
  // Ordinary least squares slope of mass against age.
  const double n = 64.0;
  double ma = 0, mm = 0;
  for (std::size_t i = 0; i < ages.size(); ++i) {
    ma += ages[i] / n;
    mm += masses[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ages.size(); ++i) {
    sxy += (ages[i] - ma) * (masses[i] - mm);
    sxx += (ages[i] - ma) * (ages[i] - ma);
  }
  CHECK(std::abs(sxy / sxx - cfg.slope) <= 0.01 * std::abs(cfg.slope));
}

TEST_CASE("phantom subjects are reproducible and honour degenerate ranges") {
  PhantomConfig cfg;
  const PhantomSubject a = make_phantom(cfg, 3), b = make_phantom(cfg, 3), c = make_phantom(cfg, 4);
  CHECK(a.volume == b.volume);
  CHECK(a.age == b.age);
  CHECK(a.volume != c.volume);
  cfg.age_min = cfg.age_max = 42.0;
  for (std::size_t i = 0; i < 10; ++i) CHECK(make_phantom(cfg, i).age == 42.0);

  PhantomConfig bad;
  bad.slope = 1.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = PhantomConfig{};
  bad.age_min = 90.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  const auto doc = nlohmann::json::parse(to_json(PhantomConfig{}).dump());
  CHECK(phantom_config_from_json(doc) == PhantomConfig{});
  auto extra = doc;
  extra["colour"] = 1;
  CHECK_THROWS_AS(phantom_config_from_json(extra), ConfigError);
}

TEST_CASE("split_dataset") {
  const Manifest m = fake_manifest(10);
  const Manifest s = split_dataset(m, {6, 2, 2}, 1);
  CHECK(s.count(Split::kTrain) == 6u);
  CHECK(s.count(Split::kVal) == 2u);
  CHECK(s.count(Split::kTest) == 2u);
  const Manifest again = split_dataset(m, {6, 2, 2}, 1);
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    CHECK(s.records[i].subject_id == again.records[i].subject_id);
    CHECK(s.records[i].split == again.records[i].split);
  }
  CHECK_THROWS_AS(split_dataset(m, {8, 2, 2}, 1), ConfigError);
}

TEST_CASE("split_dataset is disjoint for every seed") {
  const Manifest m = fake_manifest(30);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Manifest s = split_dataset(m, {20, 5, 4}, seed);
    std::set<std::string> seen;
    for (const auto& r : s.records) CHECK(seen.insert(r.subject_id).second);
    CHECK(s.count(Split::kTrain) == 20u);
    CHECK(s.count(Split::kVal) == 5u);
    CHECK(s.count(Split::kTest) == 4u);
    for (const auto& r : s.records) {
      const auto& orig = *std::find_if(m.records.begin(), m.records.end(),
                                       [&](const ManifestRecord& o) { return o.subject_id == r.subject_id; });
      CHECK(orig.age == r.age);
    }
  }
}

TEST_CASE("manifest CSV and phantom generation") {
  const auto dir = scratch_dir("phantoms");
  PhantomConfig cfg;
  cfg.counts = {6, 2, 2};
  const Manifest m = generate_phantoms(cfg, dir);
  CHECK(m.records.size() == 10u);
  CHECK(m.count(Split::kVal) == 2u);
  const Manifest back = read_manifest(dir / "manifest.csv");
  REQUIRE(back.records.size() == m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].subject_id == m.records[i].subject_id);
    CHECK(back.records[i].age == m.records[i].age);
    CHECK(back.records[i].split == m.records[i].split);
    const VolumeSample s = load_sample(back, back.records[i]);
    CHECK(s.volume.shape() == Shape{1, 12, 12, 12});
    CHECK(s.age == m.records[i].age);
  }
  std::ifstream in(dir / "manifest.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "subject_id,path,age_years,split");

  Manifest dup = m;
  dup.records[1].subject_id = dup.records[0].subject_id;
  CHECK_THROWS_AS(validate(dup), ConfigError);
  Manifest old = m;
  old.records[0].age = 130.0;
  CHECK_THROWS_AS(validate(old), ConfigError);

  std::filesystem::remove(dir / "volumes" / (m.records[0].subject_id + ".rvol"));
  CHECK_THROWS_AS(read_manifest(dir / "manifest.csv"), IoError);
}
