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

#include "volreg/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "volreg/digest.hpp"
#include "volreg/error.hpp"

namespace volreg {
namespace {

constexpr char kMagic[4] = {'R', 'C', 'K', 'P'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void floats(const Tensor& t) {
    for (float f : t.values()) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::uint64_t digest_from(std::size_t begin) const {
    return fnv1a(std::as_bytes(std::span(bytes.data() + begin, bytes.size() - begin)));
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint32_t n = u32();
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  Tensor floats(const Shape& shape) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(u32());
    return t;
  }
  std::size_t offset() const { return pos_; }
  std::uint64_t digest_from(std::size_t begin) const {
    return fnv1a(std::as_bytes(std::span(bytes_.data() + begin, pos_ - begin)));
  }
  [[noreturn]] void fail(const std::string& what) const { throw IoError(source_ + ": " + what); }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) fail("truncated checkpoint");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void validate(const AdamConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("learning_rate must be finite and >= 0");
  }
  if (!(c.beta1 > 0.0 && c.beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
  if (!(c.beta2 > 0.0 && c.beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
  if (!(c.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
}

OptimizerState OptimizerState::zeros_for(const Network<float>& net) {
  OptimizerState s;
  for (const auto& p : net.parameters()) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

void adam_step(Network<float>& net, OptimizerState& state, const AdamConfig& c) {
  auto& params = net.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("optimizer state does not match the network parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k].value;
    const Tensor& g = params[k].gradient;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (m.shape() != w.shape() || v.shape() != w.shape() || g.shape() != w.shape()) {
      throw ShapeError("optimizer moment shape mismatch at " + params[k].name);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      if (c.learning_rate == 0.0) continue;
      const double step = c.learning_rate * (mi / correct1) / (std::sqrt(vi / correct2) + c.epsilon);
      w[i] = static_cast<float>(w[i] - step);
    }
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net, const OptimizerState& state,
                                            std::uint64_t epoch) {
  const auto& params = net.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("optimizer state does not match the network parameters");
  }
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u64(epoch);
  w.u64(state.step);
  w.f64(net.label_scale().offset);
  w.f64(net.label_scale().scale);
  w.text(to_json(net.spec()).dump());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& value = params[k].value;
    w.text(params[k].name);
    w.u8(static_cast<std::uint8_t>(value.rank()));
    for (Extent e : value.shape()) w.u32(static_cast<std::uint32_t>(e));
    const std::size_t begin = w.bytes.size();
    w.floats(value);
    w.floats(state.m[k]);
    w.floats(state.v[k]);
    w.u64(w.digest_from(begin));
  }
  w.u64(w.digest_from(0));
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) r.fail("bad magic, not an RCKP checkpoint");
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  // Whole-file digest first so that corruption anywhere is reported as such.
  if (bytes.size() < 8) r.fail("truncated checkpoint");
  {
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
    const auto body = std::as_bytes(std::span(bytes.data(), bytes.size() - 8));
    if (fnv1a(body) != stored) r.fail("checkpoint digest mismatch (file corrupted)");
  }
  Checkpoint ck;
  ck.epoch = r.u64();
  ck.optimizer.step = r.u64();
  ck.label_scale.offset = r.f64();
  ck.label_scale.scale = r.f64();
  ck.spec_json = r.text();
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.text();
    const std::size_t rank = r.u8();
    if (rank < 1 || rank > 5) r.fail("invalid rank for parameter " + name);
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    const std::size_t begin = r.offset();
    Tensor value = r.floats(shape);
    Tensor m = r.floats(shape);
    Tensor v = r.floats(shape);
    const std::uint64_t computed = r.digest_from(begin);
    if (r.u64() != computed) r.fail("payload digest mismatch for parameter " + name);
    ck.names.push_back(std::move(name));
    ck.values.push_back(std::move(value));
    ck.optimizer.m.push_back(std::move(m));
    ck.optimizer.v.push_back(std::move(v));
  }
  r.u64();
  if (r.offset() != bytes.size()) r.fail("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const Network<float>& net, const OptimizerState& state, std::uint64_t epoch,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net, state, epoch);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

void restore(const Checkpoint& ck, Network<float>& net, OptimizerState* state) {
  auto& params = net.parameters();
  const std::size_t common = std::min(params.size(), ck.names.size());
  for (std::size_t k = 0; k < common; ++k) {
    if (params[k].name != ck.names[k]) {
      throw ShapeError("checkpoint mismatch at parameter " + params[k].name + " (checkpoint has " + ck.names[k] + ")");
    }
    if (params[k].value.shape() != ck.values[k].shape()) {
      throw ShapeError("checkpoint mismatch at parameter " + params[k].name + ": shape " +
                       to_string(ck.values[k].shape()) + " vs network " + to_string(params[k].value.shape()));
    }
  }
  if (params.size() != ck.names.size()) {
    const std::string& first = params.size() > common ? params[common].name : ck.names[common];
    throw ShapeError("checkpoint mismatch at parameter " + first + ": parameter counts differ (" +
                     std::to_string(ck.names.size()) + " in checkpoint, " + std::to_string(params.size()) +
                     " in network)");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k].value = ck.values[k];
    params[k].gradient = Tensor(ck.values[k].shape());
  }
  net.label_scale() = ck.label_scale;
  if (state) *state = ck.optimizer;
}

Network<float> network_from_checkpoint(const Checkpoint& ck) {
  NetworkSpec spec;
  try {
    spec = spec_from_json(nlohmann::json::parse(ck.spec_json));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint carries a malformed spec: ") + e.what());
  }
  Rng rng(0);
  Network<float> net = Network<float>::build(spec, rng);
  restore(ck, net, nullptr);
  return net;
}

std::uint64_t load_checkpoint(const std::filesystem::path& path, Network<float>& net, OptimizerState* state) {
  const Checkpoint ck = read_checkpoint(path);
  restore(ck, net, state);
  return ck.epoch;
}

}  // namespace volreg
