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

#include "volreg/network.hpp"

#include <cmath>

#include "volreg/digest.hpp"

namespace volreg {
namespace {

void digest_relu(Fnv1a& h, const ReluCache& c) { h.update(std::as_bytes(std::span(c.active))); }

void digest_pool(Fnv1a& h, const PoolCache& c) { h.update(std::as_bytes(std::span(c.argmax))); }

template <typename T>
void accumulate(BasicTensor<T>& into, const BasicTensor<T>& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

template <typename T>
void accumulate_sum(BasicTensor<T>& into, const BasicTensor<T>& g) {
  if (into.shape() != g.shape()) throw ShapeError("gradient shape mismatch during accumulation");
  accumulate(into, g);
}

}  // namespace

template <typename T>
std::uint64_t ForwardTrace<T>::activation_pattern() const {
  Fnv1a h;
  for (const auto& c : stem_conv) digest_relu(h, c.relu);
  for (const auto& p : stem_pool) digest_pool(h, p);
  for (const auto& m : modules) {
    if (m.pool) digest_pool(h, *m.pool);
    for (const auto& inc : m.inception) {
      for (const auto* c : {&inc.b1, &inc.b3_reduce, &inc.b3, &inc.b5_reduce, &inc.b5, &inc.pool_proj}) {
        digest_relu(h, c->relu);
      }
      digest_pool(h, inc.pool);
    }
    for (const auto* c : {&m.fire.squeeze, &m.fire.e1, &m.fire.e3}) digest_relu(h, c->relu);
  }
  for (const auto& r : dense_relu) digest_relu(h, r);
  return h.value();
}

template <typename T>
typename Network<T>::ConvUnit Network<T>::add_conv(const std::string& name, Extent in, Extent out, Extent kernel,
                                                   Rng& rng) {
  Shape wshape{out, in};
  for (int i = 0; i < spec_.dimensionality; ++i) wshape.push_back(kernel);
  BasicTensor<T> w(wshape);
  const double fan_in = static_cast<double>(w.size()) / static_cast<double>(out);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  ConvUnit unit;
  unit.kernel = kernel;
  unit.weight = params_.size();
  params_.push_back({name + ".weight", w, BasicTensor<T>(wshape)});
  unit.bias = params_.size();
  params_.push_back({name + ".bias", BasicTensor<T>(Shape{out}), BasicTensor<T>(Shape{out})});
  return unit;
}

template <typename T>
typename Network<T>::DenseUnit Network<T>::add_dense(const std::string& name, Extent in, Extent out, Rng& rng) {
  BasicTensor<T> w(Shape{out, in});
  const double stddev = std::sqrt(2.0 / static_cast<double>(in));
  for (auto& v : w.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  DenseUnit unit;
  unit.weight = params_.size();
  params_.push_back({name + ".weight", w, BasicTensor<T>(Shape{out, in})});
  unit.bias = params_.size();
  params_.push_back({name + ".bias", BasicTensor<T>(Shape{out}), BasicTensor<T>(Shape{out})});
  return unit;
}

template <typename T>
Network<T> Network<T>::build(const NetworkSpec& spec, Rng& rng) {
  infer_shapes(spec);  // validates and rejects spatial collapse
  Network net;
  net.spec_ = spec;
  Extent channels = spec.input_shape[0];
  for (std::size_t i = 0; i < spec.stem.conv_widths.size(); ++i) {
    net.stem_.push_back(net.add_conv("stem.conv" + std::to_string(i + 1), channels, spec.stem.conv_widths[i],
                                     spec.stem.conv_kernel, rng));
    channels = spec.stem.conv_widths[i];
  }
  for (std::size_t m = 0; m < spec.modules.size(); ++m) {
    const ModuleSpec& mod = spec.modules[m];
    const std::string prefix = "module" + std::to_string(m + 1);
    ModuleUnit unit;
    for (std::size_t i = 0; i < 2; ++i) {
      const InceptionSpec& s = mod.inception[i];
      const std::string p = prefix + ".inception" + std::to_string(i + 1);
      InceptionUnit& u = unit.inception[i];
      u.b1 = net.add_conv(p + ".branch1.conv", s.in_channels, s.b1, 1, rng);
      u.b3_reduce = net.add_conv(p + ".branch2.reduce", s.in_channels, s.b3_reduce, 1, rng);
      u.b3 = net.add_conv(p + ".branch2.conv", s.b3_reduce, s.b3, 3, rng);
      u.b5_reduce = net.add_conv(p + ".branch3.reduce", s.in_channels, s.b5_reduce, 1, rng);
      u.b5 = net.add_conv(p + ".branch3.conv", s.b5_reduce, s.b5, 5, rng);
      u.pool_proj = net.add_conv(p + ".branch4.conv", s.in_channels, s.pool_proj, 1, rng);
    }
    const FireSpec& f = mod.fire;
    unit.fire.squeeze = net.add_conv(prefix + ".fire.squeeze", f.in_channels, f.s, 1, rng);
    unit.fire.e1 = net.add_conv(prefix + ".fire.expand1", f.s, f.e1, 1, rng);
    unit.fire.e3 = net.add_conv(prefix + ".fire.expand3", f.s, f.e3, 3, rng);
    net.modules_.push_back(unit);
    channels = f.out_channels();
  }
  for (std::size_t i = 0; i < spec.head.dense_widths.size(); ++i) {
    net.dense_.push_back(net.add_dense("head.dense" + std::to_string(i + 1), channels, spec.head.dense_widths[i], rng));
    channels = spec.head.dense_widths[i];
  }
  net.output_ = net.add_dense("head.output", channels, spec.head.output_units, rng);
  return net;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
BasicTensor<T> Network<T>::conv_relu(const BasicTensor<T>& x, const ConvUnit& unit, ConvReluCache<T>* cache) const {
  const auto& w = params_[unit.weight].value;
  const auto& b = params_[unit.bias].value;
  auto [y, conv_cache] = spec_.dimensionality == 3 ? conv3d_forward(x, w, b, Triple{1, 1, 1}, Padding::kSame)
                                                   : conv2d_forward(x, w, b, Pair{1, 1}, Padding::kSame);
  auto [a, relu_cache] = relu_forward(y);
  if (cache) {
    cache->conv = std::move(conv_cache);
    cache->relu = std::move(relu_cache);
  }
  return std::move(a);
}

template <typename T>
BasicTensor<T> Network<T>::conv_relu_backward(const BasicTensor<T>& grad, const ConvUnit& unit,
                                              const ConvReluCache<T>& cache, GradientSet<T>& grads) const {
  const BasicTensor<T> g = relu_backward(grad, cache.relu);
  ConvGrads<T> cg = spec_.dimensionality == 3 ? conv3d_backward(g, cache.conv) : conv2d_backward(g, cache.conv);
  accumulate(grads[unit.weight], cg.weight);
  accumulate(grads[unit.bias], cg.bias);
  return std::move(cg.input);
}

template <typename T>
BasicTensor<T> Network<T>::pool(const BasicTensor<T>& x, Extent window, Extent stride, PoolCache* cache) const {
  const Padding padding = spec_.pool_same_padding ? Padding::kSame : Padding::kValid;
  auto [y, pool_cache] = spec_.dimensionality == 3
                             ? maxpool3d_forward(x, Triple{window, window, window}, Triple{stride, stride, stride}, padding)
                             : maxpool2d_forward(x, Pair{window, window}, Pair{stride, stride}, padding);
  if (cache) *cache = std::move(pool_cache);
  return std::move(y);
}

template <typename T>
BasicTensor<T> Network<T>::pool_backward(const BasicTensor<T>& grad, const PoolCache& cache) const {
  return maxpool3d_backward(grad, cache);
}

template <typename T>
BasicTensor<T> Network<T>::inception_forward(const BasicTensor<T>& x, const InceptionUnit& u,
                                             InceptionTrace<T>* t) const {
  std::array<BasicTensor<T>, 4> branches;
  branches[0] = conv_relu(x, u.b1, t ? &t->b1 : nullptr);
  branches[1] = conv_relu(conv_relu(x, u.b3_reduce, t ? &t->b3_reduce : nullptr), u.b3, t ? &t->b3 : nullptr);
  branches[2] = conv_relu(conv_relu(x, u.b5_reduce, t ? &t->b5_reduce : nullptr), u.b5, t ? &t->b5 : nullptr);
  const Padding padding = Padding::kSame;
  auto [pooled, pool_cache] = spec_.dimensionality == 3
                                  ? maxpool3d_forward(x, Triple{3, 3, 3}, Triple{1, 1, 1}, padding)
                                  : maxpool2d_forward(x, Pair{3, 3}, Pair{1, 1}, padding);
  branches[3] = conv_relu(pooled, u.pool_proj, t ? &t->pool_proj : nullptr);
  auto [y, concat_cache] = concat_channels(std::span<const BasicTensor<T>>(branches));
  if (t) {
    t->pool = std::move(pool_cache);
    t->concat = std::move(concat_cache);
  }
  return std::move(y);
}

template <typename T>
BasicTensor<T> Network<T>::inception_backward(const BasicTensor<T>& grad, const InceptionUnit& u,
                                              const InceptionTrace<T>& t, GradientSet<T>& grads) const {
  auto parts = concat_channels_backward(grad, t.concat);
  BasicTensor<T> gx = conv_relu_backward(parts[0], u.b1, t.b1, grads);
  accumulate_sum(gx, conv_relu_backward(conv_relu_backward(parts[1], u.b3, t.b3, grads), u.b3_reduce, t.b3_reduce, grads));
  accumulate_sum(gx, conv_relu_backward(conv_relu_backward(parts[2], u.b5, t.b5, grads), u.b5_reduce, t.b5_reduce, grads));
  accumulate_sum(gx, maxpool3d_backward(conv_relu_backward(parts[3], u.pool_proj, t.pool_proj, grads), t.pool));
  return gx;
}

template <typename T>
BasicTensor<T> Network<T>::fire_forward(const BasicTensor<T>& x, const FireUnit& u, FireTrace<T>* t) const {
  const BasicTensor<T> squeezed = conv_relu(x, u.squeeze, t ? &t->squeeze : nullptr);
  std::array<BasicTensor<T>, 2> expands{conv_relu(squeezed, u.e1, t ? &t->e1 : nullptr),
                                        conv_relu(squeezed, u.e3, t ? &t->e3 : nullptr)};
  auto [y, concat_cache] = concat_channels(std::span<const BasicTensor<T>>(expands));
  if (t) t->concat = std::move(concat_cache);
  return std::move(y);
}

template <typename T>
BasicTensor<T> Network<T>::fire_backward(const BasicTensor<T>& grad, const FireUnit& u, const FireTrace<T>& t,
                                         GradientSet<T>& grads) const {
  auto parts = concat_channels_backward(grad, t.concat);
  BasicTensor<T> gs = conv_relu_backward(parts[0], u.e1, t.e1, grads);
  accumulate_sum(gs, conv_relu_backward(parts[1], u.e3, t.e3, grads));
  return conv_relu_backward(gs, u.squeeze, t.squeeze, grads);
}

template <typename T>
double Network<T>::run(const BasicTensor<T>& x, ForwardTrace<T>* trace) const {
  if (params_.empty()) throw ConfigError("network has not been built");
  if (x.shape() != spec_.input_shape) {
    throw ShapeError("network input shape " + to_string(x.shape()) + " does not match spec input shape " +
                     to_string(spec_.input_shape));
  }
  if (trace) {
    trace->stem_conv.resize(stem_.size());
    trace->stem_pool.resize(stem_.size());
    trace->modules.resize(modules_.size());
    trace->dense.resize(dense_.size());
    trace->dense_relu.resize(dense_.size());
  }
  BasicTensor<T> h = x;
  for (std::size_t i = 0; i < stem_.size(); ++i) {
    h = conv_relu(h, stem_[i], trace ? &trace->stem_conv[i] : nullptr);
    h = pool(h, spec_.stem.pool_windows[i], spec_.stem.pool_strides[i], trace ? &trace->stem_pool[i] : nullptr);
  }
  for (std::size_t m = 0; m < modules_.size(); ++m) {
    ModuleTrace<T>* mt = trace ? &trace->modules[m] : nullptr;
    if (m > 0 && spec_.module_pool.enabled) {
      PoolCache cache;
      h = pool(h, spec_.module_pool.window, spec_.module_pool.stride, mt ? &cache : nullptr);
      if (mt) mt->pool = std::move(cache);
    }
    for (std::size_t i = 0; i < 2; ++i) h = inception_forward(h, modules_[m].inception[i], mt ? &mt->inception[i] : nullptr);
    h = fire_forward(h, modules_[m].fire, mt ? &mt->fire : nullptr);
  }
  auto [features, gap_cache] = global_avg_pool(h);
  if (trace) trace->gap = std::move(gap_cache);
  h = std::move(features);
  for (std::size_t i = 0; i < dense_.size(); ++i) {
    auto [z, dense_cache] = dense_forward(h, params_[dense_[i].weight].value, params_[dense_[i].bias].value);
    auto [a, relu_cache] = relu_forward(z);
    if (trace) {
      trace->dense[i] = std::move(dense_cache);
      trace->dense_relu[i] = std::move(relu_cache);
    }
    h = std::move(a);
  }
  auto [out, out_cache] = dense_forward(h, params_[output_.weight].value, params_[output_.bias].value);
  if (trace) trace->output = std::move(out_cache);
  return label_scale_.offset + label_scale_.scale * static_cast<double>(out[0]);
}

template <typename T>
std::pair<double, ForwardTrace<T>> Network<T>::forward(const BasicTensor<T>& x) const {
  ForwardTrace<T> trace;
  const double prediction = run(x, &trace);
  return {prediction, std::move(trace)};
}

template <typename T>
double Network<T>::predict(const BasicTensor<T>& x) const {
  return run(x, nullptr);
}

template <typename T>
void Network<T>::backward(const ForwardTrace<T>& trace, double grad_prediction, GradientSet<T>& grads) const {
  if (grads.size() != params_.size()) throw ShapeError("gradient set does not match the network parameters");
  BasicTensor<T> g(Shape{1}, static_cast<T>(grad_prediction * label_scale_.scale));
  DenseGrads<T> og = dense_backward(g, trace.output);
  accumulate(grads[output_.weight], og.weight);
  accumulate(grads[output_.bias], og.bias);
  g = std::move(og.input);
  for (std::size_t i = dense_.size(); i-- > 0;) {
    g = relu_backward(g, trace.dense_relu[i]);
    DenseGrads<T> dg = dense_backward(g, trace.dense[i]);
    accumulate(grads[dense_[i].weight], dg.weight);
    accumulate(grads[dense_[i].bias], dg.bias);
    g = std::move(dg.input);
  }
  g = global_avg_pool_backward(g, trace.gap);
  for (std::size_t m = modules_.size(); m-- > 0;) {
    const ModuleTrace<T>& mt = trace.modules[m];
    g = fire_backward(g, modules_[m].fire, mt.fire, grads);
    for (std::size_t i = 2; i-- > 0;) g = inception_backward(g, modules_[m].inception[i], mt.inception[i], grads);
    if (mt.pool) g = pool_backward(g, *mt.pool);
  }
  for (std::size_t i = stem_.size(); i-- > 0;) {
    g = pool_backward(g, trace.stem_pool[i]);
    g = conv_relu_backward(g, stem_[i], trace.stem_conv[i], grads);
  }
}

template <typename T>
void Network<T>::backward(const ForwardTrace<T>& trace, double grad_prediction) {
  GradientSet<T> grads = zero_gradients();
  backward(trace, grad_prediction, grads);
  for (std::size_t i = 0; i < params_.size(); ++i) accumulate(params_[i].gradient, grads[i]);
}

template <typename T>
GradientSet<T> Network<T>::zero_gradients() const {
  GradientSet<T> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.value.shape());
  return grads;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : params_) p.gradient.fill(T{0});
}

template struct ForwardTrace<float>;
template struct ForwardTrace<double>;
template class Network<float>;
template class Network<double>;

}  // namespace volreg
