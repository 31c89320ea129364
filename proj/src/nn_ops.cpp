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

#include "volreg/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "volreg/parallel.hpp"

namespace volreg {
namespace {

// Below this many multiply-adds a convolution runs on the calling thread.
constexpr std::size_t kParallelWork = std::size_t{1} << 22;

struct ConvGeometry {
  Extent channels, depth, height, width;
  Extent filters, kd, kh, kw;
  Extent sd, sh, sw;
  Extent pd, ph, pw;
  Extent od, oh, ow;

  std::size_t in_plane() const { return static_cast<std::size_t>(depth * height * width); }
  std::size_t out_plane() const { return static_cast<std::size_t>(od * oh * ow); }
  std::size_t taps() const { return static_cast<std::size_t>(kd * kh * kw); }
};

std::string axis_name(int axis) {
  static const char* names[] = {"depth", "height", "width"};
  return names[axis];
}

ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Triple& stride, Padding padding) {
  if (x.size() != 4) throw ShapeError("conv: input must be [C,D,H,W], got " + to_string(x));
  if (w.size() != 5) throw ShapeError("conv: weight must be [K,C,kd,kh,kw], got " + to_string(w));
  if (w[1] != x[0]) {
    throw ShapeError("conv: channel mismatch, input has " + std::to_string(x[0]) + " channels, weight expects " +
                     std::to_string(w[1]));
  }
  ConvGeometry g{};
  g.channels = x[0];
  g.depth = x[1];
  g.height = x[2];
  g.width = x[3];
  g.filters = w[0];
  g.kd = w[2];
  g.kh = w[3];
  g.kw = w[4];
  g.sd = stride[0];
  g.sh = stride[1];
  g.sw = stride[2];
  const Extent in[3] = {g.depth, g.height, g.width};
  const Extent k[3] = {g.kd, g.kh, g.kw};
  Extent* pads[3] = {&g.pd, &g.ph, &g.pw};
  Extent* outs[3] = {&g.od, &g.oh, &g.ow};
  for (int a = 0; a < 3; ++a) {
    if (stride[a] < 1) throw ShapeError("conv: stride must be positive");
    if (padding == Padding::kValid && k[a] > in[a]) {
      throw ShapeError("conv: kernel extent " + std::to_string(k[a]) + " exceeds " + axis_name(a) + " extent " +
                       std::to_string(in[a]));
    }
    *pads[a] = window_padding_before(in[a], k[a], stride[a], padding);
    *outs[a] = window_output_extent(in[a], k[a], stride[a], padding);
  }
  return g;
}

// Valid output index range [lo, hi) along one axis for kernel tap `tap`.
inline void tap_range(Extent tap, Extent pad, Extent stride, Extent in, Extent out, Extent& lo, Extent& hi) {
  // input index = o * stride + tap - pad must lie in [0, in)
  const Extent first = pad - tap;
  lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const Extent last = in - 1 + pad - tap;
  hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void conv_forward_kernel(const ConvGeometry& g, const T* x, const T* w, const T* b, T* y) {
  const std::size_t in_plane = g.in_plane();
  const std::size_t out_plane = g.out_plane();
  const std::size_t work = static_cast<std::size_t>(g.filters * g.channels) * g.taps() * out_plane;
  parallel_for(static_cast<std::size_t>(g.filters), work >= kParallelWork ? 0 : 1, [&](std::size_t k) {
    std::vector<double> acc(out_plane, static_cast<double>(b[k]));
    for (Extent c = 0; c < g.channels; ++c) {
      const T* xc = x + static_cast<std::size_t>(c) * in_plane;
      const T* wkc = w + (k * static_cast<std::size_t>(g.channels) + static_cast<std::size_t>(c)) * g.taps();
      for (Extent dz = 0; dz < g.kd; ++dz) {
        Extent z_lo, z_hi;
        tap_range(dz, g.pd, g.sd, g.depth, g.od, z_lo, z_hi);
        for (Extent dy = 0; dy < g.kh; ++dy) {
          Extent y_lo, y_hi;
          tap_range(dy, g.ph, g.sh, g.height, g.oh, y_lo, y_hi);
          for (Extent dx = 0; dx < g.kw; ++dx) {
            Extent x_lo, x_hi;
            tap_range(dx, g.pw, g.sw, g.width, g.ow, x_lo, x_hi);
            const double wv = static_cast<double>(wkc[(dz * g.kh + dy) * g.kw + dx]);
            if (wv == 0.0) continue;
            for (Extent oz = z_lo; oz < z_hi; ++oz) {
              const Extent iz = oz * g.sd + dz - g.pd;
              for (Extent oy = y_lo; oy < y_hi; ++oy) {
                const Extent iy = oy * g.sh + dy - g.ph;
                const T* row = xc + (iz * g.height + iy) * g.width + dx - g.pw;
                double* out = acc.data() + (oz * g.oh + oy) * g.ow;
                if (g.sw == 1) {
                  for (Extent ox = x_lo; ox < x_hi; ++ox) out[ox] += wv * static_cast<double>(row[ox]);
                } else {
                  for (Extent ox = x_lo; ox < x_hi; ++ox) out[ox] += wv * static_cast<double>(row[ox * g.sw]);
                }
              }
            }
          }
        }
      }
    }
    T* yk = y + k * out_plane;
    for (std::size_t i = 0; i < out_plane; ++i) yk[i] = static_cast<T>(acc[i]);
  });
}

template <typename T>
void conv_backward_kernel(const ConvGeometry& g, const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) {
  const std::size_t in_plane = g.in_plane();
  const std::size_t out_plane = g.out_plane();
  const std::size_t work = static_cast<std::size_t>(g.filters * g.channels) * g.taps() * out_plane;
  const std::size_t threads = work >= kParallelWork ? 0 : 1;

  // Bias and weight gradients, one filter per task.
  parallel_for(static_cast<std::size_t>(g.filters), threads, [&](std::size_t k) {
    const T* gk = gy + k * out_plane;
    double bias = 0.0;
    for (std::size_t i = 0; i < out_plane; ++i) bias += static_cast<double>(gk[i]);
    gb[k] = static_cast<T>(bias);
    for (Extent c = 0; c < g.channels; ++c) {
      const T* xc = x + static_cast<std::size_t>(c) * in_plane;
      T* gwkc = gw + (k * static_cast<std::size_t>(g.channels) + static_cast<std::size_t>(c)) * g.taps();
      for (Extent dz = 0; dz < g.kd; ++dz) {
        Extent z_lo, z_hi;
        tap_range(dz, g.pd, g.sd, g.depth, g.od, z_lo, z_hi);
        for (Extent dy = 0; dy < g.kh; ++dy) {
          Extent y_lo, y_hi;
          tap_range(dy, g.ph, g.sh, g.height, g.oh, y_lo, y_hi);
          for (Extent dx = 0; dx < g.kw; ++dx) {
            Extent x_lo, x_hi;
            tap_range(dx, g.pw, g.sw, g.width, g.ow, x_lo, x_hi);
            double acc = 0.0;
            for (Extent oz = z_lo; oz < z_hi; ++oz) {
              const Extent iz = oz * g.sd + dz - g.pd;
              for (Extent oy = y_lo; oy < y_hi; ++oy) {
                const Extent iy = oy * g.sh + dy - g.ph;
                const T* row = xc + (iz * g.height + iy) * g.width + dx - g.pw;
                const T* grow = gk + (oz * g.oh + oy) * g.ow;
                for (Extent ox = x_lo; ox < x_hi; ++ox) {
                  acc += static_cast<double>(grow[ox]) * static_cast<double>(row[ox * g.sw]);
                }
              }
            }
            gwkc[(dz * g.kh + dy) * g.kw + dx] = static_cast<T>(acc);
          }
        }
      }
    }
  });

  // Input gradient, one input channel per task.
  parallel_for(static_cast<std::size_t>(g.channels), threads, [&](std::size_t c) {
    std::vector<double> acc(in_plane, 0.0);
    for (Extent k = 0; k < g.filters; ++k) {
      const T* gk = gy + static_cast<std::size_t>(k) * out_plane;
      const T* wkc = w + (static_cast<std::size_t>(k) * static_cast<std::size_t>(g.channels) + c) * g.taps();
      for (Extent dz = 0; dz < g.kd; ++dz) {
        Extent z_lo, z_hi;
        tap_range(dz, g.pd, g.sd, g.depth, g.od, z_lo, z_hi);
        for (Extent dy = 0; dy < g.kh; ++dy) {
          Extent y_lo, y_hi;
          tap_range(dy, g.ph, g.sh, g.height, g.oh, y_lo, y_hi);
          for (Extent dx = 0; dx < g.kw; ++dx) {
            Extent x_lo, x_hi;
            tap_range(dx, g.pw, g.sw, g.width, g.ow, x_lo, x_hi);
            const double wv = static_cast<double>(wkc[(dz * g.kh + dy) * g.kw + dx]);
            if (wv == 0.0) continue;
            for (Extent oz = z_lo; oz < z_hi; ++oz) {
              const Extent iz = oz * g.sd + dz - g.pd;
              for (Extent oy = y_lo; oy < y_hi; ++oy) {
                const Extent iy = oy * g.sh + dy - g.ph;
                double* row = acc.data() + (iz * g.height + iy) * g.width + dx - g.pw;
                const T* grow = gk + (oz * g.oh + oy) * g.ow;
                for (Extent ox = x_lo; ox < x_hi; ++ox) row[ox * g.sw] += wv * static_cast<double>(grow[ox]);
              }
            }
          }
        }
      }
    }
    T* gxc = gx + c * in_plane;
    for (std::size_t i = 0; i < in_plane; ++i) gxc[i] = static_cast<T>(acc[i]);
  });
}

template <typename T>
void check_finite_shape(const BasicTensor<T>& a, const Shape& expected, const char* what) {
  if (a.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) + ", got " + to_string(a.shape()));
  }
}

}  // namespace

Extent window_output_extent(Extent in, Extent window, Extent stride, Padding padding) {
  if (in < 1 || window < 1 || stride < 1) throw ShapeError("window geometry must be positive");
  if (padding == Padding::kSame) return std::max<Extent>(in / stride, 1);
  if (window > in) {
    throw ShapeError("window extent " + std::to_string(window) + " exceeds input extent " + std::to_string(in));
  }
  return (in - window) / stride + 1;
}

Extent window_padding_before(Extent in, Extent window, Extent stride, Padding padding) {
  if (padding == Padding::kValid) return 0;
  const Extent out = window_output_extent(in, window, stride, padding);
  const Extent total = std::max<Extent>((out - 1) * stride + window - in, 0);
  return total / 2;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<BasicTensor<T>, ConvCache<T>> conv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                                       const BasicTensor<T>& b, Triple stride, Padding padding) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, padding);
  check_finite_shape(b, Shape{g.filters}, "conv bias");
  BasicTensor<T> y(Shape{g.filters, g.od, g.oh, g.ow});
  conv_forward_kernel(g, x.data().data(), w.data().data(), b.data().data(), y.data().data());
  return {std::move(y), ConvCache<T>{x, w, stride, padding, false}};
}

template <typename T>
ConvGrads<T> conv3d_backward(const BasicTensor<T>& grad_out, const ConvCache<T>& cache) {
  const ConvGeometry g = conv_geometry(cache.input.shape(), cache.weight.shape(), cache.stride, cache.padding);
  check_finite_shape(grad_out, Shape{g.filters, g.od, g.oh, g.ow}, "conv backward");
  ConvGrads<T> grads{BasicTensor<T>(cache.input.shape()), BasicTensor<T>(cache.weight.shape()),
                     BasicTensor<T>(Shape{g.filters})};
  conv_backward_kernel(g, cache.input.data().data(), cache.weight.data().data(), grad_out.data().data(),
                       grads.input.data().data(), grads.weight.data().data(), grads.bias.data().data());
  return grads;
}

template <typename T>
std::pair<BasicTensor<T>, ConvCache<T>> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                                       const BasicTensor<T>& b, Pair stride, Padding padding) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + to_string(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be [K,C,kh,kw], got " + to_string(w.shape()));
  auto x3 = x.reshaped({x.extent(0), 1, x.extent(1), x.extent(2)});
  auto w3 = w.reshaped({w.extent(0), w.extent(1), 1, w.extent(2), w.extent(3)});
  auto [y, cache] = conv3d_forward(x3, w3, b, Triple{1, stride[0], stride[1]}, padding);
  cache.planar = true;
  y = std::move(y).reshaped({y.extent(0), y.extent(2), y.extent(3)});
  return {std::move(y), std::move(cache)};
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const ConvCache<T>& cache) {
  if (grad_out.rank() != 3) throw ShapeError("conv2d backward: gradient must be [K,H',W']");
  auto g3 = grad_out.reshaped({grad_out.extent(0), 1, grad_out.extent(1), grad_out.extent(2)});
  ConvGrads<T> grads = conv3d_backward(g3, cache);
  const Shape& xs = cache.input.shape();
  const Shape& ws = cache.weight.shape();
  grads.input = std::move(grads.input).reshaped({xs[0], xs[2], xs[3]});
  grads.weight = std::move(grads.weight).reshaped({ws[0], ws[1], ws[3], ws[4]});
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<BasicTensor<T>, PoolCache> maxpool3d_forward(const BasicTensor<T>& x, Triple window, Triple stride,
                                                       Padding padding) {
  if (x.rank() != 4) throw ShapeError("maxpool: input must be [C,D,H,W], got " + to_string(x.shape()));
  const Extent in[3] = {x.extent(1), x.extent(2), x.extent(3)};
  Extent out[3], pad[3];
  for (int a = 0; a < 3; ++a) {
    if (padding == Padding::kValid && window[a] > in[a]) {
      throw ShapeError("maxpool: window " + std::to_string(window[a]) + " exceeds " + axis_name(a) + " extent " +
                       std::to_string(in[a]));
    }
    out[a] = window_output_extent(in[a], window[a], stride[a], padding);
    pad[a] = window_padding_before(in[a], window[a], stride[a], padding);
  }
  const Extent channels = x.extent(0);
  BasicTensor<T> y(Shape{channels, out[0], out[1], out[2]});
  PoolCache cache{x.shape(), std::vector<std::size_t>(y.size())};
  std::size_t o = 0;
  for (Extent c = 0; c < channels; ++c) {
    for (Extent oz = 0; oz < out[0]; ++oz) {
      for (Extent oy = 0; oy < out[1]; ++oy) {
        for (Extent ox = 0; ox < out[2]; ++ox, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_index = std::numeric_limits<std::size_t>::max();
          for (Extent dz = 0; dz < window[0]; ++dz) {
            const Extent iz = oz * stride[0] + dz - pad[0];
            if (iz < 0 || iz >= in[0]) continue;
            for (Extent dy = 0; dy < window[1]; ++dy) {
              const Extent iy = oy * stride[1] + dy - pad[1];
              if (iy < 0 || iy >= in[1]) continue;
              for (Extent dx = 0; dx < window[2]; ++dx) {
                const Extent ix = ox * stride[2] + dx - pad[2];
                if (ix < 0 || ix >= in[2]) continue;
                const auto index = static_cast<std::size_t>(((c * in[0] + iz) * in[1] + iy) * in[2] + ix);
                if (best_index == std::numeric_limits<std::size_t>::max() || x[index] > best) {
                  best = x[index];
                  best_index = index;
                }
              }
            }
          }
          y[o] = best;
          cache.argmax[o] = best_index;
        }
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

template <typename T>
BasicTensor<T> maxpool3d_backward(const BasicTensor<T>& grad_out, const PoolCache& cache) {
  if (grad_out.size() != cache.argmax.size()) throw ShapeError("maxpool backward: gradient size mismatch");
  BasicTensor<T> grad(cache.input_shape);
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) grad[cache.argmax[i]] += grad_out[i];
  return grad;
}

template <typename T>
std::pair<BasicTensor<T>, PoolCache> maxpool2d_forward(const BasicTensor<T>& x, Pair window, Pair stride,
                                                       Padding padding) {
  if (x.rank() != 3) throw ShapeError("maxpool2d: input must be [C,H,W], got " + to_string(x.shape()));
  auto [y, cache] = maxpool3d_forward(x.reshaped({x.extent(0), 1, x.extent(1), x.extent(2)}),
                                      Triple{1, window[0], window[1]}, Triple{1, stride[0], stride[1]}, padding);
  cache.input_shape = x.shape();
  y = std::move(y).reshaped({y.extent(0), y.extent(2), y.extent(3)});
  return {std::move(y), std::move(cache)};
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<BasicTensor<T>, ReluCache> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  ReluCache cache{x.shape(), std::vector<std::uint8_t>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > T{0};
    cache.active[i] = on;
    y[i] = on ? x[i] : T{0};
  }
  return {std::move(y), std::move(cache)};
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const ReluCache& cache) {
  if (grad_out.shape() != cache.shape) throw ShapeError("relu backward: gradient shape mismatch");
  BasicTensor<T> grad(cache.shape);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = cache.active[i] ? grad_out[i] : T{0};
  return grad;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<BasicTensor<T>, ConcatCache> concat_channels(std::span<const BasicTensor<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  ConcatCache cache;
  for (const auto& x : xs) {
    if (x.rank() != xs.front().rank() ||
        !std::equal(x.shape().begin() + 1, x.shape().end(), xs.front().shape().begin() + 1)) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(x.shape()) + " vs " +
                       to_string(xs.front().shape()));
    }
    cache.input_shapes.push_back(x.shape());
  }
  return {concatenate(xs, 0), std::move(cache)};
}

template <typename T>
std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out, const ConcatCache& cache) {
  std::vector<BasicTensor<T>> grads;
  grads.reserve(cache.input_shapes.size());
  std::size_t offset = 0;
  for (const Shape& shape : cache.input_shapes) {
    BasicTensor<T> part(shape);
    if (offset + part.size() > grad_out.size()) throw ShapeError("concat backward: gradient too small");
    std::copy_n(grad_out.data().begin() + offset, part.size(), part.data().begin());
    offset += part.size();
    grads.push_back(std::move(part));
  }
  if (offset != grad_out.size()) throw ShapeError("concat backward: gradient size mismatch");
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<BasicTensor<T>, GapCache> global_avg_pool(const BasicTensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("global_avg_pool: input needs at least one spatial axis");
  const auto channels = static_cast<std::size_t>(x.extent(0));
  const std::size_t plane = x.size() / channels;
  BasicTensor<T> y(Shape{x.extent(0)});
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(x[c * plane + i]);
    y[c] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return {std::move(y), GapCache{x.shape()}};
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const GapCache& cache) {
  if (grad_out.shape() != Shape{cache.input_shape[0]}) throw ShapeError("gap backward: gradient shape mismatch");
  BasicTensor<T> grad(cache.input_shape);
  const auto channels = static_cast<std::size_t>(cache.input_shape[0]);
  const std::size_t plane = grad.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const T share = static_cast<T>(static_cast<double>(grad_out[c]) / static_cast<double>(plane));
    std::fill_n(grad.data().begin() + c * plane, plane, share);
  }
  return grad;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<BasicTensor<T>, DenseCache<T>> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                                       const BasicTensor<T>& b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1) throw ShapeError("dense: expected x[N], w[M,N], b[M]");
  if (w.extent(1) != x.extent(0) || w.extent(0) != b.extent(0)) {
    throw ShapeError("dense: dimension mismatch x" + to_string(x.shape()) + " w" + to_string(w.shape()) + " b" +
                     to_string(b.shape()));
  }
  const auto m = static_cast<std::size_t>(w.extent(0));
  const auto n = static_cast<std::size_t>(w.extent(1));
  BasicTensor<T> y(Shape{w.extent(0)});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = static_cast<double>(b[i]);
    for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(w[i * n + j]) * static_cast<double>(x[j]);
    y[i] = static_cast<T>(acc);
  }
  return {std::move(y), DenseCache<T>{x, w}};
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const DenseCache<T>& cache) {
  const auto m = static_cast<std::size_t>(cache.weight.extent(0));
  const auto n = static_cast<std::size_t>(cache.weight.extent(1));
  if (grad_out.shape() != Shape{cache.weight.extent(0)}) throw ShapeError("dense backward: gradient shape mismatch");
  DenseGrads<T> grads{BasicTensor<T>(cache.input.shape()), BasicTensor<T>(cache.weight.shape()), grad_out};
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(cache.weight[i * n + j]) * static_cast<double>(grad_out[i]);
    grads.input[j] = static_cast<T>(acc);
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) grads.weight[i * n + j] = grad_out[i] * cache.input[j];
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<double, MseCache<T>> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  MseCache<T> cache{BasicTensor<T>(pred.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    cache.diff[i] = static_cast<T>(d);
    acc += d * d;
  }
  return {acc / static_cast<double>(pred.size()), std::move(cache)};
}

template <typename T>
BasicTensor<T> mse_backward(const MseCache<T>& cache, double upstream) {
  BasicTensor<T> grad(cache.diff.shape());
  const double scale = 2.0 * upstream / static_cast<double>(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = static_cast<T>(scale * static_cast<double>(cache.diff[i]));
  return grad;
}

#define VOLREG_INSTANTIATE(T)                                                                                       \
  template std::pair<BasicTensor<T>, ConvCache<T>> conv3d_forward(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                                  const BasicTensor<T>&, Triple, Padding);          \
  template ConvGrads<T> conv3d_backward(const BasicTensor<T>&, const ConvCache<T>&);                               \
  template std::pair<BasicTensor<T>, ConvCache<T>> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                                  const BasicTensor<T>&, Pair, Padding);            \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const ConvCache<T>&);                               \
  template std::pair<BasicTensor<T>, PoolCache> maxpool3d_forward(const BasicTensor<T>&, Triple, Triple, Padding); \
  template BasicTensor<T> maxpool3d_backward(const BasicTensor<T>&, const PoolCache&);                             \
  template std::pair<BasicTensor<T>, PoolCache> maxpool2d_forward(const BasicTensor<T>&, Pair, Pair, Padding);     \
  template std::pair<BasicTensor<T>, ReluCache> relu_forward(const BasicTensor<T>&);                               \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const ReluCache&);                                  \
  template std::pair<BasicTensor<T>, ConcatCache> concat_channels(std::span<const BasicTensor<T>>);               \
  template std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>&, const ConcatCache&);        \
  template std::pair<BasicTensor<T>, GapCache> global_avg_pool(const BasicTensor<T>&);                             \
  template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const GapCache&);                        \
  template std::pair<BasicTensor<T>, DenseCache<T>> dense_forward(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                                  const BasicTensor<T>&);                           \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&, const DenseCache<T>&);                              \
  template std::pair<double, MseCache<T>> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> mse_backward(const MseCache<T>&, double);

VOLREG_INSTANTIATE(float)
VOLREG_INSTANTIATE(double)

#undef VOLREG_INSTANTIATE

}  // namespace volreg
