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

#include "volreg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace volreg {
namespace {

std::atomic<std::size_t> g_element_budget{std::size_t{64} << 20};

// Splits a shape into (outer, n, inner) around `axis` for strided sweeps.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const auto e = static_cast<std::size_t>(shape[i]);
    if (i < axis) s.outer *= e;
    else if (i == axis) s.n = e;
    else s.inner *= e;
  }
  return s;
}

void check_axis(std::size_t rank, std::size_t axis, const char* what) {
  if (axis >= rank) {
    throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(rank));
  }
}

void check_per_axis(std::size_t rank, std::size_t given, const char* what) {
  if (given != rank) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rank) + " per-axis values, got " +
                     std::to_string(given));
  }
}

// Translates along one axis by `offset`.
template <typename T>
BasicTensor<T> shift_axis(const BasicTensor<T>& a, std::size_t axis, Extent offset, T fill) {
  if (offset == 0) return a;
  BasicTensor<T> out(a.shape(), fill);
  const AxisSplit s = split_at(a.shape(), axis);
  const auto n = static_cast<Extent>(s.n);
  const auto src = a.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (Extent i = 0; i < n; ++i) {
      const Extent j = i + offset;
      if (j < 0 || j >= n) continue;
      const std::size_t from = (o * s.n + static_cast<std::size_t>(i)) * s.inner;
      const std::size_t to = (o * s.n + static_cast<std::size_t>(j)) * s.inner;
      std::copy_n(src.begin() + from, s.inner, dst.begin() + to);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> pad_axis(const BasicTensor<T>& a, std::size_t axis, Extent before, Extent after, T fill) {
  if (before == 0 && after == 0) return a;
  Shape shape = a.shape();
  shape[axis] += before + after;
  BasicTensor<T> out(shape, fill);
  const AxisSplit s = split_at(a.shape(), axis);
  const std::size_t n_out = static_cast<std::size_t>(shape[axis]);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t from = o * s.n * s.inner;
    const std::size_t to = (o * n_out + static_cast<std::size_t>(before)) * s.inner;
    std::copy_n(a.data().begin() + from, s.n * s.inner, out.data().begin() + to);
  }
  return out;
}

template <typename T>
BasicTensor<T> crop_axis(const BasicTensor<T>& a, std::size_t axis, Extent start, Extent extent) {
  if (start == 0 && extent == a.extent(axis)) return a;
  Shape shape = a.shape();
  shape[axis] = extent;
  BasicTensor<T> out(shape);
  const AxisSplit s = split_at(a.shape(), axis);
  const auto n_out = static_cast<std::size_t>(extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t from = (o * s.n + static_cast<std::size_t>(start)) * s.inner;
    std::copy_n(a.data().begin() + from, n_out * s.inner, out.data().begin() + o * n_out * s.inner);
  }
  return out;
}

template <typename T>
BasicTensor<T> smooth_axis(const BasicTensor<T>& a, std::size_t axis, const std::vector<double>& taps) {
  const auto radius = static_cast<Extent>(taps.size() / 2);
  if (radius == 0) return a;
  BasicTensor<T> out(a.shape());
  const AxisSplit s = split_at(a.shape(), axis);
  const auto n = static_cast<Extent>(s.n);
  std::vector<double> acc(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const std::size_t base = o * s.n * s.inner;
    for (Extent i = 0; i < n; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double weight = 0.0;
      for (Extent k = -radius; k <= radius; ++k) {
        const Extent j = i + k;
        if (j < 0 || j >= n) continue;
        const double w = taps[static_cast<std::size_t>(k + radius)];
        weight += w;
        const T* row = a.data().data() + base + static_cast<std::size_t>(j) * s.inner;
        for (std::size_t q = 0; q < s.inner; ++q) acc[q] += w * static_cast<double>(row[q]);
      }
      T* dst = out.data().data() + base + static_cast<std::size_t>(i) * s.inner;
      for (std::size_t q = 0; q < s.inner; ++q) dst[q] = static_cast<T>(acc[q] / weight);
    }
  }
  return out;
}

}  // namespace

std::size_t element_budget() { return g_element_budget.load(); }

void set_element_budget(std::size_t elements) { g_element_budget.store(elements); }

std::size_t checked_element_count(std::span<const Extent> shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw ShapeError("tensor rank must be between 1 and 5, got " + std::to_string(shape.size()));
  }
  std::size_t count = 1;
  const std::size_t budget = element_budget();
  for (Extent e : shape) {
    if (e < 1) throw ShapeError("tensor extents must be positive, got shape " + to_string(shape));
    if (count > budget / static_cast<std::size_t>(e)) {
      throw ShapeError("shape " + to_string(shape) + " exceeds the element budget of " + std::to_string(budget));
    }
    count *= static_cast<std::size_t>(e);
  }
  return count;
}

std::string to_string(std::span<const Extent> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const bool broadcast = b.size() == 1 && a.shape() != b.shape();
  if (!broadcast && a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T rhs = broadcast ? b[0] : b[i];
    switch (op) {
      case ElementwiseOp::kAdd: out[i] = a[i] + rhs; break;
      case ElementwiseOp::kSub: out[i] = a[i] - rhs; break;
      case ElementwiseOp::kMul: out[i] = a[i] * rhs; break;
    }
  }
  return out;
}

template <typename T>
double sum(const BasicTensor<T>& a) {
  double total = 0.0;
  for (T v : a.data()) total += static_cast<double>(v);
  return total;
}

template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& a, std::span<const std::size_t> axes) {
  if (axes.empty()) return a;
  std::vector<bool> reduced(a.rank(), false);
  for (std::size_t axis : axes) {
    check_axis(a.rank(), axis, "reduce_mean");
    reduced[axis] = true;
  }
  Shape out_shape;
  std::size_t group = 1;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (reduced[i]) group *= static_cast<std::size_t>(a.extent(i));
    else out_shape.push_back(a.extent(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<double> acc(checked_element_count(out_shape), 0.0);
  std::vector<Extent> index(a.rank(), 0);
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t out_flat = 0;
    for (std::size_t i = 0; i < a.rank(); ++i) {
      if (!reduced[i]) out_flat = out_flat * static_cast<std::size_t>(a.extent(i)) + static_cast<std::size_t>(index[i]);
    }
    acc[out_flat] += static_cast<double>(a[flat]);
    for (std::size_t i = a.rank(); i-- > 0;) {
      if (++index[i] < a.extent(i)) break;
      index[i] = 0;
    }
  }
  BasicTensor<T> out(out_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / static_cast<double>(group));
  return out;
}

template <typename T>
BasicTensor<T> flip(const BasicTensor<T>& a, std::size_t axis) {
  check_axis(a.rank(), axis, "flip");
  BasicTensor<T> out(a.shape());
  const AxisSplit s = split_at(a.shape(), axis);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.n; ++i) {
      const std::size_t from = (o * s.n + i) * s.inner;
      const std::size_t to = (o * s.n + (s.n - 1 - i)) * s.inner;
      std::copy_n(a.data().begin() + from, s.inner, out.data().begin() + to);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> shift(const BasicTensor<T>& a, std::span<const Extent> offsets, T fill) {
  check_per_axis(a.rank(), offsets.size(), "shift");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (std::abs(offsets[i]) > a.extent(i)) {
      throw ShapeError("shift: offset " + std::to_string(offsets[i]) + " exceeds extent " +
                       std::to_string(a.extent(i)) + " on axis " + std::to_string(i));
    }
  }
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < a.rank(); ++i) out = shift_axis(out, i, offsets[i], fill);
  return out;
}

template <typename T>
BasicTensor<T> pad(const BasicTensor<T>& a, std::span<const Extent> before, std::span<const Extent> after, T fill) {
  check_per_axis(a.rank(), before.size(), "pad");
  check_per_axis(a.rank(), after.size(), "pad");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (before[i] < 0 || after[i] < 0) throw ShapeError("pad: negative padding on axis " + std::to_string(i));
  }
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < a.rank(); ++i) out = pad_axis(out, i, before[i], after[i], fill);
  return out;
}

template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& a, std::span<const Extent> start, std::span<const Extent> extents) {
  check_per_axis(a.rank(), start.size(), "crop");
  check_per_axis(a.rank(), extents.size(), "crop");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (start[i] < 0 || extents[i] < 1 || start[i] + extents[i] > a.extent(i)) {
      throw ShapeError("crop: window [" + std::to_string(start[i]) + ", +" + std::to_string(extents[i]) +
                       ") outside extent " + std::to_string(a.extent(i)) + " on axis " + std::to_string(i));
    }
  }
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < a.rank(); ++i) out = crop_axis(out, i, start[i], extents[i]);
  return out;
}

template <typename T>
BasicTensor<T> concatenate(std::span<const BasicTensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concatenate: no inputs");
  const Shape& first = parts.front().shape();
  check_axis(first.size(), axis, "concatenate");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concatenate: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.extent(i) != first[i]) {
        throw ShapeError("concatenate: extent mismatch " + to_string(p.shape()) + " vs " + to_string(first));
      }
    }
    shape[axis] += p.extent(axis);
  }
  BasicTensor<T> out(shape);
  const AxisSplit s = split_at(shape, axis);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = static_cast<std::size_t>(p.extent(axis)) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().begin() + o * block, block, out.data().begin() + (o * s.n) * s.inner + offset);
    }
    offset += block;
  }
  return out;
}

std::vector<double> gaussian_kernel(double fwhm_voxels) {
  if (!(fwhm_voxels > 0.0) || !std::isfinite(fwhm_voxels)) {
    throw ConfigError("gaussian_smooth: fwhm must be positive, got " + std::to_string(fwhm_voxels));
  }
  const double sigma = fwhm_voxels / kFwhmPerSigma;
  const auto radius = static_cast<Extent>(std::floor(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (Extent i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

template <typename T>
BasicTensor<T> gaussian_smooth(const BasicTensor<T>& a, std::span<const double> fwhm_voxels) {
  if (a.rank() < 2) throw ShapeError("gaussian_smooth: tensor has no spatial axes");
  const std::size_t spatial = a.rank() - 1;
  if (fwhm_voxels.size() != 1 && fwhm_voxels.size() != spatial) {
    throw ShapeError("gaussian_smooth: expected 1 or " + std::to_string(spatial) + " fwhm values");
  }
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < spatial; ++i) {
    const double fwhm = fwhm_voxels.size() == 1 ? fwhm_voxels[0] : fwhm_voxels[i];
    out = smooth_axis(out, i + 1, gaussian_kernel(fwhm));
  }
  return out;
}

#define VOLREG_INSTANTIATE(T)                                                                                \
  template BasicTensor<T> elementwise(ElementwiseOp, const BasicTensor<T>&, const BasicTensor<T>&);         \
  template double sum(const BasicTensor<T>&);                                                                \
  template BasicTensor<T> reduce_mean(const BasicTensor<T>&, std::span<const std::size_t>);                \
  template BasicTensor<T> flip(const BasicTensor<T>&, std::size_t);                                          \
  template BasicTensor<T> shift(const BasicTensor<T>&, std::span<const Extent>, T);                         \
  template BasicTensor<T> pad(const BasicTensor<T>&, std::span<const Extent>, std::span<const Extent>, T);  \
  template BasicTensor<T> crop(const BasicTensor<T>&, std::span<const Extent>, std::span<const Extent>);    \
  template BasicTensor<T> concatenate(std::span<const BasicTensor<T>>, std::size_t);                        \
  template BasicTensor<T> gaussian_smooth(const BasicTensor<T>&, std::span<const double>);

VOLREG_INSTANTIATE(float)
VOLREG_INSTANTIATE(double)

#undef VOLREG_INSTANTIATE

}  // namespace volreg
