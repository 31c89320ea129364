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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "volreg/error.hpp"

namespace volreg {

using Extent = std::int64_t;
using Shape = std::vector<Extent>;

inline constexpr std::size_t kMaxRank = 5;

/// Largest element count any single tensor may hold (default 64 Mi).
std::size_t element_budget();
void set_element_budget(std::size_t elements);

/// Validates rank, extents and budget; returns the element count.
std::size_t checked_element_count(std::span<const Extent> shape);

std::string to_string(std::span<const Extent> shape);

/// Dense row-major tensor of up to five axes.
///
/// Volumes use the axis order (channel, depth, height, width); 2D images
/// drop the depth axis. A default-constructed tensor is the scalar 0 with
/// shape [1].
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{1}, data_(1, T{0}) {}

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(checked_element_count(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_element_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
    }
  }

  BasicTensor(Shape shape, std::initializer_list<T> values)
      : BasicTensor(std::move(shape), std::vector<T>(values)) {}

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  Extent extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  /// Row-major strides in elements.
  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * static_cast<std::size_t>(shape_[i]);
    return s;
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Multi-index access; one index per axis.
  template <typename... I>
  T& at(I... index) {
    return data_[offset_of({static_cast<Extent>(index)...})];
  }
  template <typename... I>
  const T& at(I... index) const {
    return data_[offset_of({static_cast<Extent>(index)...})];
  }

  /// Same data under a new shape of equal element count.
  BasicTensor reshaped(Shape shape) const& { return BasicTensor(std::move(shape), data_); }
  BasicTensor reshaped(Shape shape) && { return BasicTensor(std::move(shape), std::move(data_)); }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const BasicTensor&) const = default;

 private:
  std::size_t offset_of(std::initializer_list<Extent> index) const {
    if (index.size() != shape_.size()) throw ShapeError("index rank does not match tensor rank");
    std::size_t offset = 0;
    std::size_t axis = 0;
    for (Extent i : index) {
      if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
      offset = offset * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
      ++axis;
    }
    return offset;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// ---------------------------------------------------------------------------
// Arithmetic

enum class ElementwiseOp { kAdd, kSub, kMul };

/// Elementwise op on equal shapes; a single-element `b` broadcasts over `a`.
template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(ElementwiseOp::kAdd, a, b);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(ElementwiseOp::kSub, a, b);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(ElementwiseOp::kMul, a, b);
}

template <typename T>
BasicTensor<T> zeros_like(const BasicTensor<T>& a) {
  return BasicTensor<T>(a.shape(), T{0});
}

/// Sum of all elements, accumulated in double.
template <typename T>
double sum(const BasicTensor<T>& a);

/// Mean over the listed axes. The reduced axes are removed; reducing every
/// axis yields shape [1]. An empty axis list returns the input.
template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& a, std::span<const std::size_t> axes);

template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& a, std::initializer_list<std::size_t> axes) {
  return reduce_mean(a, std::span<const std::size_t>(axes.begin(), axes.size()));
}

// ---------------------------------------------------------------------------
// Geometry

template <typename T>
BasicTensor<T> flip(const BasicTensor<T>& a, std::size_t axis);

/// Translates contents by one signed offset per axis; vacated cells get `fill`.
template <typename T>
BasicTensor<T> shift(const BasicTensor<T>& a, std::span<const Extent> offsets, T fill = T{0});

template <typename T>
BasicTensor<T> pad(const BasicTensor<T>& a, std::span<const Extent> before, std::span<const Extent> after,
                   T fill = T{0});

/// Sub-block starting at `start` with the given extents.
template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& a, std::span<const Extent> start, std::span<const Extent> extents);

/// Joins tensors along `axis`; every other extent must agree.
template <typename T>
BasicTensor<T> concatenate(std::span<const BasicTensor<T>> parts, std::size_t axis);

// ---------------------------------------------------------------------------
// Filtering

/// 2*sqrt(2*ln 2): full width at half maximum of a unit-sigma Gaussian.
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

/// Normalized 1D Gaussian taps for the given FWHM, truncated at 3 sigma.
std::vector<double> gaussian_kernel(double fwhm_voxels);

/// Separable Gaussian smoothing over the spatial axes (every axis after the
/// first). `fwhm_voxels` holds one width per spatial axis, or a single width
/// for all. Taps falling outside the volume are dropped and the remaining
/// weights renormalized, so constant inputs are preserved.
template <typename T>
BasicTensor<T> gaussian_smooth(const BasicTensor<T>& a, std::span<const double> fwhm_voxels);

}  // namespace volreg
