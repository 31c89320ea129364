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

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "volreg/tensor.hpp"

namespace volreg {

// Differentiable layer primitives. Each forward returns its output together
// with the cache its backward consumes; caches are independent values, so
// distinct samples can run forward/backward concurrently.
//
// Volumes are [C, D, H, W] and images [C, H, W]; there is no batch axis.

enum class Padding {
  kValid,  ///< no padding
  kSame,   ///< output extent max(1, floor(in / stride)), padding split with the smaller half first
};

using Triple = std::array<Extent, 3>;
using Pair = std::array<Extent, 2>;

/// Output extent of a sliding window along one axis.
Extent window_output_extent(Extent in, Extent window, Extent stride, Padding padding);

/// Leading padding along one axis.
Extent window_padding_before(Extent in, Extent window, Extent stride, Padding padding);

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)

template <typename T>
struct ConvCache {
  BasicTensor<T> input;   // as [C, D, H, W]; 2D inputs carry D = 1
  BasicTensor<T> weight;  // as [K, C, kd, kh, kw]
  Triple stride{1, 1, 1};
  Padding padding = Padding::kValid;
  bool planar = false;    // produced by conv2d_forward
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// x: [C,D,H,W], w: [K,C,kd,kh,kw], b: [K] -> [K,D',H',W'].
template <typename T>
std::pair<BasicTensor<T>, ConvCache<T>> conv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                                       const BasicTensor<T>& b, Triple stride, Padding padding);

template <typename T>
ConvGrads<T> conv3d_backward(const BasicTensor<T>& grad_out, const ConvCache<T>& cache);

/// x: [C,H,W], w: [K,C,kh,kw], b: [K] -> [K,H',W'].
template <typename T>
std::pair<BasicTensor<T>, ConvCache<T>> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                                       const BasicTensor<T>& b, Pair stride, Padding padding);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const ConvCache<T>& cache);

// ---------------------------------------------------------------------------
// Max pooling. Padded cells never win; ties go to the lowest input index.

struct PoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
std::pair<BasicTensor<T>, PoolCache> maxpool3d_forward(const BasicTensor<T>& x, Triple window, Triple stride,
                                                       Padding padding = Padding::kValid);

template <typename T>
BasicTensor<T> maxpool3d_backward(const BasicTensor<T>& grad_out, const PoolCache& cache);

template <typename T>
std::pair<BasicTensor<T>, PoolCache> maxpool2d_forward(const BasicTensor<T>& x, Pair window, Pair stride,
                                                       Padding padding = Padding::kValid);

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& grad_out, const PoolCache& cache) {
  return maxpool3d_backward(grad_out, cache);
}

// ---------------------------------------------------------------------------
// ReLU

struct ReluCache {
  Shape shape;
  std::vector<std::uint8_t> active;  // x > 0
};

template <typename T>
std::pair<BasicTensor<T>, ReluCache> relu_forward(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const ReluCache& cache);

// ---------------------------------------------------------------------------
// Channel concatenation

struct ConcatCache {
  std::vector<Shape> input_shapes;
};

template <typename T>
std::pair<BasicTensor<T>, ConcatCache> concat_channels(std::span<const BasicTensor<T>> xs);

template <typename T>
std::vector<BasicTensor<T>> concat_channels_backward(const BasicTensor<T>& grad_out, const ConcatCache& cache);

// ---------------------------------------------------------------------------
// Global average pooling: [C, spatial...] -> [C]

struct GapCache {
  Shape input_shape;
};

template <typename T>
std::pair<BasicTensor<T>, GapCache> global_avg_pool(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const GapCache& cache);

// ---------------------------------------------------------------------------
// Dense: y = w x + b with x: [N], w: [M,N], b: [M]

template <typename T>
struct DenseCache {
  BasicTensor<T> input;
  BasicTensor<T> weight;
};

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

template <typename T>
std::pair<BasicTensor<T>, DenseCache<T>> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                                       const BasicTensor<T>& b);

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const DenseCache<T>& cache);

// ---------------------------------------------------------------------------
// Mean squared error

template <typename T>
struct MseCache {
  BasicTensor<T> diff;  // pred - target
};

template <typename T>
std::pair<double, MseCache<T>> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// Gradient of `upstream * loss` with respect to pred: 2 (pred - target) / N.
template <typename T>
BasicTensor<T> mse_backward(const MseCache<T>& cache, double upstream = 1.0);

}  // namespace volreg
