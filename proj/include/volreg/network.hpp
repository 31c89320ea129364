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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "volreg/architecture.hpp"
#include "volreg/nn_ops.hpp"
#include "volreg/rng.hpp"

namespace volreg {

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> gradient;
};

/// One gradient tensor per network parameter, in parameter order.
template <typename T>
using GradientSet = std::vector<BasicTensor<T>>;

/// Affine map from the raw regression output to years:
/// prediction = offset + scale * raw. Identity by default.
struct LabelScale {
  double offset = 0.0;
  double scale = 1.0;
  bool operator==(const LabelScale&) const = default;
};

template <typename T>
struct ConvReluCache {
  ConvCache<T> conv;
  ReluCache relu;
};

template <typename T>
struct InceptionTrace {
  ConvReluCache<T> b1, b3_reduce, b3, b5_reduce, b5, pool_proj;
  PoolCache pool;
  ConcatCache concat;
};

template <typename T>
struct FireTrace {
  ConvReluCache<T> squeeze, e1, e3;
  ConcatCache concat;
};

template <typename T>
struct ModuleTrace {
  std::optional<PoolCache> pool;  // inter-module pool ahead of this module
  std::array<InceptionTrace<T>, 2> inception;
  FireTrace<T> fire;
};

/// Everything one forward pass saves for its backward pass.
template <typename T>
struct ForwardTrace {
  std::vector<ConvReluCache<T>> stem_conv;
  std::vector<PoolCache> stem_pool;
  std::vector<ModuleTrace<T>> modules;
  GapCache gap;
  std::vector<DenseCache<T>> dense;
  std::vector<ReluCache> dense_relu;
  DenseCache<T> output;

  /// Digest of every ReLU mask and pooling argmax; equal digests mean the
  /// network is the same piecewise-linear map at both points.
  std::uint64_t activation_pattern() const;
};

/// The hybrid inception/fire regressor assembled from a NetworkSpec.
///
/// Composition: stem (conv+ReLU, max-pool)* -> 4 x (inception, inception,
/// fire) with optional pooling between modules -> global average pooling ->
/// dense+ReLU layers -> single linear regression unit. Every convolution is
/// stride 1 with "same" padding and is followed by ReLU.
template <typename T>
class Network {
 public:
  Network() = default;

  /// Validates the spec, runs shape inference and draws fan-in scaled
  /// normal weights (std sqrt(2 / fan_in), zero biases) from `rng`.
  static Network build(const NetworkSpec& spec, Rng& rng);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  LabelScale& label_scale() { return label_scale_; }
  const LabelScale& label_scale() const { return label_scale_; }

  /// Prediction in years plus the trace needed by `backward`.
  std::pair<double, ForwardTrace<T>> forward(const BasicTensor<T>& x) const;

  /// Prediction without keeping intermediate activations.
  double predict(const BasicTensor<T>& x) const;

  /// Accumulates d(loss)/d(parameter) into `grads` given d(loss)/d(prediction).
  void backward(const ForwardTrace<T>& trace, double grad_prediction, GradientSet<T>& grads) const;

  /// Same, accumulating into each Parameter::gradient.
  void backward(const ForwardTrace<T>& trace, double grad_prediction);

  GradientSet<T> zero_gradients() const;
  void zero_grad();

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.spec_ = spec_;
    out.label_scale_ = label_scale_;
    out.stem_ = stem_;
    out.modules_ = modules_;
    out.dense_ = dense_;
    out.output_ = output_;
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<U>(), p.gradient.template cast<U>()});
    return out;
  }

 private:
  template <typename U>
  friend class Network;

  struct ConvUnit {
    std::size_t weight = 0;
    std::size_t bias = 0;
    Extent kernel = 1;
  };
  struct InceptionUnit {
    ConvUnit b1, b3_reduce, b3, b5_reduce, b5, pool_proj;
  };
  struct FireUnit {
    ConvUnit squeeze, e1, e3;
  };
  struct ModuleUnit {
    std::array<InceptionUnit, 2> inception;
    FireUnit fire;
  };
  struct DenseUnit {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };

  ConvUnit add_conv(const std::string& name, Extent in, Extent out, Extent kernel, Rng& rng);
  DenseUnit add_dense(const std::string& name, Extent in, Extent out, Rng& rng);

  BasicTensor<T> conv_relu(const BasicTensor<T>& x, const ConvUnit& unit, ConvReluCache<T>* cache) const;
  BasicTensor<T> conv_relu_backward(const BasicTensor<T>& grad, const ConvUnit& unit, const ConvReluCache<T>& cache,
                                    GradientSet<T>& grads) const;
  BasicTensor<T> pool(const BasicTensor<T>& x, Extent window, Extent stride, PoolCache* cache) const;
  BasicTensor<T> pool_backward(const BasicTensor<T>& grad, const PoolCache& cache) const;
  BasicTensor<T> inception_forward(const BasicTensor<T>& x, const InceptionUnit& unit, InceptionTrace<T>* trace) const;
  BasicTensor<T> inception_backward(const BasicTensor<T>& grad, const InceptionUnit& unit,
                                    const InceptionTrace<T>& trace, GradientSet<T>& grads) const;
  BasicTensor<T> fire_forward(const BasicTensor<T>& x, const FireUnit& unit, FireTrace<T>* trace) const;
  BasicTensor<T> fire_backward(const BasicTensor<T>& grad, const FireUnit& unit, const FireTrace<T>& trace,
                               GradientSet<T>& grads) const;
  double run(const BasicTensor<T>& x, ForwardTrace<T>* trace) const;

  NetworkSpec spec_;
  LabelScale label_scale_;
  std::vector<Parameter<T>> params_;
  std::vector<ConvUnit> stem_;
  std::vector<ModuleUnit> modules_;
  std::vector<DenseUnit> dense_;
  DenseUnit output_;
};

}  // namespace volreg
