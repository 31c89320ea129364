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
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "volreg/tensor.hpp"

namespace volreg {

/// Four parallel branches joined along channels: 1x1, 1x1 -> 3x3, 1x1 -> 5x5,
/// and 3x3 max-pool -> 1x1.
struct InceptionSpec {
  Extent in_channels = 0;
  Extent b1 = 0;
  Extent b3_reduce = 0;
  Extent b3 = 0;
  Extent b5_reduce = 0;
  Extent b5 = 0;
  Extent pool_proj = 0;

  Extent out_channels() const { return b1 + b3 + b5 + pool_proj; }
  bool operator==(const InceptionSpec&) const = default;
};

/// 1x1 squeeze followed by parallel 1x1 and 3x3 expands joined along channels.
struct FireSpec {
  Extent in_channels = 0;
  Extent s = 0;
  Extent e1 = 0;
  Extent e3 = 0;

  Extent out_channels() const { return e1 + e3; }
  bool operator==(const FireSpec&) const = default;
};

struct ModuleSpec {
  std::array<InceptionSpec, 2> inception;
  FireSpec fire;
  bool operator==(const ModuleSpec&) const = default;
};

/// Stem: conv_widths[i] convolution (+ReLU) followed by a max-pool with
/// pool_windows[i] / pool_strides[i], for each i.
struct StemSpec {
  std::vector<Extent> conv_widths;
  Extent conv_kernel = 3;
  std::vector<Extent> pool_windows;
  std::vector<Extent> pool_strides;
  bool operator==(const StemSpec&) const = default;
};

/// Optional max-pool inserted between consecutive modules.
struct PoolSpec {
  bool enabled = false;
  Extent window = 3;
  Extent stride = 2;
  bool operator==(const PoolSpec&) const = default;
};

struct HeadSpec {
  std::vector<Extent> dense_widths;  // hidden layers, each followed by ReLU
  Extent output_units = 1;           // linear regression unit
  bool operator==(const HeadSpec&) const = default;
};

/// Declarative description of the hybrid inception/fire regressor.
struct NetworkSpec {
  int dimensionality = 3;
  Shape input_shape;  // [C,D,H,W] or [C,H,W]
  StemSpec stem;
  std::vector<ModuleSpec> modules;
  PoolSpec module_pool;
  bool pool_same_padding = true;  // false: pools use valid windows
  HeadSpec head;

  bool operator==(const NetworkSpec&) const = default;
};

/// Builds the module channel schedule: inception branches b1:b3:b5:pool_proj
/// in ratio 2:4:1:1 with reduces at half the branch width; fire squeeze at
/// 1/8 of the output with equal expands.
ModuleSpec make_module(Extent in_channels, Extent out_channels);

/// Stem 32, module outputs 64/128/256/512, inter-module pooling, head
/// 256/128/64. Input 1x121x145x121 (3D) or 1x121x145 (2D).
NetworkSpec default_spec(int dimensionality = 3);

/// Default topology with widths divided by 8, the two stem downsamplings
/// only, and a 1x12x12x12 (or 1x12x12) input.
NetworkSpec tiny_spec(int dimensionality = 3);

/// Replaces the input shape; the leading extent is the channel count.
NetworkSpec with_input_shape(NetworkSpec spec, Shape input_shape);

/// Throws ConfigError when a structural invariant is violated.
void validate(const NetworkSpec& spec);

struct LayerShape {
  std::string name;
  std::string kind;
  std::string kernel;
  Shape output;
  std::size_t parameters = 0;
};

/// Activation shape after every stage; throws ShapeError on spatial collapse.
std::vector<LayerShape> infer_shapes(const NetworkSpec& spec);

/// Weights plus biases of a k^dims convolution.
std::size_t conv_parameter_count(Extent in_channels, Extent out_channels, Extent kernel, int dimensionality);

std::size_t inception_parameter_count(const InceptionSpec& spec, int dimensionality);
std::size_t fire_parameter_count(const FireSpec& spec, int dimensionality);

/// A plain 3x3(x3) convolution with the fire module's in/out channels.
std::size_t plain_conv_parameter_count(const FireSpec& spec, int dimensionality);

struct ParameterCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> per_layer;
};

ParameterCount count_parameters(const NetworkSpec& spec);

nlohmann::ordered_json to_json(const NetworkSpec& spec);

/// Parses a spec document; unknown keys are rejected.
NetworkSpec spec_from_json(const nlohmann::json& doc);

}  // namespace volreg
