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

#include "volreg/architecture.hpp"

#include <algorithm>
#include <string>

#include "volreg/json_util.hpp"
#include "volreg/nn_ops.hpp"

namespace volreg {
namespace {

Padding pool_padding(const NetworkSpec& spec) { return spec.pool_same_padding ? Padding::kSame : Padding::kValid; }

std::string kernel_label(Extent k, int dims) {
  std::string s = std::to_string(k);
  for (int i = 1; i < dims; ++i) s += "x" + std::to_string(k);
  return s;
}

// Applies a window op to the spatial part of `shape`.
Shape window_shape(const Shape& shape, Extent window, Extent stride, Padding padding, const std::string& layer) {
  Shape out = shape;
  for (std::size_t a = 1; a < shape.size(); ++a) {
    try {
      out[a] = window_output_extent(shape[a], window, stride, padding);
    } catch (const ShapeError& e) {
      throw ShapeError("shape inference failed at " + layer + ": " + e.what() + " (input " + to_string(shape) + ")");
    }
  }
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("invalid network spec: " + message);
}

void validate_inception(const InceptionSpec& s, const std::string& where) {
  require(s.in_channels > 0 && s.b1 > 0 && s.b3_reduce > 0 && s.b3 > 0 && s.b5_reduce > 0 && s.b5 > 0 &&
              s.pool_proj > 0,
          where + " widths must be positive");
  require(s.b3_reduce <= s.in_channels && s.b5_reduce <= s.in_channels,
          where + " reduce widths must not exceed in_channels");
}

void validate_fire(const FireSpec& s, const std::string& where) {
  require(s.in_channels > 0 && s.s > 0 && s.e1 > 0 && s.e3 > 0, where + " widths must be positive");
  require(s.s < s.e1 + s.e3, where + " squeeze width must be below e1 + e3");
}

std::vector<Extent> read_extents(const nlohmann::json& object, std::string_view key, std::string_view path) {
  std::vector<Extent> out;
  read_optional(object, key, out, path);
  return out;
}

InceptionSpec inception_from_json(const nlohmann::json& j, const std::string& path) {
  reject_unknown_keys(j, {"in_channels", "b1", "b3_reduce", "b3", "b5_reduce", "b5", "pool_proj"}, path);
  InceptionSpec s;
  read_optional(j, "in_channels", s.in_channels, path);
  read_optional(j, "b1", s.b1, path);
  read_optional(j, "b3_reduce", s.b3_reduce, path);
  read_optional(j, "b3", s.b3, path);
  read_optional(j, "b5_reduce", s.b5_reduce, path);
  read_optional(j, "b5", s.b5, path);
  read_optional(j, "pool_proj", s.pool_proj, path);
  return s;
}

FireSpec fire_from_json(const nlohmann::json& j, const std::string& path) {
  reject_unknown_keys(j, {"in_channels", "s", "e1", "e3"}, path);
  FireSpec s;
  read_optional(j, "in_channels", s.in_channels, path);
  read_optional(j, "s", s.s, path);
  read_optional(j, "e1", s.e1, path);
  read_optional(j, "e3", s.e3, path);
  return s;
}

}  // namespace

ModuleSpec make_module(Extent in_channels, Extent out_channels) {
  ModuleSpec m;
  InceptionSpec inc;
  inc.b1 = std::max<Extent>(1, out_channels / 4);
  inc.b3 = std::max<Extent>(1, out_channels / 2);
  inc.b5 = std::max<Extent>(1, out_channels / 8);
  inc.pool_proj = std::max<Extent>(1, out_channels - inc.b1 - inc.b3 - inc.b5);
  inc.b3_reduce = std::max<Extent>(1, inc.b3 / 2);
  inc.b5_reduce = std::max<Extent>(1, inc.b5 / 2);
  m.inception[0] = inc;
  m.inception[0].in_channels = in_channels;
  m.inception[1] = inc;
  m.inception[1].in_channels = inc.out_channels();
  m.fire.in_channels = inc.out_channels();
  m.fire.s = std::max<Extent>(1, out_channels / 8);
  m.fire.e1 = out_channels / 2;
  m.fire.e3 = out_channels - m.fire.e1;
  return m;
}

namespace {

NetworkSpec scaled_spec(int dimensionality, Extent stem_width, std::array<Extent, 4> outputs, Shape input,
                        bool module_pool, std::vector<Extent> head) {
  NetworkSpec spec;
  spec.dimensionality = dimensionality;
  spec.input_shape = std::move(input);
  spec.stem.conv_widths = {stem_width, stem_width};
  spec.stem.conv_kernel = 3;
  spec.stem.pool_windows = {3, 3};
  spec.stem.pool_strides = {2, 2};
  Extent in = stem_width;
  for (Extent out : outputs) {
    spec.modules.push_back(make_module(in, out));
    in = spec.modules.back().fire.out_channels();
  }
  spec.module_pool = PoolSpec{module_pool, 3, 2};
  spec.head.dense_widths = std::move(head);
  spec.head.output_units = 1;
  return spec;
}

}  // namespace

NetworkSpec default_spec(int dimensionality) {
  if (dimensionality != 2 && dimensionality != 3) throw ConfigError("dimensionality must be 2 or 3");
  Shape input = dimensionality == 3 ? Shape{1, 121, 145, 121} : Shape{1, 121, 145};
  return scaled_spec(dimensionality, 32, {64, 128, 256, 512}, std::move(input), true, {256, 128, 64});
}

NetworkSpec tiny_spec(int dimensionality) {
  if (dimensionality != 2 && dimensionality != 3) throw ConfigError("dimensionality must be 2 or 3");
  Shape input = dimensionality == 3 ? Shape{1, 12, 12, 12} : Shape{1, 12, 12};
  return scaled_spec(dimensionality, 4, {8, 16, 32, 64}, std::move(input), false, {32, 16, 8});
}

NetworkSpec with_input_shape(NetworkSpec spec, Shape input_shape) {
  spec.input_shape = std::move(input_shape);
  return spec;
}

void validate(const NetworkSpec& spec) {
  require(spec.dimensionality == 2 || spec.dimensionality == 3, "dimensionality must be 2 or 3");
  require(spec.input_shape.size() == static_cast<std::size_t>(spec.dimensionality) + 1,
          "input_shape must have " + std::to_string(spec.dimensionality + 1) + " axes");
  for (Extent e : spec.input_shape) require(e > 0, "input_shape extents must be positive");

  const StemSpec& stem = spec.stem;
  require(!stem.conv_widths.empty(), "stem needs at least one convolution");
  require(stem.pool_windows.size() == stem.conv_widths.size() && stem.pool_strides.size() == stem.conv_widths.size(),
          "stem pool_windows and pool_strides must match conv_widths in length");
  require(stem.conv_kernel > 0 && stem.conv_kernel % 2 == 1, "stem conv_kernel must be a positive odd number");
  for (std::size_t i = 0; i < stem.conv_widths.size(); ++i) {
    require(stem.conv_widths[i] > 0 && stem.pool_windows[i] > 0 && stem.pool_strides[i] > 0,
            "stem widths, windows and strides must be positive");
  }
  require(!spec.module_pool.enabled || (spec.module_pool.window > 0 && spec.module_pool.stride > 0),
          "module_pool window and stride must be positive");

  require(spec.modules.size() == 4,
          "expected exactly 4 inception/fire modules, got " + std::to_string(spec.modules.size()));
  Extent channels = stem.conv_widths.back();
  for (std::size_t m = 0; m < spec.modules.size(); ++m) {
    const ModuleSpec& mod = spec.modules[m];
    const std::string where = "module" + std::to_string(m + 1);
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string inc = where + ".inception" + std::to_string(i + 1);
      validate_inception(mod.inception[i], inc);
      require(mod.inception[i].in_channels == channels,
              inc + ".in_channels is " + std::to_string(mod.inception[i].in_channels) + " but receives " +
                  std::to_string(channels));
      channels = mod.inception[i].out_channels();
    }
    validate_fire(mod.fire, where + ".fire");
    require(mod.fire.in_channels == channels, where + ".fire.in_channels is " + std::to_string(mod.fire.in_channels) +
                                                  " but receives " + std::to_string(channels));
    channels = mod.fire.out_channels();
  }

  for (Extent w : spec.head.dense_widths) require(w > 0, "head dense widths must be positive");
  require(spec.head.output_units == 1, "head must end in a single regression unit");
}

std::size_t conv_parameter_count(Extent in_channels, Extent out_channels, Extent kernel, int dimensionality) {
  std::size_t taps = 1;
  for (int i = 0; i < dimensionality; ++i) taps *= static_cast<std::size_t>(kernel);
  return static_cast<std::size_t>(in_channels * out_channels) * taps + static_cast<std::size_t>(out_channels);
}

std::size_t inception_parameter_count(const InceptionSpec& s, int dims) {
  return conv_parameter_count(s.in_channels, s.b1, 1, dims) + conv_parameter_count(s.in_channels, s.b3_reduce, 1, dims) +
         conv_parameter_count(s.b3_reduce, s.b3, 3, dims) + conv_parameter_count(s.in_channels, s.b5_reduce, 1, dims) +
         conv_parameter_count(s.b5_reduce, s.b5, 5, dims) + conv_parameter_count(s.in_channels, s.pool_proj, 1, dims);
}

std::size_t fire_parameter_count(const FireSpec& s, int dims) {
  return conv_parameter_count(s.in_channels, s.s, 1, dims) + conv_parameter_count(s.s, s.e1, 1, dims) +
         conv_parameter_count(s.s, s.e3, 3, dims);
}

std::size_t plain_conv_parameter_count(const FireSpec& s, int dims) {
  return conv_parameter_count(s.in_channels, s.out_channels(), 3, dims);
}

std::vector<LayerShape> infer_shapes(const NetworkSpec& spec) {
  validate(spec);
  const int dims = spec.dimensionality;
  const Padding pp = pool_padding(spec);
  std::vector<LayerShape> table;
  Shape shape = spec.input_shape;
  table.push_back({"input", "input", "", shape, 0});

  for (std::size_t i = 0; i < spec.stem.conv_widths.size(); ++i) {
    const std::string conv = "stem.conv" + std::to_string(i + 1);
    const std::size_t params = conv_parameter_count(shape[0], spec.stem.conv_widths[i], spec.stem.conv_kernel, dims);
    shape[0] = spec.stem.conv_widths[i];
    table.push_back({conv, "conv+relu", kernel_label(spec.stem.conv_kernel, dims), shape, params});
    const std::string pool = "stem.pool" + std::to_string(i + 1);
    shape = window_shape(shape, spec.stem.pool_windows[i], spec.stem.pool_strides[i], pp, pool);
    table.push_back({pool, "maxpool", kernel_label(spec.stem.pool_windows[i], dims) + "/s" +
                                          std::to_string(spec.stem.pool_strides[i]),
                     shape, 0});
  }

  for (std::size_t m = 0; m < spec.modules.size(); ++m) {
    const ModuleSpec& mod = spec.modules[m];
    const std::string prefix = "module" + std::to_string(m + 1);
    if (m > 0 && spec.module_pool.enabled) {
      const std::string pool = prefix + ".pool";
      shape = window_shape(shape, spec.module_pool.window, spec.module_pool.stride, pp, pool);
      table.push_back({pool, "maxpool", kernel_label(spec.module_pool.window, dims) + "/s" +
                                            std::to_string(spec.module_pool.stride),
                       shape, 0});
    }
    for (std::size_t i = 0; i < 2; ++i) {
      shape[0] = mod.inception[i].out_channels();
      table.push_back({prefix + ".inception" + std::to_string(i + 1), "inception",
                       kernel_label(1, dims) + "|" + kernel_label(3, dims) + "|" + kernel_label(5, dims) + "|pool",
                       shape, inception_parameter_count(mod.inception[i], dims)});
    }
    shape[0] = mod.fire.out_channels();
    table.push_back({prefix + ".fire", "fire", kernel_label(1, dims) + ">" + kernel_label(1, dims) + "|" +
                                                   kernel_label(3, dims),
                     shape, fire_parameter_count(mod.fire, dims)});
  }

  shape = Shape{shape[0]};
  table.push_back({"gap", "global_avg_pool", "", shape, 0});
  for (std::size_t i = 0; i < spec.head.dense_widths.size(); ++i) {
    const std::size_t params = static_cast<std::size_t>(shape[0] * spec.head.dense_widths[i] + spec.head.dense_widths[i]);
    shape = Shape{spec.head.dense_widths[i]};
    table.push_back({"head.dense" + std::to_string(i + 1), "dense+relu", "", shape, params});
  }
  const std::size_t params = static_cast<std::size_t>(shape[0] * spec.head.output_units + spec.head.output_units);
  shape = Shape{spec.head.output_units};
  table.push_back({"head.output", "dense", "", shape, params});
  return table;
}

ParameterCount count_parameters(const NetworkSpec& spec) {
  ParameterCount count;
  for (const LayerShape& row : infer_shapes(spec)) {
    if (row.parameters == 0) continue;
    count.per_layer.emplace_back(row.name, row.parameters);
    count.total += row.parameters;
  }
  return count;
}

nlohmann::ordered_json to_json(const NetworkSpec& spec) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["dimensionality"] = spec.dimensionality;
  j["input_shape"] = spec.input_shape;
  j["stem"] = ordered_json{{"conv_widths", spec.stem.conv_widths},
                           {"conv_kernel", spec.stem.conv_kernel},
                           {"pool_windows", spec.stem.pool_windows},
                           {"pool_strides", spec.stem.pool_strides}};
  ordered_json modules = ordered_json::array();
  for (const ModuleSpec& m : spec.modules) {
    ordered_json inc = ordered_json::array();
    for (const InceptionSpec& s : m.inception) {
      inc.push_back(ordered_json{{"in_channels", s.in_channels},
                                 {"b1", s.b1},
                                 {"b3_reduce", s.b3_reduce},
                                 {"b3", s.b3},
                                 {"b5_reduce", s.b5_reduce},
                                 {"b5", s.b5},
                                 {"pool_proj", s.pool_proj}});
    }
    modules.push_back(ordered_json{
        {"inception", inc},
        {"fire", ordered_json{{"in_channels", m.fire.in_channels}, {"s", m.fire.s}, {"e1", m.fire.e1}, {"e3", m.fire.e3}}}});
  }
  j["modules"] = modules;
  j["module_pool"] = ordered_json{
      {"enabled", spec.module_pool.enabled}, {"window", spec.module_pool.window}, {"stride", spec.module_pool.stride}};
  j["pool_same_padding"] = spec.pool_same_padding;
  j["head"] = ordered_json{{"dense_widths", spec.head.dense_widths}, {"output_units", spec.head.output_units}};
  return j;
}

NetworkSpec spec_from_json(const nlohmann::json& doc) {
  const std::string root = "network";
  reject_unknown_keys(doc, {"dimensionality", "input_shape", "stem", "modules", "module_pool", "pool_same_padding", "head"},
                      root);
  NetworkSpec spec;
  read_optional(doc, "dimensionality", spec.dimensionality, root);
  read_optional(doc, "input_shape", spec.input_shape, root);
  read_optional(doc, "pool_same_padding", spec.pool_same_padding, root);
  if (doc.contains("stem")) {
    const auto& s = doc["stem"];
    reject_unknown_keys(s, {"conv_widths", "conv_kernel", "pool_windows", "pool_strides"}, root + ".stem");
    spec.stem.conv_widths = read_extents(s, "conv_widths", root + ".stem");
    read_optional(s, "conv_kernel", spec.stem.conv_kernel, root + ".stem");
    spec.stem.pool_windows = read_extents(s, "pool_windows", root + ".stem");
    spec.stem.pool_strides = read_extents(s, "pool_strides", root + ".stem");
  }
  if (doc.contains("modules")) {
    if (!doc["modules"].is_array()) throw ConfigError("config key 'network.modules' must be an array");
    for (std::size_t m = 0; m < doc["modules"].size(); ++m) {
      const auto& mj = doc["modules"][m];
      const std::string path = root + ".modules[" + std::to_string(m) + "]";
      reject_unknown_keys(mj, {"inception", "fire"}, path);
      ModuleSpec mod;
      if (!mj.contains("inception") || !mj["inception"].is_array() || mj["inception"].size() != 2) {
        throw ConfigError(path + ".inception must list exactly 2 inception blocks");
      }
      for (std::size_t i = 0; i < 2; ++i) {
        mod.inception[i] = inception_from_json(mj["inception"][i], path + ".inception[" + std::to_string(i) + "]");
      }
      if (!mj.contains("fire")) throw ConfigError(path + ".fire is required");
      mod.fire = fire_from_json(mj["fire"], path + ".fire");
      spec.modules.push_back(mod);
    }
  }
  if (doc.contains("module_pool")) {
    const auto& p = doc["module_pool"];
    reject_unknown_keys(p, {"enabled", "window", "stride"}, root + ".module_pool");
    read_optional(p, "enabled", spec.module_pool.enabled, root + ".module_pool");
    read_optional(p, "window", spec.module_pool.window, root + ".module_pool");
    read_optional(p, "stride", spec.module_pool.stride, root + ".module_pool");
  }
  if (doc.contains("head")) {
    const auto& h = doc["head"];
    reject_unknown_keys(h, {"dense_widths", "output_units"}, root + ".head");
    spec.head.dense_widths = read_extents(h, "dense_widths", root + ".head");
    read_optional(h, "output_units", spec.head.output_units, root + ".head");
  }
  validate(spec);
  return spec;
}

}  // namespace volreg
