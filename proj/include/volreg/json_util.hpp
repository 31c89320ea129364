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

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "volreg/error.hpp"

namespace volreg {

/// Throws ConfigError naming the first key of `object` not in `allowed`.
inline void reject_unknown_keys(const nlohmann::json& object, std::initializer_list<std::string_view> allowed,
                                std::string_view path) {
  if (!object.is_object()) throw ConfigError(std::string(path.empty() ? "document" : path) + ": expected an object");
  for (const auto& [key, value] : object.items()) {
    bool known = false;
    for (std::string_view a : allowed) known = known || a == key;
    if (!known) {
      throw ConfigError("unknown config key '" + (path.empty() ? key : std::string(path) + "." + key) + "'");
    }
  }
}

/// Reads object[key] into `out` when present; type errors become ConfigError.
template <typename V>
void read_optional(const nlohmann::json& object, std::string_view key, V& out, std::string_view path) {
  const auto it = object.find(std::string(key));
  if (it == object.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + std::string(path) + (path.empty() ? "" : ".") + std::string(key) +
                      "' has the wrong type: " + e.what());
  }
}

}  // namespace volreg
