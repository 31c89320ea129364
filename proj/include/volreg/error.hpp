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

#include <stdexcept>
#include <string>

namespace volreg {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, axes or extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or specification values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failures and malformed files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or diverging numerics.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace volreg
