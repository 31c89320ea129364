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

#include <cstddef>
#include <functional>

namespace volreg {

/// Worker count from VOLREG_THREADS (0 or unset = hardware concurrency).
std::size_t default_thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = default).
/// Work items must be independent; results must be written to per-index
/// slots so the outcome does not depend on scheduling. Calls made from
/// inside a worker run serially. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace volreg
