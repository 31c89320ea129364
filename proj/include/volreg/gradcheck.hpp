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

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace volreg {

struct GradCheckOptions {
  double step = 1e-4;            // central difference half-width
  double tolerance = 1e-5;       // pass iff max relative error < tolerance
  std::size_t samples = 48;      // coordinates checked; all when the point is smaller
  std::uint64_t seed = 0;        // coordinate sampling
  double denominator_floor = 1e-6;
};

/// Scalar objective value plus a digest of its piecewise-linear region
/// (ReLU masks, pooling winners). Coordinates whose +/- step evaluations
/// leave the region of the unperturbed point are skipped, since the central
/// difference straddles a kink there.
struct Evaluation {
  double value = 0.0;
  std::uint64_t pattern = 0;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Compares `analytic` against central differences of `evaluate` at `point`.
/// `evaluate` must read the (temporarily perturbed) `point`; every
/// coordinate is restored before returning. Throws NumericalError on
/// non-finite values.
GradCheckReport gradient_check(std::string name, std::span<double> point, std::span<const double> analytic,
                               const std::function<Evaluation()>& evaluate, const GradCheckOptions& options);

struct GradCheckSuiteOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double layer_tolerance = 1e-5;
  double network_tolerance = 1e-4;
  /// Test fixture: scales the analytic conv3d weight gradient by 1.01.
  bool corrupt_conv_backward = false;
};

/// Checks every layer primitive and the tiny end-to-end network in 64-bit
/// arithmetic; one report per check, worst case over all seeds.
std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

}  // namespace volreg
