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

#include "volreg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "volreg/digest.hpp"
#include "volreg/error.hpp"
#include "volreg/network.hpp"
#include "volreg/nn_ops.hpp"
#include "volreg/rng.hpp"

namespace volreg {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(std::string name, std::span<double> point, std::span<const double> analytic,
                               const std::function<Evaluation()>& evaluate, const GradCheckOptions& options) {
  if (point.size() != analytic.size()) throw ShapeError("gradient_check: point and gradient sizes differ");
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (!std::isfinite(point[i]) || !std::isfinite(analytic[i])) {
      throw NumericalError("gradient_check: non-finite input at coordinate " + std::to_string(i));
    }
  }

  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > options.samples) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.samples; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                              static_cast<std::int64_t>(coords.size() - 1)));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.samples);
  }

  GradCheckReport report;
  report.name = std::move(name);
  report.tolerance = options.tolerance;
  const Evaluation base = evaluate();
  if (!std::isfinite(base.value)) throw NumericalError("gradient_check: non-finite objective");
  for (std::size_t c : coords) {
    const double saved = point[c];
    point[c] = saved + options.step;
    const Evaluation plus = evaluate();
    point[c] = saved - options.step;
    const Evaluation minus = evaluate();
    point[c] = saved;
    if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) {
      throw NumericalError("gradient_check: non-finite objective at coordinate " + std::to_string(c));
    }
    if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
      ++report.skipped;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * options.step);
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic[c], numeric, options.denominator_floor));
    ++report.checked;
  }
  report.passed = report.checked > 0 && report.max_rel_error < options.tolerance;
  return report;
}

namespace {

using Tensors = std::vector<Tensor64>;

constexpr double kLinearMin = 0.25;

std::vector<double> flatten(const Tensors& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

void unflatten(std::span<const double> flat, Tensors& ts) {
  std::size_t offset = 0;
  for (auto& t : ts) {
    std::copy_n(flat.begin() + offset, t.size(), t.data().begin());
    offset += t.size();
  }
}

Tensor64 random_tensor(Shape shape, Rng& rng, double min_magnitude = 0.0) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) {
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::abs(v) < min_magnitude);
  }
  return t;
}

double project(const Tensor64& y, const Tensor64& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
  return acc;
}

std::uint64_t pattern_of(const ReluCache& c) { return fnv1a(std::as_bytes(std::span(c.active))); }
std::uint64_t pattern_of(const PoolCache& c) { return fnv1a(std::as_bytes(std::span(c.argmax))); }

// Objective L(inputs) and its analytic gradient with respect to every input.
struct OpCheck {
  std::string name;
  Tensors inputs;
  std::function<Evaluation(const Tensors&)> objective;
  std::function<Tensors(const Tensors&)> gradients;
};

GradCheckReport run_op_check(const OpCheck& check, const GradCheckOptions& options) {
  Tensors work = check.inputs;
  std::vector<double> point = flatten(work);
  const std::vector<double> analytic = flatten(check.gradients(check.inputs));
  return gradient_check(check.name, point, analytic, [&] {
    unflatten(point, work);
    return check.objective(work);
  }, options);
}

std::vector<OpCheck> layer_checks(std::uint64_t seed, bool corrupt_conv) {
  Rng rng(seed);
  std::vector<OpCheck> checks;

  {
    Tensor64 r = random_tensor({3, 4, 4, 4}, rng);
    checks.push_back({"conv3d", {random_tensor({2, 4, 4, 4}, rng), random_tensor({3, 2, 3, 3, 3}, rng), random_tensor({3}, rng)},
                      [r](const Tensors& in) {
                        auto [y, c] = conv3d_forward(in[0], in[1], in[2], Triple{1, 1, 1}, Padding::kSame);
                        return Evaluation{project(y, r), 0};
                      },
                      [r, corrupt_conv](const Tensors& in) {
                        auto [y, c] = conv3d_forward(in[0], in[1], in[2], Triple{1, 1, 1}, Padding::kSame);
                        ConvGrads<double> g = conv3d_backward(r, c);
                        if (corrupt_conv) {
                          for (auto& v : g.weight.data()) v *= 1.01;
                        }
                        return Tensors{g.input, g.weight, g.bias};
                      }});
  }
  {
    Tensor64 r = random_tensor({2, 2, 2, 2}, rng);
    checks.push_back({"conv3d_stride2_valid", {random_tensor({1, 5, 5, 5}, rng), random_tensor({2, 1, 3, 3, 3}, rng), random_tensor({2}, rng)},
                      [r](const Tensors& in) {
                        auto [y, c] = conv3d_forward(in[0], in[1], in[2], Triple{2, 2, 2}, Padding::kValid);
                        return Evaluation{project(y, r), 0};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = conv3d_forward(in[0], in[1], in[2], Triple{2, 2, 2}, Padding::kValid);
                        ConvGrads<double> g = conv3d_backward(r, c);
                        return Tensors{g.input, g.weight, g.bias};
                      }});
  }
  {
    Tensor64 r = random_tensor({3, 5, 5}, rng);
    checks.push_back({"conv2d", {random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
                      [r](const Tensors& in) {
                        auto [y, c] = conv2d_forward(in[0], in[1], in[2], Pair{1, 1}, Padding::kSame);
                        return Evaluation{project(y, r), 0};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = conv2d_forward(in[0], in[1], in[2], Pair{1, 1}, Padding::kSame);
                        ConvGrads<double> g = conv2d_backward(r, c);
                        return Tensors{g.input, g.weight, g.bias};
                      }});
  }
  {
    Tensor64 r = random_tensor({2, 2, 2, 2}, rng);
    checks.push_back({"maxpool3d", {random_tensor({2, 4, 4, 4}, rng)},
                      [r](const Tensors& in) {
                        auto [y, c] = maxpool3d_forward(in[0], Triple{3, 3, 3}, Triple{2, 2, 2}, Padding::kSame);
                        return Evaluation{project(y, r), pattern_of(c)};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = maxpool3d_forward(in[0], Triple{3, 3, 3}, Triple{2, 2, 2}, Padding::kSame);
                        return Tensors{maxpool3d_backward(r, c)};
                      }});
  }
  {
    Tensor64 r = random_tensor({2, 2, 2}, rng);
    checks.push_back({"maxpool2d", {random_tensor({2, 4, 4}, rng)},
                      [r](const Tensors& in) {
                        auto [y, c] = maxpool2d_forward(in[0], Pair{2, 2}, Pair{2, 2});
                        return Evaluation{project(y, r), pattern_of(c)};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = maxpool2d_forward(in[0], Pair{2, 2}, Pair{2, 2});
                        return Tensors{maxpool2d_backward(r, c)};
                      }});
  }
  {
    Tensor64 r = random_tensor({2, 3, 3}, rng);
    checks.push_back({"relu", {random_tensor({2, 3, 3}, rng, 1e-2)},
                      [r](const Tensors& in) {
                        auto [y, c] = relu_forward(in[0]);
                        return Evaluation{project(y, r), pattern_of(c)};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = relu_forward(in[0]);
                        return Tensors{relu_backward(r, c)};
                      }});
  }
  {
    // Linear maps: entries bounded away from zero keep every gradient
    // coordinate well above the finite-difference rounding floor.
    Tensor64 r = random_tensor({5, 3, 3, 3}, rng, kLinearMin);
    checks.push_back({"concat_channels", {random_tensor({2, 3, 3, 3}, rng, kLinearMin), random_tensor({3, 3, 3, 3}, rng, kLinearMin)},
                      [r](const Tensors& in) {
                        auto [y, c] = concat_channels(std::span<const Tensor64>(in));
                        return Evaluation{project(y, r), 0};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = concat_channels(std::span<const Tensor64>(in));
                        return concat_channels_backward(r, c);
                      }});
  }
  {
    Tensor64 r = random_tensor({3}, rng, kLinearMin);
    checks.push_back({"global_avg_pool", {random_tensor({3, 2, 2, 2}, rng, kLinearMin)},
                      [r](const Tensors& in) {
                        auto [y, c] = global_avg_pool(in[0]);
                        return Evaluation{project(y, r), 0};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = global_avg_pool(in[0]);
                        return Tensors{global_avg_pool_backward(r, c)};
                      }});
  }
  {
    Tensor64 r = random_tensor({4}, rng, kLinearMin);
    checks.push_back({"dense", {random_tensor({5}, rng, kLinearMin), random_tensor({4, 5}, rng, kLinearMin), random_tensor({4}, rng, kLinearMin)},
                      [r](const Tensors& in) {
                        auto [y, c] = dense_forward(in[0], in[1], in[2]);
                        return Evaluation{project(y, r), 0};
                      },
                      [r](const Tensors& in) {
                        auto [y, c] = dense_forward(in[0], in[1], in[2]);
                        DenseGrads<double> g = dense_backward(r, c);
                        return Tensors{g.input, g.weight, g.bias};
                      }});
  }
  checks.push_back({"mse_loss", {random_tensor({4}, rng), random_tensor({4}, rng)},
                    [](const Tensors& in) { return Evaluation{mse_loss(in[0], in[1]).first, 0}; },
                    [](const Tensors& in) {
                      auto [loss, c] = mse_loss(in[0], in[1]);
                      Tensor64 gp = mse_backward(c);
                      Tensor64 gt = gp;
                      for (auto& v : gt.data()) v = -v;
                      return Tensors{gp, gt};
                    }});
  return checks;
}

GradCheckReport network_check(std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  Network<double> net = Network<double>::build(tiny_spec(3), rng);
  Tensor64 x = random_tensor(net.spec().input_shape, rng);
  const double target = rng.uniform(-1.0, 1.0);

  auto [pred, trace] = net.forward(x);
  net.zero_grad();
  net.backward(trace, 2.0 * (pred - target));

  std::vector<double> point;
  std::vector<double> analytic;
  for (const auto& p : net.parameters()) {
    point.insert(point.end(), p.value.data().begin(), p.value.data().end());
    analytic.insert(analytic.end(), p.gradient.data().begin(), p.gradient.data().end());
  }
  GradCheckOptions options;
  options.tolerance = tolerance;
  options.seed = seed;
  options.samples = 64;
  return gradient_check("network_tiny_end_to_end", point, analytic, [&] {
    std::size_t offset = 0;
    for (auto& p : net.parameters()) {
      std::copy_n(point.begin() + offset, p.value.size(), p.value.data().begin());
      offset += p.value.size();
    }
    auto [y, t] = net.forward(x);
    return Evaluation{(y - target) * (y - target), t.activation_pattern()};
  }, options);
}

void merge(GradCheckReport& into, const GradCheckReport& r) {
  into.max_rel_error = std::max(into.max_rel_error, r.max_rel_error);
  into.checked += r.checked;
  into.skipped += r.skipped;
  into.passed = into.passed && r.passed;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  std::vector<GradCheckReport> reports;
  for (std::size_t s = 0; s < options.seeds.size(); ++s) {
    const std::uint64_t seed = options.seeds[s];
    GradCheckOptions layer_options;
    layer_options.tolerance = options.layer_tolerance;
    layer_options.seed = seed;
    std::vector<GradCheckReport> round;
    for (const OpCheck& check : layer_checks(seed, options.corrupt_conv_backward)) {
      round.push_back(run_op_check(check, layer_options));
    }
    round.push_back(network_check(seed, options.network_tolerance));
    if (s == 0) {
      reports = std::move(round);
    } else {
      for (std::size_t i = 0; i < round.size(); ++i) merge(reports[i], round[i]);
    }
  }
  return reports;
}

}  // namespace volreg
