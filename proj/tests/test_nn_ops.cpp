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

#include <cmath>
#include <vector>

#include "conv_oracle.hpp"
#include "doctest.h"
#include "test_util.hpp"
#include "volreg/error.hpp"
#include "volreg/gradcheck.hpp"
#include "volreg/nn_ops.hpp"

using namespace volreg;
using volreg::testing::random_tensor;

namespace {

std::vector<double> as_double(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

bool close(double a, double b, double tol = 1e-5) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

// Runs conv3d_forward/backward and the loop oracle on one configuration.
void check_conv3d_against_oracle(const Shape& xs, const Shape& ws, Triple stride, Padding padding, Rng& rng) {
  const Tensor x = random_tensor(xs, rng), w = random_tensor(ws, rng), b = random_tensor({ws[0]}, rng);
  const bool same = padding == Padding::kSame;
  auto [y, cache] = conv3d_forward(x, w, b, stride, padding);
  oracle::Geometry g;
  const auto ref = oracle::conv3d(as_double(x), {xs[0], xs[1], xs[2], xs[3]}, as_double(w),
                                  {ws[0], ws[1], ws[2], ws[3], ws[4]}, as_double(b), stride, same, &g);
  REQUIRE(y.shape() == Shape{ws[0], g.out[0], g.out[1], g.out[2]});
  for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(close(y[i], ref[i]));

  const Tensor gy = random_tensor(y.shape(), rng);
  const auto grads = conv3d_backward(gy, cache);
  std::vector<double> gx, gw, gb;
  oracle::conv3d_adjoint(as_double(x), {xs[0], xs[1], xs[2], xs[3]}, as_double(w), {ws[0], ws[1], ws[2], ws[3], ws[4]},
                         as_double(gy), stride, same, gx, gw, gb);
  for (std::size_t i = 0; i < gx.size(); ++i) REQUIRE(close(grads.input[i], gx[i]));
  for (std::size_t i = 0; i < gw.size(); ++i) REQUIRE(close(grads.weight[i], gw[i]));
  for (std::size_t i = 0; i < gb.size(); ++i) REQUIRE(close(grads.bias[i], gb[i]));
}

}  // namespace

TEST_CASE("window geometry") {
  CHECK(window_output_extent(121, 3, 2, Padding::kSame) == 60);
  CHECK(window_output_extent(12, 3, 2, Padding::kSame) == 6);
  CHECK(window_output_extent(1, 3, 2, Padding::kSame) == 1);
  CHECK(window_output_extent(7, 3, 2, Padding::kValid) == 3);
  CHECK_THROWS_AS(window_output_extent(2, 3, 1, Padding::kValid), ShapeError);
  // Same padding with stride 1 preserves extents for every odd kernel up to 7.
  for (Extent k = 1; k <= 7; k += 2) {
    for (Extent n = 1; n <= 12; ++n) {
      CHECK(window_output_extent(n, k, 1, Padding::kSame) == n);
      if (n >= k) CHECK(window_padding_before(n, k, 1, Padding::kSame) == (k - 1) / 2);
    }
  }
}

TEST_CASE("conv3d closed-form cases") {
  Rng rng(1);
  const Tensor r = random_tensor({1, 3, 4, 5}, rng);
  auto [id, c1] = conv3d_forward(r, Tensor({1, 1, 1, 1, 1}, 1.0f), Tensor({1}), {1, 1, 1}, Padding::kValid);
  CHECK(id == r);

  auto [y, c2] = conv3d_forward(Tensor({1, 5, 5, 5}, 0.5f), Tensor({1, 1, 3, 3, 3}, 1.0f), Tensor({1}), {1, 1, 1},
                                Padding::kValid);
  CHECK(y.shape() == Shape{1, 3, 3, 3});
  for (float v : y.values()) CHECK(v == doctest::Approx(27 * 0.5));

  auto [s, c3] = conv3d_forward(r, random_tensor({2, 1, 3, 3, 3}, rng), Tensor({2}), {1, 1, 1}, Padding::kSame);
  CHECK(s.shape() == Shape{2, 3, 4, 5});

  CHECK_THROWS_AS(conv3d_forward(r, Tensor({1, 2, 1, 1, 1}), Tensor({1}), {1, 1, 1}, Padding::kValid), ShapeError);
  CHECK_THROWS_AS(conv3d_forward(r, Tensor({1, 1, 4, 1, 1}), Tensor({1}), {1, 1, 1}, Padding::kValid), ShapeError);
  CHECK_THROWS_AS(conv3d_forward(r, Tensor({1, 1, 1, 1, 1}), Tensor({2}), {1, 1, 1}, Padding::kValid), ShapeError);
}

TEST_CASE("conv3d backward identities") {
  Rng rng(2);
  const Tensor x = random_tensor({2, 4, 4, 4}, rng), w = random_tensor({3, 2, 3, 3, 3}, rng);
  auto [y, cache] = conv3d_forward(x, w, Tensor({3}), {1, 1, 1}, Padding::kSame);
  const Tensor gy = random_tensor(y.shape(), rng);
  const auto g = conv3d_backward(gy, cache);
  for (Extent k = 0; k < 3; ++k) {
    double total = 0;
    for (Extent i = 0; i < 64; ++i) total += gy[static_cast<std::size_t>(k * 64 + i)];
    CHECK(g.bias[static_cast<std::size_t>(k)] == doctest::Approx(total).epsilon(1e-6));
  }
  const auto z = conv3d_backward(Tensor(y.shape()), cache);
  CHECK(sum(z.input) == 0.0);
  CHECK(sum(z.weight) == 0.0);
  CHECK(sum(z.bias) == 0.0);
  CHECK_THROWS_AS(conv3d_backward(Tensor({3, 4, 4, 3}), cache), ShapeError);
}

TEST_CASE("conv3d matches the loop oracle") {
  Rng rng(3);
  check_conv3d_against_oracle({1, 4, 4, 4}, {2, 1, 3, 3, 3}, {1, 1, 1}, Padding::kValid, rng);
  check_conv3d_against_oracle({1, 4, 4, 4}, {2, 1, 3, 3, 3}, {1, 1, 1}, Padding::kSame, rng);
  check_conv3d_against_oracle({3, 5, 4, 6}, {2, 3, 5, 3, 1}, {1, 1, 1}, Padding::kSame, rng);
  check_conv3d_against_oracle({2, 6, 5, 6}, {4, 2, 3, 2, 3}, {2, 1, 2}, Padding::kValid, rng);
  check_conv3d_against_oracle({2, 6, 5, 6}, {4, 2, 3, 2, 3}, {2, 2, 2}, Padding::kSame, rng);
  check_conv3d_against_oracle({1, 1, 2, 3}, {1, 1, 5, 5, 5}, {1, 1, 1}, Padding::kSame, rng);
  // Sampled sweep; the acceptance suite enumerates every shape.
  for (int trial = 0; trial < 60; ++trial) {
    const Shape xs{rng.uniform_int(1, 3), rng.uniform_int(1, 6), rng.uniform_int(1, 6), rng.uniform_int(1, 6)};
    const Shape ws{rng.uniform_int(1, 3), xs[0], rng.uniform_int(1, xs[1]), rng.uniform_int(1, xs[2]),
                   rng.uniform_int(1, xs[3])};
    const Triple stride{rng.uniform_int(1, 2), rng.uniform_int(1, 2), rng.uniform_int(1, 2)};
    check_conv3d_against_oracle(xs, ws, stride, trial % 2 ? Padding::kSame : Padding::kValid, rng);
  }
}

TEST_CASE("conv2d") {
  Rng rng(4);
  const Tensor x = random_tensor({1, 5, 5}, rng);
  auto [id, c0] = conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}), {1, 1}, Padding::kValid);
  CHECK(id == x);
  auto [nine, c1] = conv2d_forward(Tensor({1, 4, 4}, 2.0f), Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}), {1, 1},
                                   Padding::kValid);
  CHECK(nine.shape() == Shape{1, 2, 2});
  for (float v : nine.values()) CHECK(v == doctest::Approx(18.0));

  const Tensor w = random_tensor({2, 1, 3, 3}, rng), b = random_tensor({2}, rng);
  for (Padding p : {Padding::kValid, Padding::kSame}) {
    auto [y, cache] = conv2d_forward(x, w, b, {1, 1}, p);
    oracle::Geometry g;
    const auto ref = oracle::conv3d(as_double(x), {1, 1, 5, 5}, as_double(w), {2, 1, 1, 3, 3}, as_double(b), {1, 1, 1},
                                    p == Padding::kSame, &g);
    REQUIRE(y.shape() == Shape{2, g.out[1], g.out[2]});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(close(y[i], ref[i]));
    const auto grads = conv2d_backward(Tensor(y.shape(), 1.0f), cache);
    CHECK(grads.input.shape() == x.shape());
    CHECK(grads.weight.shape() == w.shape());
  }
}

TEST_CASE("maxpool") {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 4, 5}, rng);
  auto [id, c0] = maxpool3d_forward(x, {1, 1, 1}, {1, 1, 1});
  CHECK(id == x);

  // Ramp 0..63 on a 4x4x4 grid: each 2x2x2 window peaks at its far corner.
  Tensor ramp({1, 4, 4, 4});
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<float>(i);
  auto [y, cache] = maxpool3d_forward(ramp, {2, 2, 2}, {2, 2, 2});
  CHECK(y == Tensor({1, 2, 2, 2}, {21, 23, 29, 31, 53, 55, 61, 63}));

  // Ties go to the first index in each window.
  auto [cy, cc] = maxpool3d_forward(Tensor({1, 4, 4, 4}, 3.0f), {2, 2, 2}, {2, 2, 2});
  for (float v : cy.values()) CHECK(v == 3.0f);
  const Tensor g = maxpool3d_backward(Tensor(cy.shape(), 1.0f), cc);
  for (Extent d = 0; d < 4; ++d)
    for (Extent h = 0; h < 4; ++h)
      for (Extent w = 0; w < 4; ++w) {
        const bool first = d % 2 == 0 && h % 2 == 0 && w % 2 == 0;
        CHECK(g.at(0, d, h, w) == (first ? 1.0f : 0.0f));
      }

  auto [p, pc] = maxpool3d_forward(x, {3, 3, 3}, {2, 2, 2}, Padding::kSame);
  CHECK(p.shape() == Shape{2, 1, 2, 2});
  CHECK_THROWS_AS(maxpool3d_forward(x, {4, 1, 1}, {1, 1, 1}), ShapeError);

  auto [p2, c2] = maxpool2d_forward(Tensor({1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}), {2, 2},
                                    {2, 2});
  CHECK(p2 == Tensor({1, 2, 2}, {5, 7, 13, 15}));
}

TEST_CASE("relu") {
  auto [y, cache] = relu_forward(Tensor({3}, {-1, 0, 2}));
  CHECK(y == Tensor({3}, {0, 0, 2}));
  CHECK(relu_backward(Tensor({3}, 1.0f), cache) == Tensor({3}, {0, 0, 1}));
  Rng rng(6);
  const Tensor pos = random_tensor({2, 3}, rng, 0.0, 1.0);
  CHECK(relu_forward(pos).first == pos);
}

TEST_CASE("concat_channels") {
  Rng rng(7);
  const Tensor a = random_tensor({2, 3, 3}, rng), b = random_tensor({3, 3, 3}, rng);
  const Tensor single[] = {a};
  CHECK(concat_channels(std::span<const Tensor>(single)).first == a);
  const Tensor both[] = {a, b};
  auto [y, cache] = concat_channels(std::span<const Tensor>(both));
  CHECK(y.shape() == Shape{5, 3, 3});
  const auto parts = concat_channels_backward(y, cache);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0] == a);
  CHECK(parts[1] == b);
  const Tensor bad[] = {a, Tensor({1, 3, 2})};
  CHECK_THROWS_AS(concat_channels(std::span<const Tensor>(bad)), ShapeError);
}

TEST_CASE("global_avg_pool") {
  auto [y, cache] = global_avg_pool(Tensor({512, 2, 2, 2}, 0.25f));
  CHECK(y.shape() == Shape{512});
  for (float v : y.values()) CHECK(v == 0.25f);
  auto [s, sc] = global_avg_pool(Tensor({1, 2, 2, 2}));
  const Tensor g = global_avg_pool_backward(Tensor({1}, 1.0f), sc);
  for (float v : g.values()) CHECK(v == 0.125f);
}

TEST_CASE("dense") {
  auto [id, c0] = dense_forward(Tensor({2}, {3, -4}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}));
  CHECK(id == Tensor({2}, {3, -4}));
  auto [y, cache] = dense_forward(Tensor({2}, {1, 1}), Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}));
  CHECK(y == Tensor({2}, {3, 7}));
  const auto g = dense_backward(Tensor({2}, {1, -1}), cache);
  CHECK(g.bias == Tensor({2}, {1, -1}));
  CHECK(g.weight == Tensor({2, 2}, {1, 1, -1, -1}));
  CHECK(g.input == Tensor({2}, {-2, -2}));
  CHECK_THROWS_AS(dense_forward(Tensor({3}), Tensor({2, 2}), Tensor({2})), ShapeError);
}

TEST_CASE("mse") {
  CHECK(mse_loss(Tensor({2}, {1, 2}), Tensor({2}, {1, 2})).first == 0.0);
  CHECK(mse_loss(Tensor({1}, {2}), Tensor({1}, {5})).first == 9.0);
  auto [loss, cache] = mse_loss(Tensor({1}, {3}), Tensor({1}, {1}));
  CHECK(loss == 4.0);
  CHECK(mse_backward(cache)[0] == 4.0f);
  CHECK_THROWS_AS(mse_loss(Tensor({2}), Tensor({3})), ShapeError);
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const Tensor p = random_tensor({4}, rng), t = random_tensor({4}, rng);
    CHECK(mse_loss(p, t).first > 0.0);
  }
}

TEST_CASE("gradient_check detects a wrong derivative") {
  std::vector<double> point{0.3, -0.7, 1.1};
  auto eval = [&] { return Evaluation{point[0] * point[0] + 3 * point[1] + point[0] * point[2], 0}; };
  const std::vector<double> right{2 * 0.3 + 1.1, 3.0, 0.3};
  const std::vector<double> wrong{2 * 0.3 + 1.1, 3.3, 0.3};
  GradCheckOptions opt;
  CHECK(gradient_check("f", point, right, eval, opt).passed);
  CHECK_FALSE(gradient_check("f", point, wrong, eval, opt).passed);
  CHECK(point == std::vector<double>{0.3, -0.7, 1.1});
  CHECK(relative_error(1.0, 1.0, 1e-6) == 0.0);
  CHECK(relative_error(0.0, 1e-9, 1e-6) == doctest::Approx(1e-3));
}

TEST_CASE("gradient suite passes across ten seeds") {
  GradCheckSuiteOptions opt;
  opt.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto reports = run_gradcheck_suite(opt);
  CHECK(reports.size() >= 11);
  for (const auto& r : reports) {
    INFO(r.name << " max relative error " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.checked > 0);
    const bool linear = r.name == "dense" || r.name == "concat_channels" || r.name == "global_avg_pool";
    if (linear) CHECK(r.max_rel_error < 1e-9);
  }
}

TEST_CASE("gradient suite flags a corrupted conv backward") {
  GradCheckSuiteOptions opt;
  opt.seeds = {1};
  opt.corrupt_conv_backward = true;
  bool conv_failed = false;
  for (const auto& r : run_gradcheck_suite(opt)) {
    if (r.name == "conv3d") conv_failed = !r.passed;
  }
  CHECK(conv_failed);
}
