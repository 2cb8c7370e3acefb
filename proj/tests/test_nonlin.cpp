// Copyright 2026 The asrq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asrq/int_runtime.hpp"
#include "test_util.hpp"

using namespace asrq;
using namespace asrq::testing;

namespace {

double poly_exp(double p) { return 0.3585 * (p + 1.353) * (p + 1.353) + 0.344; }

}  // namespace

TEST_CASE("the quadratic tracks exp at the anchors") {
  CHECK(std::abs(poly_exp(0.0) - 1.0) <= 1e-3);
  const double ln2 = std::log(2.0);
  // -ln2 decomposes into one shift of the p=0 value, and also sits at the
  // far end of the fitted interval; both routes land on one half
  CHECK(std::abs(poly_exp(0.0) / 2.0 - 0.5) / 0.5 <= 0.01);
  CHECK(std::abs(poly_exp(-ln2) - 0.5) / 0.5 <= 0.01);
}

TEST_CASE("iexp positive input is a contract violation") {
  CHECK_THROWS_AS(iexp(Tensor::from_i32({1}, {1}), 0.1), NumericError);
}

TEST_CASE("iexp single shift lands near one half") {
  // grid where -ln2 is exactly representable: S = ln2/64, q = -64
  const double s = std::log(2.0) / 64.0;
  auto [e, es] = iexp(Tensor::from_i32({1}, {-64}), s);
  const double val = es * e.i32()[0];
  CHECK(std::abs(val - 0.5) / 0.5 <= 0.01);
  auto [e0, es0] = iexp(Tensor::from_i32({1}, {0}), s);
  CHECK(std::abs(es0 * e0.i32()[0] - 1.0) <= 2e-3);
}

TEST_CASE("iexp relative error stays under 2 percent on [-10, 0]") {
  const double alpha = 10.0;
  const QuantParams grid{8, alpha};
  const double s = grid.scale();
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const double x = -10.0 * (i + 0.5) / 10000.0;
    const int64_t q = std::llround(x / s);
    auto [e, es] = iexp(Tensor::from_i32({1}, {static_cast<int32_t>(q)}), s);
    const double got = es * e.i32()[0];
    const double want = std::exp(s * q);
    worst = std::max(worst, std::abs(got - want) / want);
  }
  CHECK(worst <= 0.02);
}

TEST_CASE("iexp matches its simulated mirror exactly on grid points") {
  const double s = 8.0 / 127.0;
  const IExpParams p = IExpParams::make(s);
  CHECK(p.pre_shift > 0);
  for (int q = -127; q <= 0; ++q) {
    const double simv = p.exp_sim(s * q);
    const int64_t intv = p.exp_int(q);
    CHECK(simv == doctest::Approx(double(intv)).epsilon(1e-12));
  }
}

TEST_CASE("ultra-fine input grids take the rounded downshift path") {
  const double s = 1e-6;
  const IExpParams p = IExpParams::make(s);
  CHECK(p.pre_shift < 0);
  Rng rng(17);
  double worst = 0;
  for (int i = 0; i < 2000; ++i) {
    const int64_t q = -static_cast<int64_t>(rng.next_below(5000000));
    const int64_t intv = p.exp_int(q);
    const double simv = p.exp_sim(s * static_cast<double>(q));
    CHECK(simv == doctest::Approx(double(intv)).epsilon(1e-12));
    const double want = std::exp(s * static_cast<double>(q));
    worst = std::max(worst, std::abs(p.out_scale * double(intv) - want) / want);
  }
  CHECK(worst <= 0.02);
}

TEST_CASE("isigmoid hits the symmetry point and the tails") {
  const double s = 8.0 / 127.0;
  auto [zero, zs] = isigmoid(Tensor::from_i32({1}, {0}), s);
  CHECK(zs == doctest::Approx(1.0 / 255.0));
  CHECK(std::abs(zero.i32()[0] * zs - 0.5) <= 1.0 / 255.0);

  const int32_t q10 = static_cast<int32_t>(std::llround(-8.0 / s));
  auto [tail, ts] = isigmoid(Tensor::from_i32({1}, {q10}), s);
  CHECK(std::abs(tail.i32()[0] * ts - 1.0 / (1.0 + std::exp(8.0))) <= 1.0 / 255.0);
}

TEST_CASE("isigmoid L-inf error on [-8, 8] stays under 2/255") {
  const QuantParams grid{8, 8.0};
  const double s = grid.scale();
  double worst = 0;
  for (int q = -127; q <= 127; ++q) {
    auto [o, os] = isigmoid(Tensor::from_i32({1}, {q}), s);
    const double got = o.i32()[0] * os;
    const double want = 1.0 / (1.0 + std::exp(-s * q));
    worst = std::max(worst, std::abs(got - want));
  }
  CHECK(worst <= 2.0 / 255.0);
}

TEST_CASE("isoftmax of a uniform row is uniform") {
  const double s = 4.0 / 127.0;
  Tensor row = Tensor::from_i32({1, 4}, {17, 17, 17, 17});
  auto [o, os] = isoftmax(row, s);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(o.i32()[i] * os - 0.25) <= 2.0 / 255.0);
}

TEST_CASE("isoftmax concentrates on a dominant logit") {
  const double s = 0.4;
  Tensor row = Tensor::from_i32({1, 3}, {20, 0, 0});  // values 8, 0, 0
  auto [o, os] = isoftmax(row, s);
  double mx = 0;
  for (int i = 0; i < 3; ++i) mx = std::max(mx, o.i32()[i] * os);
  CHECK(mx >= 0.99 - 2.0 / 255.0);
}

TEST_CASE("isoftmax random rows stay within 2/255 of the real softmax") {
  Rng rng(7);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t n = 2 + static_cast<int64_t>(rng.next_below(63));
    const double alpha = rng.uniform(2.0, 12.0);
    const QuantParams grid{8, alpha};
    const double s = grid.scale();
    Tensor q = Tensor::zeros({1, n}, DType::Int32);
    std::vector<double> vals(n);
    for (int64_t i = 0; i < n; ++i) {
      q.i32()[i] = static_cast<int32_t>(int64_t(rng.next_below(255)) - 127);
      vals[i] = s * q.i32()[i];
    }
    auto [o, os] = isoftmax(q, s);
    // real softmax of the represented values
    double mx = vals[0];
    for (double v : vals) mx = std::max(mx, v);
    double sum = 0;
    std::vector<double> ref(n);
    for (int64_t i = 0; i < n; ++i) {
      ref[i] = std::exp(vals[i] - mx);
      sum += ref[i];
    }
    for (int64_t i = 0; i < n; ++i)
      worst = std::max(worst, std::abs(o.i32()[i] * os - ref[i] / sum));
  }
  CHECK(worst <= 2.0 / 255.0);
}

TEST_CASE("isoftmax short rows dequantize to a near-unit sum") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = 2 + static_cast<int64_t>(rng.next_below(3));  // rows up to 4
    const double s = 6.0 / 127.0;
    Tensor q = Tensor::zeros({1, n}, DType::Int32);
    for (int64_t i = 0; i < n; ++i)
      q.i32()[i] = static_cast<int32_t>(int64_t(rng.next_below(255)) - 127);
    auto [o, os] = isoftmax(q, s);
    double sum = 0;
    for (int64_t i = 0; i < n; ++i) sum += o.i32()[i] * os;
    CHECK(sum >= 1.0 - 8.0 / 255.0);
    CHECK(sum <= 1.0 + 8.0 / 255.0);
  }
}

TEST_CASE("iswish tracks x*sigmoid(x) away from zero") {
  const QuantParams in_grid{8, 8.0};
  const double s = in_grid.scale();
  double worst_rel = 0, worst_abs = 0;
  for (int q = -127; q <= 127; ++q) {
    auto [o, os] = iswish(Tensor::from_i32({1}, {q}), s);
    CHECK(os == doctest::Approx(s / 512.0));
    const double x = s * q;
    const double want = x / (1.0 + std::exp(-x));
    const double got = o.i32()[0] * os;
    worst_abs = std::max(worst_abs, std::abs(got - want));
    if (std::abs(x) >= 0.5)
      worst_rel = std::max(worst_rel, std::abs(got - want) / std::abs(want));
  }
  CHECK(worst_rel <= 0.03);
  CHECK(worst_abs <= 0.05);  // sigmoid grid rounding scaled by |x|
}

TEST_CASE("unit-grid outputs stay inside [0, 255]") {
  Rng rng(9);
  const double s = 5.0 / 127.0;
  Tensor q = Tensor::zeros({64}, DType::Int32);
  for (auto& v : q.i32()) v = static_cast<int32_t>(int64_t(rng.next_below(255)) - 127);
  auto [sig, ss] = isigmoid(q, s);
  (void)ss;
  for (int32_t v : sig.i32()) {
    CHECK(v >= 0);
    CHECK(v <= 255);
  }
}
