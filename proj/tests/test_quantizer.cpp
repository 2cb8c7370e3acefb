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

#include "asrq/model.hpp"
#include "asrq/quantizer.hpp"
#include "test_util.hpp"

using namespace asrq;
using namespace asrq::testing;

TEST_CASE("quantize follows the clipped, scaled, half-even rounding map") {
  QuantParams p{8, 1.0};
  CHECK(p.scale() == doctest::Approx(1.0 / 127.0));

  CHECK(quantize(Tensor::from_f32({1}, {0.f}), p).i32()[0] == 0);
  CHECK(quantize(Tensor::from_f32({1}, {2.f}), p).i32()[0] == 127);
  CHECK(quantize(Tensor::from_f32({1}, {-2.f}), p).i32()[0] == -127);
  // 0.5 / (1/127) = 63.5, a tie: half-to-even picks 64
  CHECK(quantize(Tensor::from_f64({1}, {0.5}), p).i32()[0] == 64);
}

TEST_CASE("round_half_even resolves ties to the even neighbour") {
  CHECK(round_half_even(0.5) == 0.0);
  CHECK(round_half_even(1.5) == 2.0);
  CHECK(round_half_even(2.5) == 2.0);
  CHECK(round_half_even(-0.5) == 0.0);
  CHECK(round_half_even(-1.5) == -2.0);
  CHECK(round_half_even(63.5) == 64.0);
  CHECK(round_half_even(1.4999) == 1.0);
}

TEST_CASE("dequantize is the scale map and rejects off-grid values") {
  QuantParams p{8, 1.0};
  CHECK(dequantize(Tensor::from_i32({1}, {0}), p).f64()[0] == 0.0);
  CHECK(dequantize(Tensor::from_i32({1}, {127}), p).f64()[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(dequantize(Tensor::from_i32({1}, {200}), p), RangeError);
}

TEST_CASE("degenerate clipping range is an error") {
  QuantParams p{8, 0.0};
  CHECK_THROWS_AS(quantize(Tensor::from_f32({1}, {1.f}), p), NumericError);
}

TEST_CASE("roundtrip bound, monotonicity, symmetry and zero exactness") {
  Rng rng(41);
  for (int bits : {4, 6, 8, 16}) {
    const double alpha = rng.uniform(0.5, 4.0);
    QuantParams p{bits, alpha};
    const double s = p.scale();
    double prev_x = -1e30;
    int64_t prev_q = p.grid_min();
    for (int i = 0; i < 20000; ++i) {
      const double x = rng.uniform(-alpha, alpha);
      const int32_t q = quantize(Tensor::from_f64({1}, {x}), p).i32()[0];
      const double back = s * q;
      CHECK(std::abs(x - back) <= s / 2 + 1e-12);
      // monotonicity vs the previous sample
      if (x >= prev_x) CHECK(q >= prev_q);
      if (x <= prev_x) CHECK(q <= prev_q);
      prev_x = x;
      prev_q = q;
      // symmetry away from ties
      const double ratio = std::abs(x) / s;
      if (std::abs(ratio - std::floor(ratio) - 0.5) > 1e-6) {
        const int32_t qn = quantize(Tensor::from_f64({1}, {-x}), p).i32()[0];
        CHECK(qn == -q);
      }
    }
    CHECK(quantize(Tensor::from_f64({1}, {0.0}), p).i32()[0] == 0);
  }
}

TEST_CASE("minmax observer tracks the larger magnitude") {
  Observer o = Observer::minmax();
  o.observe(Tensor::from_f32({2}, {-2.f, 3.f}));
  CHECK(o.alpha() == doctest::Approx(3.0));
  o.observe(Tensor::from_f32({1}, {-5.f}));
  CHECK(o.alpha() == doctest::Approx(5.0));
}

TEST_CASE("percentile(100) equals minmax") {
  Rng rng(42);
  Observer pct = Observer::percentile(100.0);
  Observer mm = Observer::minmax();
  for (int i = 0; i < 3; ++i) {
    Tensor t = random_tensor_f32({100}, rng, -3, 7);
    pct.observe(t);
    mm.observe(t);
  }
  CHECK(pct.alpha() == doctest::Approx(mm.alpha()));
}

TEST_CASE("percentile clips a single outlier") {
  Rng rng(43);
  std::vector<float> vals(1000);
  for (auto& v : vals) v = static_cast<float>(rng.uniform(-1, 1));
  vals[500] = 100.f;
  Observer o = Observer::percentile(99.0);
  o.observe(Tensor::from_f32({1000}, vals));
  CHECK(o.alpha() <= 1.1);
  CHECK(o.alpha() > 0.5);
}

TEST_CASE("histogram percentile agrees with the sort oracle within one bin") {
  Rng rng(44);
  for (double p : {90.0, 99.0, 99.9}) {
    std::vector<double> all;
    Observer o = Observer::percentile(p);
    Tensor t = random_tensor_f64({5000}, rng, -2.5, 2.5);
    for (double v : t.f64()) all.push_back(v);
    o.observe(t);
    const double bin = 2.5 / 2048.0;
    const double oracle = percentile_oracle(all, p);
    CHECK(std::abs(o.alpha() - oracle) <= bin + 1e-12);
  }
}

TEST_CASE("observer merge equals observing the concatenation") {
  Rng rng(45);
  Tensor a = random_tensor_f32({64}, rng, -2, 2);
  Tensor b = random_tensor_f32({64}, rng, -4, 1);
  Observer oa = Observer::minmax();
  Observer ob = Observer::minmax();
  oa.observe(a);
  ob.observe(b);
  oa.merge(ob);
  Observer all = Observer::minmax();
  all.observe(a);
  all.observe(b);
  CHECK(oa.alpha() == doctest::Approx(all.alpha()));
}

TEST_CASE("observer spec parsing") {
  CHECK(ObserverSpec::parse("minmax").kind == Observer::Kind::MinMax);
  ObserverSpec s = ObserverSpec::parse("percentile:99");
  CHECK(s.kind == Observer::Kind::Percentile);
  CHECK(s.pct == doctest::Approx(99.0));
  CHECK_THROWS_AS(ObserverSpec::parse("entropy"), ConfigError);
  CHECK_THROWS_AS(ObserverSpec::parse("percentile:0"), ConfigError);
}

namespace {

Layer make_test_conv(int64_t cin, int64_t cout, int64_t k, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Conv1d;
  l.name = "conv";
  l.spec = ConvSpec{cin, cout, k, 1, (k - 1) / 2, 1, 1};
  l.params["w"] = random_tensor_f32({cout, cin, k}, rng);
  l.params["b"] = random_tensor_f32({cout}, rng);
  return l;
}

Layer make_test_bn(int64_t c, Rng& rng, bool identity) {
  Layer bn;
  bn.kind = LayerKind::BatchNorm;
  bn.name = "bn";
  bn.eps = 1e-5;
  if (identity) {
    bn.params["gamma"] = Tensor::from_f32({c}, std::vector<float>(c, 1.f));
    bn.params["beta"] = Tensor::zeros({c}, DType::Real32);
    bn.params["running_mean"] = Tensor::zeros({c}, DType::Real32);
    bn.params["running_var"] =
        Tensor::from_f32({c}, std::vector<float>(c, static_cast<float>(1 - 1e-5)));
  } else {
    bn.params["gamma"] = random_tensor_f32({c}, rng, 0.5, 2);
    bn.params["beta"] = random_tensor_f32({c}, rng);
    bn.params["running_mean"] = random_tensor_f32({c}, rng);
    bn.params["running_var"] = random_tensor_f32({c}, rng, 0.2, 2.0);
  }
  return bn;
}

}  // namespace

TEST_CASE("identity batchnorm folds to the unchanged convolution") {
  Rng rng(51);
  Layer conv = make_test_conv(3, 4, 3, rng);
  Layer bn = make_test_bn(4, rng, true);
  Layer folded = fold_bn(conv, bn);
  CHECK(max_abs_diff(folded.param("w"), conv.param("w")) < 1e-6);
  CHECK(max_abs_diff(folded.param("b"), conv.param("b")) < 1e-6);
}

TEST_CASE("pure scale fold doubles weights and bias") {
  Rng rng(52);
  Layer conv = make_test_conv(2, 2, 1, rng);
  Layer bn = make_test_bn(2, rng, true);
  bn.params["gamma"] = Tensor::from_f32({2}, {2.f, 2.f});
  Layer folded = fold_bn(conv, bn);
  for (int64_t i = 0; i < conv.param("w").numel(); ++i)
    CHECK(folded.param("w").f32()[i] ==
          doctest::Approx(2.f * conv.param("w").f32()[i]).epsilon(1e-5));
  for (int64_t i = 0; i < 2; ++i)
    CHECK(folded.param("b").f32()[i] ==
          doctest::Approx(2.f * conv.param("b").f32()[i]).epsilon(1e-5));
}

TEST_CASE("folding preserves the float function") {
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    Layer conv = make_test_conv(3, 5, 3, rng);
    Layer bn = make_test_bn(5, rng, false);
    Layer folded = fold_bn(conv, bn);
    Tensor x = random_tensor_f32({3, 12}, rng, -2, 2);
    Tensor via_bn = batchnorm_f(conv1d_f(x, conv.param("w"), conv.param("b"), conv.spec),
                                bn.param("gamma"), bn.param("beta"),
                                bn.param("running_mean"), bn.param("running_var"), bn.eps,
                                BnMode::Eval);
    Tensor direct = conv1d_f(x, folded.param("w"), folded.param("b"), folded.spec);
    for (int64_t i = 0; i < via_bn.numel(); ++i) {
      const double denom = std::max(1.0, std::abs(double(via_bn.f32()[i])));
      CHECK(std::abs(double(via_bn.f32()[i]) - double(direct.f32()[i])) / denom <= 1e-5);
    }
  }
}

TEST_CASE("fold rejects mismatched channels") {
  Rng rng(54);
  Layer conv = make_test_conv(3, 4, 3, rng);
  Layer bn = make_test_bn(5, rng, true);
  CHECK_THROWS_AS(fold_bn(conv, bn), ConfigError);
}

TEST_CASE("fold_model removes every batchnorm and preserves the forward map") {
  ToyConfig cfg;
  cfg.blocks = 2;
  cfg.residual = true;
  ModelGraph g = build_toy(cfg, 55);
  std::vector<Tensor> data{structured_batch(4, cfg.mel_bins, cfg.frames, 56)};
  g = populate_stats(g, data, 1.0);
  ModelGraph folded = fold_model(g);
  CHECK(!folded.has_batchnorm());
  Rng rng(57);
  Tensor x = random_tensor_f32({1, cfg.mel_bins, cfg.frames}, rng);
  Tensor a = forward_f(g, x).output;
  Tensor b = forward_f(folded, x).output;
  CHECK(max_abs_diff(a, b) < 1e-4);
}

TEST_CASE("fold_model requires conv immediately before bn") {
  ModelGraph g;
  g.mel_bins = 2;
  g.frames = 4;
  Rng rng(58);
  g.layers.push_back(make_test_bn(2, rng, true));
  CHECK_THROWS_AS(fold_model(g), ConfigError);
}

TEST_CASE("make_config covers weights, activations and the input boundary") {
  ToyConfig cfg;
  cfg.blocks = 2;
  cfg.attention = true;
  ModelGraph g = build_toy(cfg, 60);
  g = populate_stats(g, {structured_batch(4, cfg.mel_bins, cfg.frames, 61)}, 1.0);
  ModelGraph folded = fold_model(g);
  std::vector<Tensor> calib{structured_batch(4, cfg.mel_bins, cfg.frames, 62),
                            structured_batch(4, cfg.mel_bins, cfg.frames, 63)};
  QuantConfig qc = make_config(folded, calib, {Observer::Kind::MinMax, 100}, 8, 8);
  CHECK(qc.covers(input_boundary_name()));
  for (const auto& p : quant_points(folded)) {
    REQUIRE(qc.covers(p.name));
    const auto& e = qc.at(p.name);
    CHECK(e.act.alpha > 0);
    if (p.weight) {
      REQUIRE(e.weight.has_value());
      CHECK(e.weight->alpha > 0);
    }
  }
  CHECK(qc.warnings.empty());

  // weight alpha is the exact per-tensor absolute maximum
  const auto pts = quant_points(folded);
  for (const auto& p : pts) {
    if (!p.weight) continue;
    double m = 0;
    for (int64_t i = 0; i < p.weight->numel(); ++i)
      m = std::max(m, std::abs(p.weight->scalar_at(i)));
    CHECK(qc.at(p.name).weight->alpha == doctest::Approx(m));
  }
}

TEST_CASE("make_config weight alpha for a known tensor") {
  ModelGraph g;
  g.mel_bins = 2;
  g.frames = 4;
  Layer conv;
  conv.kind = LayerKind::Conv1d;
  conv.name = "c";
  conv.spec = ConvSpec{2, 1, 1, 1, 0, 1, 1};
  conv.params["w"] = Tensor::from_f32({1, 2, 1}, {0.5f, -0.25f});
  conv.params["b"] = Tensor::zeros({1}, DType::Real32);
  g.layers.push_back(conv);
  Tensor calib = Tensor::from_f32({1, 2, 4}, {1, -1, 0.5f, 0, 0.25f, 1, -0.5f, 0});
  QuantConfig qc = make_config(g, {calib}, {Observer::Kind::MinMax, 100}, 8, 8);
  CHECK(qc.at("c").weight->alpha == doctest::Approx(0.5));
  CHECK(qc.at(input_boundary_name()).act.alpha == doctest::Approx(1.0));
}

TEST_CASE("all-zero calibration widens the range with a warning") {
  ModelGraph g;
  g.mel_bins = 2;
  g.frames = 4;
  Layer conv;
  conv.kind = LayerKind::Conv1d;
  conv.name = "c";
  conv.spec = ConvSpec{2, 1, 1, 1, 0, 1, 1};
  conv.params["w"] = Tensor::from_f32({1, 2, 1}, {0.5f, -0.25f});
  conv.params["b"] = Tensor::zeros({1}, DType::Real32);
  g.layers.push_back(conv);
  Tensor zeros = Tensor::zeros({1, 2, 4}, DType::Real32);
  QuantConfig qc = make_config(g, {zeros}, {Observer::Kind::MinMax, 100}, 8, 8);
  CHECK(qc.at("c").act.alpha == doctest::Approx(1e-5));
  CHECK(!qc.warnings.empty());
}

TEST_CASE("two batches calibrate identically to their concatenation") {
  ToyConfig cfg;
  cfg.blocks = 1;
  ModelGraph g = build_toy(cfg, 70);
  g = populate_stats(g, {structured_batch(2, cfg.mel_bins, cfg.frames, 71)}, 1.0);
  ModelGraph folded = fold_model(g);
  Tensor b1 = structured_batch(2, cfg.mel_bins, cfg.frames, 72);
  Tensor b2 = structured_batch(2, cfg.mel_bins, cfg.frames, 73);
  Tensor both = Tensor::zeros({4, cfg.mel_bins, cfg.frames}, DType::Real32);
  std::copy(b1.f32().begin(), b1.f32().end(), both.f32().begin());
  std::copy(b2.f32().begin(), b2.f32().end(), both.f32().begin() + b1.numel());
  QuantConfig split = make_config(folded, {b1, b2}, {Observer::Kind::MinMax, 100}, 8, 8);
  QuantConfig merged = make_config(folded, {both}, {Observer::Kind::MinMax, 100}, 8, 8);
  for (const auto& [name, e] : split.entries) {
    CHECK(merged.at(name).act.alpha == doctest::Approx(e.act.alpha));
    if (e.weight) CHECK(merged.at(name).weight->alpha == doctest::Approx(e.weight->alpha));
  }
}

TEST_CASE("make_config rejects unfolded models and empty data") {
  ToyConfig cfg;
  ModelGraph g = build_toy(cfg, 80);
  Tensor batch = structured_batch(1, cfg.mel_bins, cfg.frames, 81);
  CHECK_THROWS_AS(make_config(g, {batch}, {Observer::Kind::MinMax, 100}, 8, 8),
                  ConfigError);
  ModelGraph folded = fold_model(populate_stats(g, {batch}, 1.0));
  CHECK_THROWS_AS(make_config(folded, {}, {Observer::Kind::MinMax, 100}, 8, 8),
                  ConfigError);
}

TEST_CASE("quant config JSON round-trips") {
  ToyConfig cfg;
  cfg.attention = true;
  ModelGraph g = build_toy(cfg, 90);
  g = populate_stats(g, {structured_batch(2, cfg.mel_bins, cfg.frames, 91)}, 1.0);
  ModelGraph folded = fold_model(g);
  QuantConfig qc = make_config(folded, {structured_batch(2, cfg.mel_bins, cfg.frames, 92)},
                               {Observer::Kind::Percentile, 99}, 6, 8);
  QuantConfig back = QuantConfig::from_json(qc.to_json());
  CHECK(back.weight_bits == 6);
  CHECK(back.act_bits == 8);
  CHECK(back.observer == qc.observer);
  REQUIRE(back.entries.size() == qc.entries.size());
  for (const auto& [name, e] : qc.entries) {
    CHECK(back.at(name).act == e.act);
    CHECK(back.at(name).fixed_unit_grid == e.fixed_unit_grid);
    if (e.weight) CHECK(*back.at(name).weight == *e.weight);
  }
  CHECK(back.to_json() == qc.to_json());
}
