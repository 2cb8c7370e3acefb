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

#include "asrq/zeroshot.hpp"
#include "test_util.hpp"

using namespace asrq;
using namespace asrq::testing;

namespace {

BatchStats single_channel(double mean, double stddev) {
  BatchStats s;
  BatchStats::PerLayer l;
  l.layer_name = "bn";
  l.mean = {mean};
  l.stddev = {stddev};
  s.layers.push_back(l);
  return s;
}

ModelGraph small_populated(uint64_t seed) {
  ToyConfig cfg;
  cfg.blocks = 2;
  cfg.channels = 4;
  cfg.mel_bins = 4;
  cfg.frames = 16;
  cfg.vocab = 0;
  ModelGraph g = build_toy(cfg, seed);
  std::vector<Tensor> data;
  for (int i = 0; i < 4; ++i)
    data.push_back(structured_batch(4, cfg.mel_bins, cfg.frames, seed * 5 + i));
  return populate_stats(g, data, 0.4);
}

}  // namespace

TEST_CASE("matched statistics give exactly zero loss") {
  BatchStats a = single_channel(0.37, 1.21);
  CHECK(kl_loss(a, a) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("unit-variance shifted mean gives one half") {
  // running (mu_hat=0, sigma_hat=1) vs batch (mu=1, sigma=1)
  CHECK(kl_loss(single_channel(1.0, 1.0), single_channel(0.0, 1.0)) ==
        doctest::Approx(0.5));
}

TEST_CASE("loss equals the textbook Gaussian divergence") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double mu_hat = rng.uniform(-2, 2), sigma_hat = rng.uniform(0.2, 2);
    const double mu = rng.uniform(-2, 2), sigma = rng.uniform(0.2, 2);
    const double got = kl_loss(single_channel(mu, sigma), single_channel(mu_hat, sigma_hat));
    const double want = gaussian_kl_oracle(mu_hat, sigma_hat, mu, sigma);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("loss is minimized at the running statistics along each axis") {
  const BatchStats running = single_channel(0.3, 0.8);
  const double at_match = kl_loss(single_channel(0.3, 0.8), running);
  for (double d : {-0.5, -0.1, 0.1, 0.5}) {
    CHECK(kl_loss(single_channel(0.3 + d, 0.8), running) > at_match);
    if (0.8 + d > 0.05) CHECK(kl_loss(single_channel(0.3, 0.8 + d), running) > at_match);
  }
}

TEST_CASE("structure mismatch is rejected") {
  BatchStats two = single_channel(0, 1);
  two.layers.push_back(two.layers[0]);
  CHECK_THROWS_AS(kl_loss(single_channel(0, 1), two), StatsError);
}

TEST_CASE("analytic gradient of the loss matches finite differences") {
  const BatchStats running = single_channel(0.2, 1.3);
  KlStatsLoss loss(running);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const double mu = rng.uniform(-1.5, 1.5), sigma = rng.uniform(0.15, 2.0);
    BatchStats s = single_channel(mu, sigma);
    BatchStats g = loss.gradient(s);
    const double h = 1e-6;
    const double dmu = (loss.value(single_channel(mu + h, sigma)) -
                        loss.value(single_channel(mu - h, sigma))) /
                       (2 * h);
    const double dsig = (loss.value(single_channel(mu, sigma + h)) -
                         loss.value(single_channel(mu, sigma - h))) /
                        (2 * h);
    CHECK(g.layers[0].mean[0] == doctest::Approx(dmu).epsilon(1e-5));
    CHECK(g.layers[0].stddev[0] == doctest::Approx(dsig).epsilon(1e-5));
  }
}

TEST_CASE("gen config validation") {
  GenConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = GenConfig{};
  bad.num_batches = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = GenConfig{};
  bad.init_lo = 0.5;
  bad.init_hi = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("defaults match the shipped calibration recipe") {
  GenConfig cfg;
  CHECK(cfg.batch_size == 8);
  CHECK(cfg.num_batches == 20);
  CHECK(cfg.iters == 250);
  CHECK(cfg.lr == doctest::Approx(0.05));
  CHECK(cfg.beta1 == doctest::Approx(0.9));
  CHECK(cfg.beta2 == doctest::Approx(0.999));
  CHECK(cfg.init_lo == doctest::Approx(-0.3));
  CHECK(cfg.init_hi == doctest::Approx(0.3));
}

TEST_CASE("a model whose stats came from the init distribution is a near fixed point") {
  ToyConfig tcfg;
  tcfg.blocks = 1;
  tcfg.channels = 4;
  tcfg.mel_bins = 4;
  tcfg.frames = 16;
  tcfg.vocab = 0;
  ModelGraph g = build_toy(tcfg, 11);
  // a single large batch with momentum 1 makes the running statistics exactly
  // the statistics of init-distribution data
  g = populate_stats(g, {uniform_batch(64, 4, 16, -0.3, 0.3, 100)}, 1.0);

  GenConfig cfg;
  cfg.num_batches = 2;
  cfg.iters = 30;
  cfg.seed = 12;
  auto batches = generate(g, cfg);
  REQUIRE(batches.size() == 2);
  for (const auto& b : batches) {
    CHECK(b.loss_history.front() < 0.5);  // already near the statistics
    CHECK(b.loss_history.back() <= b.loss_history.front());
  }
}

TEST_CASE("generation reduces the loss and never ends above the start") {
  ModelGraph g = small_populated(21);
  GenConfig cfg;
  cfg.num_batches = 3;
  cfg.iters = 60;
  cfg.seed = 22;
  auto batches = generate(g, cfg);
  REQUIRE(batches.size() == 3);
  for (const auto& b : batches) {
    REQUIRE(b.loss_history.size() == size_t(cfg.iters + 1));
    CHECK(b.loss_history.back() <= b.loss_history.front());
    CHECK(b.loss_history.back() < 0.5 * b.loss_history.front());
    CHECK(b.data.dim(0) == cfg.batch_size);
  }
}

TEST_CASE("generation is deterministic and thread-count independent") {
  ModelGraph g = small_populated(31);
  GenConfig cfg;
  cfg.num_batches = 3;
  cfg.iters = 25;
  cfg.seed = 33;
  auto a = generate(g, cfg);
  auto b = generate(g, cfg);
  cfg.threads = 3;
  auto c = generate(g, cfg);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == c.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].data.same_values(b[i].data));
    CHECK(a[i].data.same_values(c[i].data));
    CHECK(a[i].loss_history == c[i].loss_history);
  }
}

TEST_CASE("random baseline samples the requested range") {
  ModelGraph g = small_populated(41);
  auto batches = random_baseline(g, 8, 3, -3.0, 3.0, 7);
  REQUIRE(batches.size() == 3);
  double mean = 0;
  int64_t n = 0;
  for (const auto& b : batches) {
    REQUIRE(b.loss_history.size() == 1);
    for (float v : b.data.f32()) {
      CHECK(v >= -3.0f);
      CHECK(v <= 3.0f);
      mean += v;
      ++n;
    }
  }
  auto again = random_baseline(g, 8, 3, -3.0, 3.0, 7);
  for (size_t i = 0; i < batches.size(); ++i)
    CHECK(batches[i].data.same_values(again[i].data));
}

TEST_CASE("uniform sample mean concentrates near zero") {
  ModelGraph g = small_populated(42);
  // 8*4*16 = 512 values per batch; 196 batches ~ 1e5 samples
  auto batches = random_baseline(g, 8, 196, -3.0, 3.0, 9);
  double mean = 0;
  int64_t n = 0;
  for (const auto& b : batches)
    for (float v : b.data.f32()) {
      mean += v;
      ++n;
    }
  mean /= double(n);
  CHECK(n >= 100000);
  // std of the mean is sqrt(3)/sqrt(n) ~ 0.0055; 3 sigma < 0.03
  CHECK(std::abs(mean) <= 0.03);
}

TEST_CASE("zero-shot pipeline produces a runnable integer model and a report") {
  ModelGraph g = small_populated(51);
  GenConfig cfg;
  cfg.num_batches = 2;
  cfg.iters = 30;
  cfg.seed = 52;
  auto [qm, report] = zero_shot_quantize(g, cfg, 8, 8);
  CHECK(qm.weight_bits == 8);
  CHECK(report.initial_losses.size() == 2);
  CHECK(report.final_losses.size() == 2);
  for (size_t i = 0; i < 2; ++i)
    CHECK(report.final_losses[i] <= report.initial_losses[i]);
  Tensor x = structured_batch(1, g.mel_bins, g.frames, 53);
  CHECK(forward_int(qm, x).logits.numel() > 0);

  auto [qm6, report6] = zero_shot_quantize(g, cfg, 6, 8);
  CHECK(qm6.weight_bits == 6);
  CHECK(forward_int(qm6, x).logits.numel() > 0);
}

TEST_CASE("report JSON echoes the generation recipe") {
  GenConfig cfg;
  ZeroShotReport r;
  r.config = cfg;
  r.initial_losses = {1.0};
  r.final_losses = {0.01};
  const std::string j = r.to_json();
  CHECK(j.find("\"num_batches\": 20") != std::string::npos);
  CHECK(j.find("\"iters\": 250") != std::string::npos);
  CHECK(j.find("\"batch_size\": 8") != std::string::npos);
}

TEST_CASE("calibration ranges from synthetic data are finite and positive") {
  ModelGraph g = small_populated(61);
  GenConfig cfg;
  cfg.num_batches = 2;
  cfg.iters = 20;
  cfg.seed = 62;
  auto batches = generate(g, cfg);
  std::vector<Tensor> calib;
  for (auto& b : batches) calib.push_back(b.data);
  ModelGraph folded = fold_model(g);
  QuantConfig qc = make_config(folded, calib, {Observer::Kind::MinMax, 100}, 8, 8);
  for (const auto& [name, e] : qc.entries) {
    CHECK(std::isfinite(e.act.alpha));
    CHECK(e.act.alpha > 0);
  }
}

TEST_CASE("zero-variance running statistics abort generation") {
  // sigma_hat = 0 makes the loss infinite for every batch
  ToyConfig cfg;
  cfg.blocks = 1;
  cfg.channels = 4;
  cfg.mel_bins = 4;
  cfg.frames = 16;
  cfg.vocab = 0;
  ModelGraph g = build_toy(cfg, 71);
  for (auto& l : g.layers)
    if (l.kind == LayerKind::BatchNorm)
      l.params["running_var"] = Tensor::zeros({4}, DType::Real32);
  GenConfig gen;
  gen.num_batches = 2;
  gen.iters = 5;
  CHECK_THROWS_AS(generate(g, gen), NumericError);
}

TEST_CASE("sidecar JSON carries config and endpoint losses") {
  GenConfig cfg;
  cfg.num_batches = 1;
  SynthBatch b;
  b.data = Tensor::zeros({1, 2, 3}, DType::Real32);
  b.loss_history = {2.0, 0.5};
  const std::string j = sidecar_json(cfg, {b});
  CHECK(j.find("\"initial\": 2.0") != std::string::npos);
  CHECK(j.find("\"final\": 0.5") != std::string::npos);
  CHECK(j.find("\"lr\": 0.05") != std::string::npos);
}
