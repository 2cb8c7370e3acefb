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

#include "asrq/zeroshot.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "asrq/rng.hpp"

namespace asrq {

namespace {
constexpr double kSigmaFloor = 1e-4;
}

void GenConfig::validate() const {
  if (batch_size < 1 || num_batches < 1 || iters < 1)
    throw ConfigError("gen config: batch_size, num_batches and iters must be positive");
  if (!(lr > 0.0 && lr < 1.0)) throw ConfigError("gen config: lr must lie in (0, 1)");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
    throw ConfigError("gen config: betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("gen config: adam_eps must be positive");
  if (!(init_hi > init_lo)) throw ConfigError("gen config: empty init range");
  if (threads < 0) throw ConfigError("gen config: negative thread count");
}

double kl_loss(const BatchStats& stats, const BatchStats& running) {
  if (!stats.same_structure(running))
    throw StatsError("kl_loss: statistic structures do not match");
  double total = 0;
  for (size_t i = 0; i < stats.layers.size(); ++i) {
    const auto& s = stats.layers[i];
    const auto& r = running.layers[i];
    for (size_t c = 0; c < s.mean.size(); ++c) {
      const double sigma = std::max(s.stddev[c], kSigmaFloor);
      const double mu = s.mean[c];
      const double sigma_hat = r.stddev[c];
      const double mu_hat = r.mean[c];
      const double d = mu_hat - mu;
      total += std::log(sigma / sigma_hat) -
               0.5 * (1.0 - (sigma_hat * sigma_hat + d * d) / (sigma * sigma));
    }
  }
  return total;
}

double KlStatsLoss::value(const BatchStats& s) const { return kl_loss(s, running_); }

BatchStats KlStatsLoss::gradient(const BatchStats& s) const {
  if (!s.same_structure(running_))
    throw StatsError("kl_loss gradient: statistic structures do not match");
  BatchStats g = s;
  for (size_t i = 0; i < s.layers.size(); ++i) {
    const auto& r = running_.layers[i];
    for (size_t c = 0; c < s.layers[i].mean.size(); ++c) {
      const double raw_sigma = s.layers[i].stddev[c];
      const double sigma = std::max(raw_sigma, kSigmaFloor);
      const double mu = s.layers[i].mean[c];
      const double d = r.mean[c] - mu;
      // d/dmu [ (mu_hat - mu)^2 / (2 sigma^2) ] = (mu - mu_hat) / sigma^2
      g.layers[i].mean[c] = (mu - r.mean[c]) / (sigma * sigma);
      if (raw_sigma < kSigmaFloor) {
        g.layers[i].stddev[c] = 0.0;  // flat inside the floored region
      } else {
        const double num = r.stddev[c] * r.stddev[c] + d * d;
        g.layers[i].stddev[c] = 1.0 / sigma - num / (sigma * sigma * sigma);
      }
    }
  }
  return g;
}

namespace {

SynthBatch run_one_batch(const ModelGraph& model, const GenConfig& cfg, int index) {
  Rng rng = Rng::derive(cfg.seed, static_cast<uint64_t>(index));
  const int64_t mel = model.mel_bins, frames = model.frames;
  Tensor x = Tensor::zeros({cfg.batch_size, mel, frames}, DType::Real64);
  for (auto& v : x.f64()) v = rng.uniform(cfg.init_lo, cfg.init_hi);

  const KlStatsLoss loss(model.running_stats());
  const int64_t n = x.numel();
  std::vector<double> m(n, 0.0), v2(n, 0.0);
  SynthBatch out;
  out.loss_history.reserve(cfg.iters + 1);

  Tensor best = x;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int step = 0; step < cfg.iters; ++step) {
    GradResult gr = grad_input(model, x, loss);
    out.loss_history.push_back(gr.loss);
    if (gr.loss < best_loss) {
      best_loss = gr.loss;
      best = x;
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step + 1);
    auto& xv = x.f64();
    const auto& gv = gr.grad.f64();
    for (int64_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gv[i];
      v2[i] = cfg.beta2 * v2[i] + (1.0 - cfg.beta2) * gv[i] * gv[i];
      xv[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v2[i] / bc2) + cfg.adam_eps);
    }
  }
  double final_loss = kl_loss(tape_stats(record_tape(model, x)), model.running_stats());
  if (!std::isfinite(final_loss))
    throw NumericError("synthetic batch " + std::to_string(index) +
                       ": non-finite final loss");
  if (final_loss > out.loss_history.front() && best_loss <= out.loss_history.front()) {
    x = best;  // fall back to the best iterate seen
    final_loss = best_loss;
  }
  out.loss_history.push_back(final_loss);
  out.data = x.to_f32();
  return out;
}

}  // namespace

std::vector<SynthBatch> generate(const ModelGraph& model, const GenConfig& cfg) {
  cfg.validate();
  if (!model.has_batchnorm())
    throw StatsError("generate: model has no BatchNorm layers to match");

  std::vector<std::optional<SynthBatch>> results(cfg.num_batches);
  std::vector<std::string> failures(cfg.num_batches);
  unsigned want = cfg.threads == 0 ? std::thread::hardware_concurrency()
                                   : static_cast<unsigned>(cfg.threads);
  want = std::max(1u, std::min(want, static_cast<unsigned>(cfg.num_batches)));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < cfg.num_batches; i = next.fetch_add(1)) {
      try {
        results[i] = run_one_batch(model, cfg, i);
      } catch (const Error& e) {
        failures[i] = e.what();
      }
    }
  };
  if (want == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < want; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<SynthBatch> out;
  for (int i = 0; i < cfg.num_batches; ++i) {
    if (results[i]) {
      out.push_back(std::move(*results[i]));
    } else {
      std::cerr << "generate: dropped batch " << i << ": " << failures[i] << "\n";
    }
  }
  if (out.empty()) throw NumericError("generate: every synthetic batch failed");
  return out;
}

std::vector<SynthBatch> random_baseline(const ModelGraph& model, int64_t batch_size,
                                        int num_batches, double lo, double hi,
                                        uint64_t seed) {
  if (batch_size < 1 || num_batches < 1)
    throw ConfigError("random_baseline: batch counts must be positive");
  if (!(hi > lo)) throw ConfigError("random_baseline: empty range");
  std::vector<SynthBatch> out;
  const BatchStats running = model.running_stats();
  for (int i = 0; i < num_batches; ++i) {
    Rng rng = Rng::derive(seed, static_cast<uint64_t>(i));
    Tensor x = Tensor::zeros({batch_size, model.mel_bins, model.frames}, DType::Real32);
    for (auto& v : x.f32()) v = static_cast<float>(rng.uniform(lo, hi));
    SynthBatch b;
    b.data = x;
    if (model.has_batchnorm())
      b.loss_history.push_back(kl_loss(tape_stats(record_tape(model, x)), running));
    out.push_back(std::move(b));
  }
  return out;
}

std::string ZeroShotReport::to_json() const {
  nlohmann::json j;
  j["generation"] = {{"batch_size", config.batch_size},
                     {"num_batches", config.num_batches},
                     {"iters", config.iters},
                     {"lr", config.lr},
                     {"beta1", config.beta1},
                     {"beta2", config.beta2},
                     {"init", {config.init_lo, config.init_hi}},
                     {"seed", config.seed}};
  j["initial_losses"] = initial_losses;
  j["final_losses"] = final_losses;
  j["weight_bits"] = weight_bits;
  j["act_bits"] = act_bits;
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

std::pair<QuantizedModel, ZeroShotReport> zero_shot_quantize(const ModelGraph& model,
                                                             const GenConfig& cfg,
                                                             int weight_bits,
                                                             int act_bits) {
  ZeroShotReport report;
  report.config = cfg;
  report.weight_bits = weight_bits;
  report.act_bits = act_bits;

  std::vector<SynthBatch> batches;
  try {
    batches = generate(model, cfg);
  } catch (const Error& e) {
    throw NumericError(std::string("zero_shot_quantize[generation]: ") + e.what());
  }
  std::vector<Tensor> calib;
  for (const auto& b : batches) {
    report.initial_losses.push_back(b.loss_history.front());
    report.final_losses.push_back(b.loss_history.back());
    calib.push_back(b.data);
  }

  ModelGraph folded;
  try {
    folded = fold_model(model);
  } catch (const Error& e) {
    throw ConfigError(std::string("zero_shot_quantize[folding]: ") + e.what());
  }

  QuantConfig qcfg;
  try {
    qcfg = make_config(folded, calib, ObserverSpec{Observer::Kind::MinMax, 100.0},
                       weight_bits, act_bits);
  } catch (const Error& e) {
    throw ConfigError(std::string("zero_shot_quantize[calibration]: ") + e.what());
  }
  report.warnings = qcfg.warnings;

  try {
    QuantizedModel qm = compile(folded, qcfg);
    return {std::move(qm), std::move(report)};
  } catch (const Error& e) {
    throw CompileError(std::string("zero_shot_quantize[compilation]: ") + e.what());
  }
}

std::string sidecar_json(const GenConfig& cfg, const std::vector<SynthBatch>& batches) {
  nlohmann::json j;
  j["config"] = {{"batch_size", cfg.batch_size}, {"num_batches", cfg.num_batches},
                 {"iters", cfg.iters},           {"lr", cfg.lr},
                 {"beta1", cfg.beta1},           {"beta2", cfg.beta2},
                 {"adam_eps", cfg.adam_eps},     {"init", {cfg.init_lo, cfg.init_hi}},
                 {"seed", cfg.seed}};
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& b : batches)
    losses.push_back({{"initial", b.loss_history.front()}, {"final", b.loss_history.back()}});
  j["losses"] = std::move(losses);
  return j.dump(2) + "\n";
}

}  // namespace asrq
