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

#pragma once

#include <string>
#include <vector>

#include "asrq/autodiff.hpp"
#include "asrq/int_runtime.hpp"
#include "asrq/model.hpp"
#include "asrq/quantizer.hpp"

namespace asrq {

/// Knobs of the synthetic-data generator. Defaults follow the calibration
/// recipe the toolkit ships with: batches of 8, 20 batches, 250 Adam steps,
/// learning rate 0.05, init Uniform[-0.3, 0.3].
struct GenConfig {
  int64_t batch_size = 8;
  int num_batches = 20;
  int iters = 250;
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double init_lo = -0.3;
  double init_hi = 0.3;
  uint64_t seed = 0;
  int threads = 1;  // 0 = one per hardware core

  void validate() const;
};

/// One learnable batch of synthetic mel spectrograms plus its loss trace.
/// loss_history[0] is the loss at initialization; the last entry is the loss
/// of the returned data.
struct SynthBatch {
  Tensor data;  // real32 (batch, mel, frames)
  std::vector<double> loss_history;
};

/// Statistic-matching loss: sum over BN layers and channels of
///   log(sigma/sigma_hat) - 1/2 * (1 - (sigma_hat^2 + (mu_hat - mu)^2) / sigma^2)
/// where (mu_hat, sigma_hat) are the stored running statistics and
/// (mu, sigma) the batch statistics. sigma is floored at 1e-4.
double kl_loss(const BatchStats& stats, const BatchStats& running);

/// kl_loss plus its analytic gradient, for grad_input.
class KlStatsLoss : public StatsLoss {
 public:
  explicit KlStatsLoss(BatchStats running) : running_(std::move(running)) {}
  double value(const BatchStats& s) const override;
  BatchStats gradient(const BatchStats& s) const override;

 private:
  BatchStats running_;
};

/// Optimize num_batches independently-seeded batches against the model's
/// running statistics with Adam. Batches that hit non-finite losses are
/// dropped with a diagnostic on stderr; all batches failing is an error.
std::vector<SynthBatch> generate(const ModelGraph& model, const GenConfig& cfg);

/// Unoptimized uniform baseline in [lo, hi]; loss_history holds the single
/// evaluated statistic-matching loss per batch.
std::vector<SynthBatch> random_baseline(const ModelGraph& model, int64_t batch_size,
                                        int num_batches, double lo, double hi,
                                        uint64_t seed);

struct ZeroShotReport {
  GenConfig config;
  std::vector<double> initial_losses;
  std::vector<double> final_losses;
  int weight_bits = 8;
  int act_bits = 8;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

/// Full pipeline: generate -> fold BN -> min/max calibration on the synthetic
/// batches -> integer compile. Errors carry the failing stage's name.
std::pair<QuantizedModel, ZeroShotReport> zero_shot_quantize(const ModelGraph& model,
                                                             const GenConfig& cfg,
                                                             int weight_bits,
                                                             int act_bits);

/// Sidecar JSON written next to .amel files: generator config + final losses.
std::string sidecar_json(const GenConfig& cfg, const std::vector<SynthBatch>& batches);

}  // namespace asrq
