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

#include "asrq/model.hpp"
#include "asrq/tensor.hpp"

namespace asrq {

/// Scalar loss over per-BN batch statistics, with its analytic gradient with
/// respect to each channel's mean and standard deviation.
class StatsLoss {
 public:
  virtual ~StatsLoss() = default;
  virtual double value(const BatchStats& s) const = 0;
  /// Returns d(loss)/d(mean) in `mean` and d(loss)/d(stddev) in `stddev`,
  /// mirroring the structure of `s`.
  virtual BatchStats gradient(const BatchStats& s) const = 0;
};

/// Ordered record of the differentiable forward pass. Built once per
/// grad_input call and consumed once, in reverse, by the backward sweep.
/// Everything runs in real64.
struct Tape {
  enum class Op { Input, Conv, BnEval, Relu, Dense, Add, BatchMean, BatchStd };

  struct Node {
    Op op;
    int a = -1;             // primary input node
    int b = -1;             // second operand (Add) or mean node (BatchStd)
    const Layer* layer = nullptr;
    std::string label;
    Tensor value;           // forward value, real64
  };

  std::vector<Node> nodes;
  // (BN layer name, mean node id, std node id) in graph order
  std::vector<std::tuple<std::string, int, int>> stat_nodes;
};

struct GradResult {
  double loss = 0;
  Tensor grad;        // real64, same shape as the input
  BatchStats stats;   // batch statistics observed at each BN input
};

/// Loss and d(loss)/d(input) for a stats-dependent loss. BN layers normalize
/// with running statistics; batch mean/std taps at each BN input feed the
/// loss and gradients flow both through the taps and the network path.
/// Per-channel stddev is sqrt(biased variance + 1e-8). ReLU backward uses
/// subgradient 0 at exactly 0. Layers past the last BN never execute.
GradResult grad_input(const ModelGraph& model, const Tensor& input, const StatsLoss& loss);

/// The forward/stats part of grad_input without the backward sweep.
Tape record_tape(const ModelGraph& model, const Tensor& input);
BatchStats tape_stats(const Tape& tape);

}  // namespace asrq
