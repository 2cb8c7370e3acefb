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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asrq/kernels.hpp"
#include "asrq/tensor.hpp"

namespace asrq {

enum class LayerKind {
  Conv1d,
  BatchNorm,
  Relu,
  Dense,
  ResidualBegin,
  ResidualAdd,
  Attention,
  Sigmoid,
  Swish,
  Softmax,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

/// One node of the layer graph. Parameter tensors live in `params` under
/// fixed keys: conv/dense use "w"/"b"; batchnorm uses "gamma"/"beta"/
/// "running_mean"/"running_var"; attention uses "wq","bq","wk","bk","wv",
/// "bv","wo","bo","w1","b1","w2","b2".
struct Layer {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  ConvSpec spec;                        // conv1d only
  double eps = 1e-5;                    // batchnorm only
  std::map<std::string, Tensor> params;

  const Tensor& param(const std::string& key) const;
  bool has_param(const std::string& key) const { return params.count(key) > 0; }
};

/// Per-BN-layer, per-channel mean and standard deviation pairs.
struct BatchStats {
  struct PerLayer {
    std::string layer_name;
    std::vector<double> mean;
    std::vector<double> stddev;
  };
  std::vector<PerLayer> layers;

  bool same_structure(const BatchStats& o) const;
  int64_t total_channels() const;
};

struct ModelGraph {
  std::vector<Layer> layers;
  int64_t mel_bins = 0;
  int64_t frames = 0;
  std::map<std::string, std::string> metadata;

  const Layer* find(const std::string& name) const;
  bool has_batchnorm() const;
  /// Running statistics of every BN layer as a BatchStats (stddev = sqrt(var)).
  BatchStats running_stats() const;
  void validate() const;
};

/// Scaled-down convolutional family exercising every supported layer kind.
/// Block 0 maps mel_bins->channels; later blocks keep the channel count so
/// residual connections stay shape-compatible.
struct ToyConfig {
  int blocks = 2;
  int64_t channels = 8;
  int64_t kernel = 5;
  int64_t mel_bins = 8;
  int64_t frames = 32;
  int64_t vocab = 6;      // 0 disables the per-frame output head
  bool separable = false; // depthwise + pointwise pair instead of one conv
  bool residual = false;  // identity skip around blocks >= 1
  bool attention = false; // one single-head attention block before the head
};

ModelGraph build_toy(const ToyConfig& config, uint64_t seed);

/// Exponential-moving-average update of every BN layer's running statistics
/// from `data`, processed in order. BN layers normalize with batch statistics
/// during this pass. Returns a new graph.
ModelGraph populate_stats(const ModelGraph& model, const std::vector<Tensor>& data,
                          double momentum);

enum class TapMode { None, BnInputs, All };

struct ForwardResult {
  Tensor output;
  std::map<std::string, Tensor> taps;
};

/// Float forward pass. TapMode::BnInputs records the input of each BN layer
/// under the BN's name; TapMode::All records every quantization point (layer
/// outputs plus attention internals) under the names quant_points() yields.
ForwardResult forward_f(const ModelGraph& model, const Tensor& input,
                        TapMode taps = TapMode::None);

/// One tensor-valued point of the graph that the quantizer must cover.
/// Weightless points (relu outputs, softmax scores, ...) have weight=nullptr.
struct QuantPoint {
  std::string name;
  const Tensor* weight;   // per-tensor weight to quantize, if any
  const Tensor* bias;     // matching bias, if any
  bool fixed_unit_grid;   // sigmoid/softmax outputs on the fixed [0,1] grid
};

/// Quantization points in execution order. Attention layers contribute their
/// internal dense/matmul/softmax points as "<name>.q", "<name>.scores", etc.
std::vector<QuantPoint> quant_points(const ModelGraph& model);

/// Band-limited toy mel data with per-channel offsets; stands in for real
/// training data when populating BN statistics and for held-out eval sets.
Tensor structured_batch(int64_t batch, int64_t mel, int64_t frames, uint64_t seed);
Tensor uniform_batch(int64_t batch, int64_t mel, int64_t frames, double lo, double hi,
                     uint64_t seed);

}  // namespace asrq
