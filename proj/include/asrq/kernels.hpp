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

#include <vector>

#include "asrq/tensor.hpp"

namespace asrq {

/// Per-channel batch statistics: mean and biased (population) variance over
/// every non-channel axis.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;
};

enum class BnMode { Eval, Collect };

/// 1-D cross-correlation. input (C,T) or (B,C,T); weight (C_out, C_in/g, K);
/// bias (C_out) or empty. Accumulates in real64 regardless of dtype.
Tensor conv1d_f(const Tensor& input, const Tensor& weight, const Tensor& bias,
                const ConvSpec& spec);

/// Eval mode normalizes with running statistics. Collect mode normalizes with
/// the batch statistics of `input` and writes them to `collected`.
Tensor batchnorm_f(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   const Tensor& running_mean, const Tensor& running_var, double eps,
                   BnMode mode, ChannelStats* collected = nullptr);

/// Per-frame linear map: input (C,T) or (B,C,T), weight (O,C), bias (O).
Tensor dense_f(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Plain 2-D matrix product (M,K)x(K,N).
Tensor matmul_f(const Tensor& a, const Tensor& b);

Tensor relu_f(const Tensor& x);
Tensor add_f(const Tensor& a, const Tensor& b);
Tensor sigmoid_f(const Tensor& x);
Tensor swish_f(const Tensor& x);

/// Softmax over the last axis with max subtraction.
Tensor softmax_f(const Tensor& x);

/// Batch statistics of a (C,T) or (B,C,T) tensor per channel.
ChannelStats channel_stats(const Tensor& x);

}  // namespace asrq
