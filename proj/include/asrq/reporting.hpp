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

#include "asrq/int_runtime.hpp"
#include "asrq/model.hpp"

namespace asrq {

/// Bytes of a model stored with weights at `weight_bits`; biases and
/// BatchNorm parameters stay at 32 bits. Fractional bytes are kept exact so
/// bit-width ratios stay exact.
double model_size_bytes(const ModelGraph& model, int weight_bits);

/// Weight tensors only: the basis on which size ratios are reported.
double weight_only_bytes(const ModelGraph& model, int weight_bits);

/// Bit operations: sum over conv/dense/attention multiply-accumulates of
/// MACs * weight_bits * act_bits for one input of `input_len` frames.
/// Nonlinearity evaluation is excluded from the count.
double bops(const ModelGraph& model, int weight_bits, int act_bits, int64_t input_len);

double mse(const Tensor& a, const Tensor& b);

/// Greedy CTC-style decode of per-frame logits (V, T): argmax per frame,
/// collapse repeats, drop the blank token (index 0).
std::vector<int> greedy_decode(const Tensor& logits);

int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

struct EvalSample {
  Tensor mel;               // (mel_bins, frames) real32
  std::vector<int> labels;  // reference token sequence
};

/// Held-out structured inputs labeled with the float model's own greedy
/// transcription; quantized models are scored against this reference.
std::vector<EvalSample> reference_dataset(const ModelGraph& float_model, int count,
                                          uint64_t seed);

/// Corpus-level token error: sum of edit distances over the sum of reference
/// lengths (empty references count as length 1).
double token_error(const ModelGraph& model, const std::vector<EvalSample>& dataset);
double token_error(const QuantizedModel& qm, const std::vector<EvalSample>& dataset);

struct ReportRow {
  std::string model;
  int bits_w = 32;
  int bits_a = 32;
  double size_bytes = 0;
  double weight_bytes = 0;
  double bops = 0;
  double mse = 0;
  double token_error = 0;
};

struct Report {
  std::string dataset;
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;

  std::string to_json() const;
  /// Fixed schema: model,bits_w,bits_a,size_bytes,bops,mse,token_error
  std::string to_csv() const;
};

/// Merge a baseline report with quantized-model reports; rows concatenate and
/// per-row deltas against the baseline land in the JSON document. Datasets
/// must match.
Report compare(const Report& baseline, const std::vector<Report>& others);

}  // namespace asrq
