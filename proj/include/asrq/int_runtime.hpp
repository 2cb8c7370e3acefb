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

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "asrq/model.hpp"
#include "asrq/quantizer.hpp"
#include "asrq/tensor.hpp"

namespace asrq {

/// Fixed-point multiplier: apply(v) = round_half_away(v * mult / 2^shift),
/// computed in 64-bit integer arithmetic. mult is normalized into
/// [2^30, 2^31) so mult * 2^-shift approximates the requested real factor
/// to within 2^-30 relative error.
struct DyadicScale {
  int32_t mult = 1 << 30;
  int shift = 30;

  static DyadicScale from_real(double factor);
  double real() const { return std::ldexp(static_cast<double>(mult), -shift); }
  int64_t apply(int64_t v) const;
};

/// Compile-time constants for the integer exponential: the input grid is
/// re-scaled by 2^pre_shift so ln2 spans a few thousand grid steps, the
/// argument is split as x = -z*ln2 + p with p in (-ln2, 0], and
/// 0.3585*(p + 1.353)^2 + 0.344 is evaluated on that grid. Outputs carry
/// scale out_scale = 0.3585 * fine_scale^2.
struct IExpParams {
  int pre_shift = 0;
  int64_t q_ln2 = 1;
  int64_t q_bias = 0;
  int64_t q_const = 0;
  int64_t one = 0;          // round(1/out_scale); sigmoid denominator offset
  double fine_scale = 0;    // re-scaled input grid step (sim mirror only)
  double out_scale = 0;

  static IExpParams make(double input_scale);
  /// Integer path. q must be <= 0 on the input grid.
  int64_t exp_int(int64_t q) const;
  /// Same decomposition evaluated on real values (forward_sim mirror).
  double exp_sim(double x) const;
  /// round(255 * e / (one + e)): sigmoid of a non-positive argument on the
  /// fixed 1/255 grid.
  int64_t sigmoid_neg_int(int64_t q) const;
  double sigmoid_neg_sim(double x) const;
  /// q * sigmoid(q) in units of the fine swish grid (input scale / 512),
  /// computed from the full-precision exponential so the negative tail keeps
  /// its relative accuracy.
  int64_t swish_units_int(int64_t q) const;
  double swish_units_sim(double x) const;
};

/// Fixed output grid of integer sigmoid/softmax: values 0..255, step 1/255.
inline constexpr int64_t kUnitGridMax = 255;
inline constexpr double kUnitGridScale = 1.0 / 255.0;
/// Swish products land on input_scale / kSwishGridDiv before requantization.
inline constexpr int64_t kSwishGridDiv = 512;

// ---------------------------------------------------------------------------
// Compiled model
// ---------------------------------------------------------------------------

/// One integer dense/conv site: int8 weights, int32 bias at scale
/// w_scale * in_scale, one dyadic requantization onto the output grid.
struct QDense {
  std::string name;
  ConvSpec spec;          // conv sites only
  Tensor weight;          // int8 (int32 when weight bits exceed 8)
  Tensor bias;            // int32
  DyadicScale requant;
  int64_t out_qmax = 127;
  double in_scale = 1, w_scale = 1, out_scale = 1;
};

struct QConvItem { QDense d; };
struct QDenseItem { QDense d; };
struct QReluItem { std::string name; };
struct QResBeginItem {};
struct QResAddItem {
  std::string name;
  DyadicScale main, skip;
  int64_t out_qmax = 127;
  double out_scale = 1;
};
struct QSigmoidItem { std::string name; IExpParams exp; double in_scale = 1; };
struct QSoftmaxItem { std::string name; IExpParams exp; double in_scale = 1; };
struct QSwishItem {
  std::string name;
  IExpParams exp;
  DyadicScale requant;   // (in_scale/255) -> out grid
  int64_t out_qmax = 127;
  double in_scale = 1, out_scale = 1;
};
struct QAttentionItem {
  std::string name;
  QDense q, k, v, out, h1, h2;
  DyadicScale scores_requant;   // S_q*S_k/sqrt(C) -> scores grid
  int64_t scores_qmax = 127;
  double scores_scale = 1;
  IExpParams softmax_exp;       // on the scores grid
  DyadicScale ctx_requant;      // S_attn*S_v -> ctx grid
  int64_t ctx_qmax = 127;
  double ctx_scale = 1;
  IExpParams swish_exp;         // on the h1 grid
  DyadicScale swish_requant;
  int64_t swish_qmax = 127;
  double swish_scale = 1;
};

using QItem = std::variant<QConvItem, QDenseItem, QReluItem, QResBeginItem, QResAddItem,
                           QSigmoidItem, QSoftmaxItem, QSwishItem, QAttentionItem>;

/// Integer-only model: int weights and biases, per-site dyadic constants.
/// Real numbers appear only as boundary/reporting metadata, never in the
/// integer execution path.
struct QuantizedModel {
  std::vector<QItem> items;
  QuantParams input_params;
  double output_scale = 1;   // grid step of the final logits
  int weight_bits = 8;
  int act_bits = 8;
  int64_t mel_bins = 0;
  int64_t frames = 0;
  std::map<std::string, std::string> metadata;
};

/// Lower a BN-folded float model onto the integer runtime using a complete
/// QuantConfig. Verifies INT32 accumulator headroom for every site.
QuantizedModel compile(const ModelGraph& folded_model, const QuantConfig& config);

void save_quantized(const QuantizedModel& qm, const std::string& path);
QuantizedModel load_quantized(const std::string& path);

// ---------------------------------------------------------------------------
// Integer kernels (unit-test surface; the executor is built from these)
// ---------------------------------------------------------------------------

Tensor conv1d_int(const Tensor& q_x, const QDense& site);
/// C = A * B^T + bias, requantized: a is (M,K), b_t is (N,K).
Tensor matmul_int(const Tensor& a, const Tensor& b_t, const Tensor& bias,
                  const DyadicScale& requant, int64_t out_qmax);
Tensor relu_int(const Tensor& q);
Tensor add_int(const Tensor& q_main, const DyadicScale& main, const Tensor& q_skip,
               const DyadicScale& skip, int64_t out_qmax);

/// Integer exponential of non-positive values. Returns the result tensor
/// (int32) and its scale.
std::pair<Tensor, double> iexp(const Tensor& q, double scale);
/// Row softmax over the last axis onto the fixed [0,1] grid (values 0..255).
std::pair<Tensor, double> isoftmax(const Tensor& q, double scale);
std::pair<Tensor, double> isigmoid(const Tensor& q, double scale);
/// x * sigmoid(x) on the fine product grid scale/255; compiled models
/// requantize this product onto the calibrated activation grid.
std::pair<Tensor, double> iswish(const Tensor& q, double scale);

// ---------------------------------------------------------------------------
// Executors
// ---------------------------------------------------------------------------

/// Per-point integer tensors (grid indices) recorded during execution.
using RuntimeTrace = std::map<std::string, Tensor>;

struct IntForwardResult {
  Tensor logits;        // real32, dequantized once at the boundary
  RuntimeTrace trace;
};

/// Integer-only forward: the input is quantized once at the boundary, all
/// layer arithmetic runs under an IntegerPurityGuard, and the logits are
/// dequantized once at the end.
IntForwardResult forward_int(const QuantizedModel& qm, const Tensor& input,
                             bool want_trace = false);

struct SimForwardResult {
  Tensor logits;        // real32
  RuntimeTrace trace;   // grid indices at the same points as forward_int
};

/// Simulated-quantization reference: identical dataflow and quantization
/// points, computed in real64 with fake quantization at every requant site.
SimForwardResult forward_sim(const QuantizedModel& qm, const Tensor& input,
                             bool want_trace = false);

/// Convenience wrapper matching the calibration pipeline inputs.
Tensor forward_sim(const ModelGraph& folded_model, const QuantConfig& config,
                   const Tensor& input);

}  // namespace asrq
