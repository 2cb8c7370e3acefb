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

#include "asrq/model.hpp"
#include "asrq/tensor.hpp"

namespace asrq {

/// Uniform symmetric per-tensor quantizer parameters: values in [-alpha, alpha]
/// map onto the integer grid [-(2^(b-1)-1), 2^(b-1)-1] with zero-point 0.
struct QuantParams {
  int bits = 8;
  double alpha = 1.0;

  int64_t grid_max() const { return (int64_t{1} << (bits - 1)) - 1; }
  int64_t grid_min() const { return -(int64_t{1} << (bits - 1)); }
  double scale() const { return alpha / static_cast<double>(grid_max()); }

  void validate() const {
    if (bits < 4 || bits > 16) throw ConfigError("quant bits must lie in [4, 16]");
    if (alpha < 0) throw ConfigError("clipping bound must be non-negative");
  }
  bool operator==(const QuantParams&) const = default;
};

double round_half_even(double v);

/// Clip to [-alpha, alpha], divide by scale, round half-to-even, clamp.
Tensor quantize(const Tensor& x, const QuantParams& p);

/// Reverse map: scale times grid index. Input values must lie in the grid.
Tensor dequantize(const Tensor& q, const QuantParams& p);

/// dequantize(quantize(x)): projection of x onto the representable grid.
Tensor fake_quantize(const Tensor& x, const QuantParams& p);

/// Running range estimator for a stream of tensors. MinMax keeps exact
/// extrema; Percentile adds a 2048-bin histogram of absolute values whose
/// span doubles as larger magnitudes arrive.
class Observer {
 public:
  enum class Kind { MinMax, Percentile };

  static Observer minmax() { return Observer(Kind::MinMax, 100.0); }
  static Observer percentile(double p);

  /// Extend only the tracked extrema (first pass of two-pass calibration).
  void observe_range(const Tensor& x);
  /// Full update: extrema plus histogram fill.
  void observe(const Tensor& x);
  void merge(const Observer& other);

  double alpha() const;
  Kind kind() const { return kind_; }
  double pct() const { return pct_; }
  std::string describe() const;

 private:
  Observer(Kind k, double p) : kind_(k), pct_(p) {}
  void grow_span(double needed);

  static constexpr int kBins = 2048;
  Kind kind_;
  double pct_;
  double min_ = 0, max_ = 0;
  bool seen_ = false;
  double span_ = 0;
  uint64_t total_ = 0;
  std::vector<uint64_t> hist_;
};

struct ObserverSpec {
  Observer::Kind kind = Observer::Kind::MinMax;
  double pct = 100.0;

  Observer make() const {
    return kind == Observer::Kind::MinMax ? Observer::minmax() : Observer::percentile(pct);
  }
  std::string describe() const;
  static ObserverSpec parse(const std::string& s);  // "minmax" | "percentile:99"
};

/// Absorb a BatchNorm into the convolution immediately preceding it. The
/// returned convolution computes conv followed by eval-mode batchnorm.
Layer fold_bn(const Layer& conv, const Layer& bn);

/// Fold every conv+BN pair of the graph; errors if a BN does not directly
/// follow a convolution.
ModelGraph fold_model(const ModelGraph& model);

/// Name of the model input boundary entry in a QuantConfig.
inline const char* input_boundary_name() { return "__input__"; }

/// Complete per-tensor quantization settings for one model.
struct QuantConfig {
  struct Entry {
    std::optional<QuantParams> weight;
    QuantParams act;
    bool fixed_unit_grid = false;  // sigmoid/softmax output on the fixed [0,1] grid
  };

  std::map<std::string, Entry> entries;  // quant point name -> entry
  int weight_bits = 8;
  int act_bits = 8;
  std::string observer;
  std::vector<std::string> warnings;

  const Entry& at(const std::string& name) const;
  bool covers(const std::string& name) const { return entries.count(name) > 0; }

  std::string to_json() const;
  static QuantConfig from_json(const std::string& text);
  void save(const std::string& path) const;
  static QuantConfig load(const std::string& path);
};

/// Calibrate a BN-folded model: exact min/max for weights, observer-driven
/// ranges for every activation point plus the input boundary. Degenerate
/// ranges are widened to 1e-5 with a warning.
QuantConfig make_config(const ModelGraph& folded_model, const std::vector<Tensor>& calib_data,
                        const ObserverSpec& observer, int weight_bits, int act_bits);

}  // namespace asrq
