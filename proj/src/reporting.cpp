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

#include "asrq/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "asrq/rng.hpp"

namespace asrq {

namespace {

bool is_weight_key(LayerKind kind, const std::string& key) {
  if (kind == LayerKind::Conv1d || kind == LayerKind::Dense) return key == "w";
  if (kind == LayerKind::Attention) return !key.empty() && key[0] == 'w';
  return false;
}

}  // namespace

double model_size_bytes(const ModelGraph& model, int weight_bits) {
  double bytes = 0;
  for (const auto& l : model.layers)
    for (const auto& [key, t] : l.params) {
      const int bits = is_weight_key(l.kind, key) ? weight_bits : 32;
      bytes += static_cast<double>(t.numel()) * bits / 8.0;
    }
  return bytes;
}

double weight_only_bytes(const ModelGraph& model, int weight_bits) {
  double bytes = 0;
  for (const auto& l : model.layers)
    for (const auto& [key, t] : l.params)
      if (is_weight_key(l.kind, key))
        bytes += static_cast<double>(t.numel()) * weight_bits / 8.0;
  return bytes;
}

double bops(const ModelGraph& model, int weight_bits, int act_bits, int64_t input_len) {
  if (input_len < 1) throw ConfigError("bops: input length must be positive");
  double macs = 0;
  int64_t len = input_len;
  for (const auto& l : model.layers) {
    switch (l.kind) {
      case LayerKind::Conv1d: {
        const int64_t out_len = l.spec.out_len(len);
        macs += static_cast<double>(out_len) * l.spec.out_channels *
                (l.spec.in_channels / l.spec.groups) * l.spec.kernel_size;
        len = out_len;
        break;
      }
      case LayerKind::Dense:
        macs += static_cast<double>(len) * l.param("w").dim(0) * l.param("w").dim(1);
        break;
      case LayerKind::Attention: {
        const double t = static_cast<double>(len);
        const double c = static_cast<double>(l.param("wq").dim(1));
        const double h = static_cast<double>(l.param("w1").dim(0));
        macs += 4.0 * t * c * c;  // q/k/v/out projections
        macs += 2.0 * t * t * c;  // scores and context products
        macs += 2.0 * t * c * h;  // gated MLP
        break;
      }
      default:
        break;  // BN folds away; activations excluded from the MAC count
    }
  }
  return macs * weight_bits * act_bits;
}

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shapes differ");
  if (a.numel() == 0) return 0.0;
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a.scalar_at(i) - b.scalar_at(i);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

std::vector<int> greedy_decode(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("greedy_decode: expected (V, T) logits");
  const int64_t v = logits.dim(0), t = logits.dim(1);
  std::vector<int> out;
  int prev = -1;
  for (int64_t tt = 0; tt < t; ++tt) {
    int best = 0;
    double best_val = logits.scalar_at(tt);
    for (int64_t vv = 1; vv < v; ++vv) {
      const double val = logits.scalar_at(vv * t + tt);
      if (val > best_val) {
        best_val = val;
        best = static_cast<int>(vv);
      }
    }
    if (best != prev && best != 0) out.push_back(best);
    prev = best;
  }
  return out;
}

int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::vector<EvalSample> reference_dataset(const ModelGraph& float_model, int count,
                                          uint64_t seed) {
  if (count < 1) throw ConfigError("reference_dataset: count must be positive");
  std::vector<EvalSample> out;
  for (int i = 0; i < count; ++i) {
    EvalSample s;
    Tensor batch = structured_batch(1, float_model.mel_bins, float_model.frames,
                                    Rng::derive(seed, static_cast<uint64_t>(i)).next_u64());
    s.mel = batch.reshaped({float_model.mel_bins, float_model.frames});
    s.labels = greedy_decode(forward_f(float_model, s.mel).output);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

template <typename DecodeFn>
double token_error_impl(const std::vector<EvalSample>& dataset, DecodeFn decode) {
  if (dataset.empty()) throw ConfigError("token_error: empty dataset");
  int64_t dist = 0, ref_len = 0;
  for (const auto& s : dataset) {
    dist += edit_distance(decode(s.mel), s.labels);
    ref_len += std::max<int64_t>(1, static_cast<int64_t>(s.labels.size()));
  }
  return static_cast<double>(dist) / static_cast<double>(ref_len);
}

}  // namespace

double token_error(const ModelGraph& model, const std::vector<EvalSample>& dataset) {
  return token_error_impl(dataset, [&](const Tensor& mel) {
    return greedy_decode(forward_f(model, mel).output);
  });
}

double token_error(const QuantizedModel& qm, const std::vector<EvalSample>& dataset) {
  return token_error_impl(dataset, [&](const Tensor& mel) {
    return greedy_decode(forward_int(qm, mel).logits);
  });
}

namespace {

nlohmann::json row_to_json(const ReportRow& r) {
  return {{"model", r.model},           {"bits_w", r.bits_w},
          {"bits_a", r.bits_a},         {"size_bytes", r.size_bytes},
          {"weight_bytes", r.weight_bytes}, {"bops", r.bops},
          {"mse", r.mse},               {"token_error", r.token_error}};
}

}  // namespace

std::string Report::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset;
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) rows_j.push_back(row_to_json(r));
  j["rows"] = std::move(rows_j);
  if (!rows.empty()) {
    nlohmann::json deltas = nlohmann::json::array();
    const ReportRow& base = rows.front();
    for (size_t i = 1; i < rows.size(); ++i) {
      const ReportRow& r = rows[i];
      deltas.push_back({{"model", r.model},
                        {"d_mse", r.mse - base.mse},
                        {"d_token_error", r.token_error - base.token_error},
                        {"size_ratio", base.weight_bytes > 0
                                           ? base.weight_bytes / r.weight_bytes
                                           : 0.0},
                        {"bops_ratio", base.bops > 0 ? r.bops / base.bops : 0.0}});
    }
    j["deltas"] = std::move(deltas);
  }
  j["warnings"] = warnings;
  j["notes"] = notes;
  return j.dump(2) + "\n";
}

std::string Report::to_csv() const {
  std::ostringstream os;
  os << "model,bits_w,bits_a,size_bytes,bops,mse,token_error\n";
  for (const auto& r : rows) {
    os << r.model << ',' << r.bits_w << ',' << r.bits_a << ',' << r.size_bytes << ','
       << r.bops << ',' << r.mse << ',' << r.token_error << '\n';
  }
  return os.str();
}

Report compare(const Report& baseline, const std::vector<Report>& others) {
  Report out = baseline;
  for (const auto& o : others) {
    if (o.dataset != baseline.dataset)
      throw ConfigError("compare: dataset '" + o.dataset + "' does not match '" +
                        baseline.dataset + "'");
    out.rows.insert(out.rows.end(), o.rows.begin(), o.rows.end());
    out.warnings.insert(out.warnings.end(), o.warnings.begin(), o.warnings.end());
    out.notes.insert(out.notes.end(), o.notes.begin(), o.notes.end());
  }
  return out;
}

}  // namespace asrq
