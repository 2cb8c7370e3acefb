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

#include "asrq/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "asrq/io.hpp"

namespace asrq {

double round_half_even(double v) {
  const double fl = std::floor(v);
  const double frac = v - fl;
  if (frac > 0.5) return fl + 1.0;
  if (frac < 0.5) return fl;
  // exact tie: pick the even neighbour
  return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

Tensor quantize(const Tensor& x, const QuantParams& p) {
  p.validate();
  if (!x.is_real()) throw ShapeError("quantize: input must be real");
  if (p.alpha == 0.0)
    throw NumericError("quantize: degenerate clipping range (alpha = 0)");
  const double s = p.scale();
  const double lo = static_cast<double>(p.grid_min());
  const double hi = static_cast<double>(p.grid_max());
  Tensor out = Tensor::zeros(x.shape(), DType::Int32);
  auto& q = out.i32();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = std::clamp(x.scalar_at(i), -p.alpha, p.alpha);
    q[i] = static_cast<int32_t>(std::clamp(round_half_even(v / s), lo, hi));
  }
  return out;
}

Tensor dequantize(const Tensor& q, const QuantParams& p) {
  p.validate();
  if (!q.is_int()) throw ShapeError("dequantize: input must be integer");
  const double s = p.scale();
  Tensor out = Tensor::zeros(q.shape(), DType::Real64);
  auto& x = out.f64();
  for (int64_t i = 0; i < q.numel(); ++i) {
    const double v = q.scalar_at(i);
    if (v < static_cast<double>(p.grid_min()) || v > static_cast<double>(p.grid_max()))
      throw RangeError("dequantize: value " + std::to_string(static_cast<int64_t>(v)) +
                       " outside grid for " + std::to_string(p.bits) + " bits");
    x[i] = s * v;
  }
  return out;
}

Tensor fake_quantize(const Tensor& x, const QuantParams& p) {
  return dequantize(quantize(x, p), p);
}

// ---------------------------------------------------------------------------
// Observers
// ---------------------------------------------------------------------------

Observer Observer::percentile(double p) {
  if (!(p > 0.0 && p <= 100.0))
    throw ConfigError("percentile observer: p must lie in (0, 100]");
  Observer o(Kind::Percentile, p);
  o.hist_.assign(kBins, 0);
  return o;
}

void Observer::observe_range(const Tensor& x) {
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.scalar_at(i);
    if (!seen_) {
      min_ = max_ = v;
      seen_ = true;
    } else {
      min_ = std::min(min_, v);
      max_ = std::max(max_, v);
    }
  }
}

void Observer::grow_span(double needed) {
  if (needed <= span_) return;
  if (span_ == 0 || total_ == 0) {
    span_ = needed;
    return;
  }
  // double the span, merging bin pairs, until the new magnitude fits
  while (span_ < needed) {
    for (int i = 0; i < kBins / 2; ++i) hist_[i] = hist_[2 * i] + hist_[2 * i + 1];
    std::fill(hist_.begin() + kBins / 2, hist_.end(), 0);
    span_ *= 2;
  }
}

void Observer::observe(const Tensor& x) {
  observe_range(x);
  if (kind_ != Kind::Percentile || x.numel() == 0) return;
  double amax = 0;
  for (int64_t i = 0; i < x.numel(); ++i)
    amax = std::max(amax, std::abs(x.scalar_at(i)));
  grow_span(std::max(amax, std::max(std::abs(min_), std::abs(max_))));
  if (span_ == 0) {  // all zeros so far: count them in bin 0
    total_ += static_cast<uint64_t>(x.numel());
    hist_[0] += static_cast<uint64_t>(x.numel());
    return;
  }
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double a = std::abs(x.scalar_at(i));
    int idx = static_cast<int>(a / span_ * kBins);
    idx = std::clamp(idx, 0, kBins - 1);
    ++hist_[idx];
    ++total_;
  }
}

void Observer::merge(const Observer& other) {
  if (kind_ != other.kind_ || pct_ != other.pct_)
    throw ConfigError("cannot merge observers of different kinds");
  if (other.seen_) {
    if (!seen_) {
      min_ = other.min_;
      max_ = other.max_;
      seen_ = true;
    } else {
      min_ = std::min(min_, other.min_);
      max_ = std::max(max_, other.max_);
    }
  }
  if (kind_ == Kind::Percentile && other.total_ > 0) {
    Observer tmp = other;
    const double common = std::max(span_, other.span_);
    grow_span(common);
    tmp.grow_span(common);
    if (span_ == 0) {
      span_ = tmp.span_;
      hist_ = tmp.hist_;
      total_ = tmp.total_;
    } else {
      for (int i = 0; i < kBins; ++i) hist_[i] += tmp.hist_[i];
      total_ += tmp.total_;
    }
  }
}

double Observer::alpha() const {
  if (!seen_) return 0.0;
  const double absmax = std::max(std::abs(min_), std::abs(max_));
  if (kind_ == Kind::MinMax || pct_ == 100.0 || total_ == 0) return absmax;
  const double target = pct_ / 100.0 * static_cast<double>(total_);
  uint64_t cum = 0;
  for (int i = 0; i < kBins; ++i) {
    cum += hist_[i];
    if (static_cast<double>(cum) >= target)
      return std::min(absmax, span_ * (i + 1) / kBins);
  }
  return absmax;
}

std::string Observer::describe() const {
  if (kind_ == Kind::MinMax) return "minmax";
  return "percentile:" + std::to_string(pct_);
}

std::string ObserverSpec::describe() const {
  if (kind == Observer::Kind::MinMax) return "minmax";
  std::string s = std::to_string(pct);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return "percentile:" + s;
}

ObserverSpec ObserverSpec::parse(const std::string& s) {
  if (s == "minmax") return {Observer::Kind::MinMax, 100.0};
  const std::string prefix = "percentile:";
  if (s.rfind(prefix, 0) == 0) {
    const double p = std::stod(s.substr(prefix.size()));
    if (!(p > 0.0 && p <= 100.0)) throw ConfigError("percentile out of range: " + s);
    return {Observer::Kind::Percentile, p};
  }
  throw ConfigError("unknown observer kind: " + s);
}

// ---------------------------------------------------------------------------
// BatchNorm folding
// ---------------------------------------------------------------------------

Layer fold_bn(const Layer& conv, const Layer& bn) {
  if (conv.kind != LayerKind::Conv1d || bn.kind != LayerKind::BatchNorm)
    throw ConfigError("fold_bn: expects a conv layer followed by a batchnorm layer");
  const Tensor& gamma = bn.param("gamma");
  const Tensor& beta = bn.param("beta");
  const Tensor& rmean = bn.param("running_mean");
  const Tensor& rvar = bn.param("running_var");
  const int64_t c = conv.spec.out_channels;
  if (gamma.numel() != c)
    throw ConfigError("fold_bn: batchnorm '" + bn.name + "' has " +
                      std::to_string(gamma.numel()) + " channels, conv '" + conv.name +
                      "' produces " + std::to_string(c));

  Layer folded = conv;
  auto& w = folded.params["w"].f32();
  auto& b = folded.params["b"].f32();
  const int64_t per_out = conv.param("w").numel() / c;
  for (int64_t o = 0; o < c; ++o) {
    const double g = gamma.scalar_at(o) / std::sqrt(rvar.scalar_at(o) + bn.eps);
    for (int64_t i = 0; i < per_out; ++i)
      w[o * per_out + i] = static_cast<float>(w[o * per_out + i] * g);
    b[o] = static_cast<float>(beta.scalar_at(o) + (b[o] - rmean.scalar_at(o)) * g);
  }
  return folded;
}

ModelGraph fold_model(const ModelGraph& model) {
  ModelGraph out;
  out.mel_bins = model.mel_bins;
  out.frames = model.frames;
  out.metadata = model.metadata;
  for (const auto& l : model.layers) {
    if (l.kind == LayerKind::BatchNorm) {
      if (out.layers.empty() || out.layers.back().kind != LayerKind::Conv1d)
        throw ConfigError("fold_model: batchnorm '" + l.name +
                          "' does not directly follow a convolution");
      out.layers.back() = fold_bn(out.layers.back(), l);
    } else {
      out.layers.push_back(l);
    }
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// QuantConfig
// ---------------------------------------------------------------------------

const QuantConfig::Entry& QuantConfig::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end())
    throw ConfigError("quant config has no entry for '" + name + "'");
  return it->second;
}

std::string QuantConfig::to_json() const {
  nlohmann::json j;
  for (const auto& [name, e] : entries) {
    nlohmann::json je;
    if (e.weight) je["w"] = {{"bits", e.weight->bits}, {"alpha", e.weight->alpha}};
    je["a"] = {{"bits", e.act.bits}, {"alpha", e.act.alpha}};
    if (e.fixed_unit_grid) je["fixed_unit_grid"] = true;
    j[name] = std::move(je);
  }
  j["meta"] = {{"observer", observer},
               {"warnings", warnings},
               {"weight_bits", weight_bits},
               {"act_bits", act_bits}};
  return j.dump(2) + "\n";
}

QuantConfig QuantConfig::from_json(const std::string& text) {
  QuantConfig cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "meta") {
        cfg.observer = it.value().value("observer", std::string("minmax"));
        cfg.warnings = it.value().value("warnings", std::vector<std::string>{});
        cfg.weight_bits = it.value().value("weight_bits", 8);
        cfg.act_bits = it.value().value("act_bits", 8);
        continue;
      }
      Entry e;
      const auto& je = it.value();
      if (je.contains("w"))
        e.weight = QuantParams{je["w"].at("bits").get<int>(), je["w"].at("alpha").get<double>()};
      e.act = QuantParams{je.at("a").at("bits").get<int>(), je.at("a").at("alpha").get<double>()};
      e.fixed_unit_grid = je.value("fixed_unit_grid", false);
      cfg.entries[it.key()] = std::move(e);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("bad quant config JSON: ") + ex.what());
  }
  return cfg;
}

void QuantConfig::save(const std::string& path) const { write_text_file(path, to_json()); }

QuantConfig QuantConfig::load(const std::string& path) {
  return from_json(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

namespace {

double exact_absmax(const Tensor& t) {
  double m = 0;
  for (int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t.scalar_at(i)));
  return m;
}

constexpr double kWidenedAlpha = 1e-5;

}  // namespace

QuantConfig make_config(const ModelGraph& folded_model, const std::vector<Tensor>& calib_data,
                        const ObserverSpec& observer, int weight_bits, int act_bits) {
  if (folded_model.has_batchnorm())
    throw ConfigError("make_config: model must be BN-folded first");
  if (calib_data.empty()) throw ConfigError("make_config: empty calibration data");
  QuantParams{weight_bits, 1.0}.validate();
  QuantParams{act_bits, 1.0}.validate();

  QuantConfig cfg;
  cfg.weight_bits = weight_bits;
  cfg.act_bits = act_bits;
  cfg.observer = observer.describe();

  const auto points = quant_points(folded_model);
  std::map<std::string, Observer> obs;
  obs.emplace(input_boundary_name(), observer.make());
  for (const auto& p : points) obs.emplace(p.name, observer.make());

  // Two passes: extrema first so percentile histograms span the true max.
  const bool two_pass = observer.kind == Observer::Kind::Percentile;
  for (int pass = two_pass ? 0 : 1; pass < 2; ++pass) {
    for (const auto& batch : calib_data) {
      auto taps = forward_f(folded_model, batch, TapMode::All).taps;
      taps[input_boundary_name()] = batch;
      for (auto& [name, o] : obs) {
        auto it = taps.find(name);
        if (it == taps.end())
          throw ConfigError("calibration tap missing for point '" + name + "'");
        if (pass == 0)
          o.observe_range(it->second);
        else
          o.observe(it->second);
      }
    }
    if (two_pass && pass == 0)
      continue;
  }

  auto act_params = [&](const std::string& name) {
    double a = obs.at(name).alpha();
    if (a < 1e-12) {
      a = kWidenedAlpha;
      cfg.warnings.push_back("degenerate activation range at '" + name +
                             "' widened to 1e-5");
    }
    return QuantParams{act_bits, a};
  };

  QuantConfig::Entry input_entry;
  input_entry.act = act_params(input_boundary_name());
  cfg.entries[input_boundary_name()] = input_entry;

  for (const auto& p : points) {
    QuantConfig::Entry e;
    if (p.weight) {
      double a = exact_absmax(*p.weight);
      if (a < 1e-12) {
        a = kWidenedAlpha;
        cfg.warnings.push_back("degenerate weight range at '" + p.name +
                               "' widened to 1e-5");
      }
      e.weight = QuantParams{weight_bits, a};
    }
    if (p.fixed_unit_grid) {
      // sigmoid/softmax outputs live on the fixed [0,1] grid at runtime
      e.act = QuantParams{8, 1.0};
      e.fixed_unit_grid = true;
    } else {
      e.act = act_params(p.name);
    }
    cfg.entries[p.name] = std::move(e);
  }
  return cfg;
}

}  // namespace asrq
