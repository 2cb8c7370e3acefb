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

#include "asrq/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "asrq/rng.hpp"

namespace asrq {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Relu: return "relu";
    case LayerKind::Dense: return "dense";
    case LayerKind::ResidualBegin: return "residual_begin";
    case LayerKind::ResidualAdd: return "residual_add";
    case LayerKind::Attention: return "attention";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Swish: return "swish";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
  static const std::map<std::string, LayerKind> m = {
      {"conv1d", LayerKind::Conv1d},       {"batchnorm", LayerKind::BatchNorm},
      {"relu", LayerKind::Relu},           {"dense", LayerKind::Dense},
      {"residual_begin", LayerKind::ResidualBegin},
      {"residual_add", LayerKind::ResidualAdd},
      {"attention", LayerKind::Attention}, {"sigmoid", LayerKind::Sigmoid},
      {"swish", LayerKind::Swish},         {"softmax", LayerKind::Softmax}};
  auto it = m.find(s);
  if (it == m.end()) throw FormatError("unknown layer kind: " + s);
  return it->second;
}

const Tensor& Layer::param(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end())
    throw ShapeError("layer '" + name + "' has no parameter '" + key + "'");
  return it->second;
}

bool BatchStats::same_structure(const BatchStats& o) const {
  if (layers.size() != o.layers.size()) return false;
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].layer_name != o.layers[i].layer_name ||
        layers[i].mean.size() != o.layers[i].mean.size())
      return false;
  return true;
}

int64_t BatchStats::total_channels() const {
  int64_t n = 0;
  for (const auto& l : layers) n += static_cast<int64_t>(l.mean.size());
  return n;
}

const Layer* ModelGraph::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

bool ModelGraph::has_batchnorm() const {
  return std::any_of(layers.begin(), layers.end(),
                     [](const Layer& l) { return l.kind == LayerKind::BatchNorm; });
}

BatchStats ModelGraph::running_stats() const {
  BatchStats s;
  for (const auto& l : layers) {
    if (l.kind != LayerKind::BatchNorm) continue;
    BatchStats::PerLayer p;
    p.layer_name = l.name;
    const Tensor& mu = l.param("running_mean");
    const Tensor& var = l.param("running_var");
    for (int64_t c = 0; c < mu.numel(); ++c) {
      p.mean.push_back(mu.scalar_at(c));
      p.stddev.push_back(std::sqrt(std::max(0.0, var.scalar_at(c))));
    }
    s.layers.push_back(std::move(p));
  }
  return s;
}

void ModelGraph::validate() const {
  std::set<std::string> names;
  int depth = 0;
  for (const auto& l : layers) {
    if (!names.insert(l.name).second)
      throw ConfigError("duplicate layer name '" + l.name + "'");
    if (l.kind == LayerKind::ResidualBegin) ++depth;
    if (l.kind == LayerKind::ResidualAdd && --depth < 0)
      throw ConfigError("residual_add without matching residual_begin at '" + l.name + "'");
    if (l.kind == LayerKind::BatchNorm)
      for (const char* k : {"gamma", "beta", "running_mean", "running_var"})
        if (!l.has_param(k))
          throw ConfigError("batchnorm '" + l.name + "' missing parameter " + k);
  }
  if (depth != 0) throw ConfigError("unclosed residual_begin");
}

// ---------------------------------------------------------------------------
// Toy model family
// ---------------------------------------------------------------------------

namespace {

Tensor gaussian_tensor(Shape shape, double std, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), DType::Real32);
  for (auto& v : t.f32()) v = static_cast<float>(std * rng.normal());
  return t;
}

Layer make_conv(const std::string& name, int64_t cin, int64_t cout, int64_t k,
                int64_t groups, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Conv1d;
  l.name = name;
  l.spec = ConvSpec{cin, cout, k, 1, (k - 1) / 2, 1, groups};
  const double std = 1.0 / std::sqrt(static_cast<double>(cin / groups) * k);
  l.params["w"] = gaussian_tensor({cout, cin / groups, k}, std, rng);
  l.params["b"] = Tensor::zeros({cout}, DType::Real32);
  return l;
}

Layer make_bn(const std::string& name, int64_t c) {
  Layer l;
  l.kind = LayerKind::BatchNorm;
  l.name = name;
  l.eps = 1e-5;
  l.params["gamma"] = Tensor::from_f32({c}, std::vector<float>(c, 1.f));
  l.params["beta"] = Tensor::zeros({c}, DType::Real32);
  l.params["running_mean"] = Tensor::zeros({c}, DType::Real32);
  l.params["running_var"] = Tensor::from_f32({c}, std::vector<float>(c, 1.f));
  return l;
}

Layer make_plain(LayerKind kind, const std::string& name) {
  Layer l;
  l.kind = kind;
  l.name = name;
  return l;
}

Layer make_dense(const std::string& name, int64_t in, int64_t out, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.name = name;
  l.params["w"] = gaussian_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  l.params["b"] = Tensor::zeros({out}, DType::Real32);
  return l;
}

Layer make_attention(const std::string& name, int64_t c, Rng& rng) {
  Layer l;
  l.kind = LayerKind::Attention;
  l.name = name;
  const int64_t hidden = 2 * c;
  const double sc = 1.0 / std::sqrt(static_cast<double>(c));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (const char* k : {"wq", "wk", "wv", "wo"})
    l.params[k] = gaussian_tensor({c, c}, sc, rng);
  l.params["w1"] = gaussian_tensor({hidden, c}, sc, rng);
  l.params["w2"] = gaussian_tensor({c, hidden}, sh, rng);
  for (const char* k : {"bq", "bk", "bv", "bo"}) l.params[k] = Tensor::zeros({c}, DType::Real32);
  l.params["b1"] = Tensor::zeros({hidden}, DType::Real32);
  l.params["b2"] = Tensor::zeros({c}, DType::Real32);
  return l;
}

}  // namespace

ModelGraph build_toy(const ToyConfig& cfg, uint64_t seed) {
  if (cfg.blocks < 1 || cfg.channels < 1 || cfg.mel_bins < 1 || cfg.frames < 1)
    throw ConfigError("toy config: blocks, channels, mel_bins and frames must be positive");
  if (cfg.kernel < 1 || cfg.kernel % 2 == 0)
    throw ConfigError("toy config: same-padding blocks need an odd kernel size");
  if (cfg.vocab < 0) throw ConfigError("toy config: negative vocab");

  Rng rng(seed);
  ModelGraph g;
  g.mel_bins = cfg.mel_bins;
  g.frames = cfg.frames;
  g.metadata["family"] = "miniquartz";

  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string p = "b" + std::to_string(b);
    const int64_t cin = b == 0 ? cfg.mel_bins : cfg.channels;
    const bool skip = cfg.residual && b >= 1;
    if (skip) g.layers.push_back(make_plain(LayerKind::ResidualBegin, p + ".skip"));
    if (cfg.separable && b >= 1) {
      g.layers.push_back(make_conv(p + ".dw", cin, cin, cfg.kernel, cin, rng));
      g.layers.push_back(make_conv(p + ".pw", cin, cfg.channels, 1, 1, rng));
    } else {
      g.layers.push_back(make_conv(p + ".conv", cin, cfg.channels, cfg.kernel, 1, rng));
    }
    g.layers.push_back(make_bn(p + ".bn", cfg.channels));
    if (skip) g.layers.push_back(make_plain(LayerKind::ResidualAdd, p + ".add"));
    g.layers.push_back(make_plain(LayerKind::Relu, p + ".relu"));
  }
  if (cfg.attention) g.layers.push_back(make_attention("att", cfg.channels, rng));
  if (cfg.vocab > 0) g.layers.push_back(make_dense("head", cfg.channels, cfg.vocab, rng));

  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

Tensor promote(const Tensor& x, int64_t mel, bool* was_2d) {
  if (!x.is_real()) throw ShapeError("forward: input must be real");
  if (x.rank() == 2) {
    *was_2d = true;
    if (x.dim(0) != mel)
      throw ShapeError("forward: input has " + std::to_string(x.dim(0)) +
                       " mel bins, model expects " + std::to_string(mel));
    return x.reshaped({1, x.dim(0), x.dim(1)});
  }
  if (x.rank() == 3) {
    *was_2d = false;
    if (x.dim(1) != mel)
      throw ShapeError("forward: input has " + std::to_string(x.dim(1)) +
                       " mel bins, model expects " + std::to_string(mel));
    return x;
  }
  throw ShapeError("forward: input rank must be 2 or 3, got " + shape_str(x.shape()));
}

Tensor slice_batch(const Tensor& x, int64_t b) {
  const int64_t c = x.dim(1), t = x.dim(2);
  Tensor out = Tensor::zeros({c, t}, x.dtype());
  const int64_t n = c * t;
  if (x.dtype() == DType::Real32)
    std::copy_n(x.f32().begin() + b * n, n, out.f32().begin());
  else
    std::copy_n(x.f64().begin() + b * n, n, out.f64().begin());
  return out;
}

template <typename T>
void transpose_into(const std::vector<T>& src, std::vector<T>& dst, int64_t r, int64_t c) {
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
}

Tensor transpose2d(const Tensor& x) {
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({c, r}, x.dtype());
  if (x.dtype() == DType::Real32)
    transpose_into(x.f32(), out.f32(), r, c);
  else
    transpose_into(x.f64(), out.f64(), r, c);
  return out;
}

// Rows of x are frames: out[t,o] = sum_c x[t,c] * w[o,c] + b[o].
Tensor frame_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul_f(x, transpose2d(w));
  const int64_t t = out.dim(0), o = out.dim(1);
  if (x.dtype() == DType::Real32) {
    auto& y = out.f32();
    const auto& bv = b.f32();
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j < o; ++j) y[i * o + j] += bv[j];
  } else {
    auto& y = out.f64();
    const auto& bv = b.f64();
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j < o; ++j) y[i * o + j] += bv[j];
  }
  return out;
}

Tensor scale_by(const Tensor& x, double s) {
  Tensor out = x;
  if (x.dtype() == DType::Real32)
    for (auto& v : out.f32()) v = static_cast<float>(v * s);
  else
    for (auto& v : out.f64()) v *= s;
  return out;
}

Tensor stack_batches(const std::vector<Tensor>& slices) {
  const Shape& s0 = slices.front().shape();
  Shape out_shape{static_cast<int64_t>(slices.size())};
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  Tensor out = Tensor::zeros(out_shape, slices.front().dtype());
  const int64_t n = slices.front().numel();
  for (size_t b = 0; b < slices.size(); ++b) {
    if (out.dtype() == DType::Real32)
      std::copy_n(slices[b].f32().begin(), n, out.f32().begin() + b * n);
    else
      std::copy_n(slices[b].f64().begin(), n, out.f64().begin() + b * n);
  }
  return out;
}

struct ExecContext {
  BnMode bn_mode = BnMode::Eval;
  TapMode taps = TapMode::None;
  std::map<std::string, Tensor>* taps_out = nullptr;
  std::vector<std::pair<std::string, ChannelStats>>* collected = nullptr;
};

void tap(const ExecContext& ctx, const std::string& key, const Tensor& value) {
  if (ctx.taps == TapMode::All && ctx.taps_out) (*ctx.taps_out)[key] = value;
}

Tensor param_as(const Layer& l, const std::string& key, DType d) {
  const Tensor& p = l.param(key);
  return d == DType::Real64 ? p.to_f64() : p;
}

Tensor run_attention(const Layer& l, const Tensor& x, const ExecContext& ctx) {
  const DType d = x.dtype();
  const Tensor wq = param_as(l, "wq", d), bq = param_as(l, "bq", d);
  const Tensor wk = param_as(l, "wk", d), bk = param_as(l, "bk", d);
  const Tensor wv = param_as(l, "wv", d), bv = param_as(l, "bv", d);
  const Tensor wo = param_as(l, "wo", d), bo = param_as(l, "bo", d);
  const Tensor w1 = param_as(l, "w1", d), b1 = param_as(l, "b1", d);
  const Tensor w2 = param_as(l, "w2", d), b2 = param_as(l, "b2", d);
  const int64_t c = wq.dim(1);
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));

  std::vector<Tensor> outs, tq, tk, tv, tscores, tattn, tctx, tout, th1, tswish;
  for (int64_t b = 0; b < x.dim(0); ++b) {
    const Tensor frames = transpose2d(slice_batch(x, b));  // (T, C)
    const Tensor q = frame_linear(frames, wq, bq);
    const Tensor k = frame_linear(frames, wk, bk);
    const Tensor v = frame_linear(frames, wv, bv);
    const Tensor scores = scale_by(matmul_f(q, transpose2d(k)), inv_sqrt_c);
    const Tensor attn = softmax_f(scores);
    const Tensor context = matmul_f(attn, v);
    const Tensor proj = frame_linear(context, wo, bo);
    const Tensor h1 = frame_linear(proj, w1, b1);
    const Tensor gated = swish_f(h1);
    const Tensor h2 = frame_linear(gated, w2, b2);
    outs.push_back(transpose2d(h2));  // back to (C, T)
    if (ctx.taps == TapMode::All) {
      tq.push_back(q); tk.push_back(k); tv.push_back(v);
      tscores.push_back(scores); tattn.push_back(attn); tctx.push_back(context);
      tout.push_back(proj); th1.push_back(h1); tswish.push_back(gated);
    }
  }
  if (ctx.taps == TapMode::All) {
    tap(ctx, l.name + ".q", stack_batches(tq));
    tap(ctx, l.name + ".k", stack_batches(tk));
    tap(ctx, l.name + ".v", stack_batches(tv));
    tap(ctx, l.name + ".scores", stack_batches(tscores));
    tap(ctx, l.name + ".attn", stack_batches(tattn));
    tap(ctx, l.name + ".ctx", stack_batches(tctx));
    tap(ctx, l.name + ".out", stack_batches(tout));
    tap(ctx, l.name + ".h1", stack_batches(th1));
    tap(ctx, l.name + ".swish", stack_batches(tswish));
  }
  return stack_batches(outs);
}

Tensor run_graph(const ModelGraph& model, const Tensor& input, const ExecContext& ctx) {
  bool was_2d = false;
  Tensor cur = promote(input, model.mel_bins, &was_2d);
  std::vector<Tensor> residual_stack;

  for (const auto& l : model.layers) {
    switch (l.kind) {
      case LayerKind::Conv1d:
        cur = conv1d_f(cur, param_as(l, "w", cur.dtype()), param_as(l, "b", cur.dtype()),
                       l.spec);
        break;
      case LayerKind::BatchNorm: {
        if (ctx.taps == TapMode::BnInputs && ctx.taps_out) (*ctx.taps_out)[l.name] = cur;
        ChannelStats stats;
        cur = batchnorm_f(cur, param_as(l, "gamma", cur.dtype()),
                          param_as(l, "beta", cur.dtype()),
                          param_as(l, "running_mean", cur.dtype()),
                          param_as(l, "running_var", cur.dtype()), l.eps, ctx.bn_mode,
                          ctx.collected ? &stats : nullptr);
        if (ctx.collected) ctx.collected->emplace_back(l.name, std::move(stats));
        break;
      }
      case LayerKind::Relu: cur = relu_f(cur); break;
      case LayerKind::Dense:
        cur = dense_f(cur, param_as(l, "w", cur.dtype()), param_as(l, "b", cur.dtype()));
        break;
      case LayerKind::ResidualBegin: residual_stack.push_back(cur); continue;
      case LayerKind::ResidualAdd: {
        if (residual_stack.empty())
          throw ShapeError("residual_add '" + l.name + "' with empty residual stack");
        Tensor skip = residual_stack.back();
        residual_stack.pop_back();
        cur = add_f(cur, skip);
        break;
      }
      case LayerKind::Attention: cur = run_attention(l, cur, ctx); break;
      case LayerKind::Sigmoid: cur = sigmoid_f(cur); break;
      case LayerKind::Swish: cur = swish_f(cur); break;
      case LayerKind::Softmax: cur = softmax_f(cur); break;
    }
    tap(ctx, l.name, cur);
  }
  if (was_2d && cur.rank() == 3 && cur.dim(0) == 1)
    cur = cur.reshaped({cur.dim(1), cur.dim(2)});
  return cur;
}

}  // namespace

ForwardResult forward_f(const ModelGraph& model, const Tensor& input, TapMode taps) {
  ForwardResult r;
  ExecContext ctx;
  ctx.bn_mode = BnMode::Eval;
  ctx.taps = taps;
  ctx.taps_out = &r.taps;
  r.output = run_graph(model, input, ctx);
  return r;
}

ModelGraph populate_stats(const ModelGraph& model, const std::vector<Tensor>& data,
                          double momentum) {
  if (data.empty()) throw StatsError("populate_stats: empty data sequence");
  if (!(momentum > 0.0 && momentum <= 1.0))
    throw ConfigError("populate_stats: momentum must be in (0, 1]");

  ModelGraph out = model;
  for (const auto& batch : data) {
    std::vector<std::pair<std::string, ChannelStats>> collected;
    ExecContext ctx;
    ctx.bn_mode = BnMode::Collect;
    ctx.collected = &collected;
    run_graph(out, batch, ctx);
    for (const auto& [name, stats] : collected) {
      for (auto& l : out.layers) {
        if (l.name != name) continue;
        auto& mu = l.params["running_mean"].f32();
        auto& var = l.params["running_var"].f32();
        for (size_t c = 0; c < mu.size(); ++c) {
          mu[c] = static_cast<float>((1.0 - momentum) * mu[c] + momentum * stats.mean[c]);
          var[c] = static_cast<float>((1.0 - momentum) * var[c] + momentum * stats.var[c]);
        }
      }
    }
  }
  return out;
}

std::vector<QuantPoint> quant_points(const ModelGraph& model) {
  std::vector<QuantPoint> pts;
  for (const auto& l : model.layers) {
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::Dense:
        pts.push_back({l.name, &l.param("w"), &l.param("b"), false});
        break;
      case LayerKind::Relu:
      case LayerKind::ResidualAdd:
      case LayerKind::Swish:
        pts.push_back({l.name, nullptr, nullptr, false});
        break;
      case LayerKind::Sigmoid:
      case LayerKind::Softmax:
        pts.push_back({l.name, nullptr, nullptr, true});
        break;
      case LayerKind::Attention:
        pts.push_back({l.name + ".q", &l.param("wq"), &l.param("bq"), false});
        pts.push_back({l.name + ".k", &l.param("wk"), &l.param("bk"), false});
        pts.push_back({l.name + ".v", &l.param("wv"), &l.param("bv"), false});
        pts.push_back({l.name + ".scores", nullptr, nullptr, false});
        pts.push_back({l.name + ".attn", nullptr, nullptr, true});
        pts.push_back({l.name + ".ctx", nullptr, nullptr, false});
        pts.push_back({l.name + ".out", &l.param("wo"), &l.param("bo"), false});
        pts.push_back({l.name + ".h1", &l.param("w1"), &l.param("b1"), false});
        pts.push_back({l.name + ".swish", nullptr, nullptr, false});
        pts.push_back({l.name, &l.param("w2"), &l.param("b2"), false});
        break;
      case LayerKind::BatchNorm:
      case LayerKind::ResidualBegin:
        break;
    }
  }
  return pts;
}

Tensor structured_batch(int64_t batch, int64_t mel, int64_t frames, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> offset(mel);
  for (auto& o : offset) o = rng.uniform(-1.0, 1.0);
  Tensor out = Tensor::zeros({batch, mel, frames}, DType::Real32);
  auto& v = out.f32();
  const double two_pi = 6.283185307179586;
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t c = 0; c < mel; ++c) {
      double amp[3], freq[3], phase[3];
      for (int i = 0; i < 3; ++i) {
        amp[i] = rng.uniform(0.2, 0.8);
        freq[i] = 1.0 + static_cast<double>(rng.next_below(std::max<int64_t>(2, frames / 8)));
        phase[i] = rng.uniform(0.0, two_pi);
      }
      for (int64_t t = 0; t < frames; ++t) {
        double x = offset[c] + 0.05 * rng.normal();
        for (int i = 0; i < 3; ++i)
          x += amp[i] * std::sin(two_pi * freq[i] * t / frames + phase[i]);
        v[(b * mel + c) * frames + t] = static_cast<float>(x);
      }
    }
  return out;
}

Tensor uniform_batch(int64_t batch, int64_t mel, int64_t frames, double lo, double hi,
                     uint64_t seed) {
  Rng rng(seed);
  Tensor out = Tensor::zeros({batch, mel, frames}, DType::Real32);
  for (auto& v : out.f32()) v = static_cast<float>(rng.uniform(lo, hi));
  return out;
}

}  // namespace asrq
