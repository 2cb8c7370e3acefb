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

#include "asrq/autodiff.hpp"

#include <cmath>

namespace asrq {

namespace {

constexpr double kVarianceFloor = 1e-8;

bool all_finite(const Tensor& t) {
  const auto& v = t.f64();
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

int push(Tape& tape, Tape::Node node) {
  tape.nodes.push_back(std::move(node));
  return static_cast<int>(tape.nodes.size()) - 1;
}

// Per-channel mean over batch and time of a (B,C,T) tensor.
Tensor batch_mean(const Tensor& x) {
  const int64_t b = x.dim(0), c = x.dim(1), t = x.dim(2);
  Tensor out = Tensor::zeros({c}, DType::Real64);
  const auto& v = x.f64();
  auto& m = out.f64();
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (int64_t bb = 0; bb < b; ++bb)
      for (int64_t tt = 0; tt < t; ++tt) sum += v[(bb * c + ch) * t + tt];
    m[ch] = sum / static_cast<double>(b * t);
  }
  return out;
}

Tensor batch_std(const Tensor& x, const Tensor& mean) {
  const int64_t b = x.dim(0), c = x.dim(1), t = x.dim(2);
  Tensor out = Tensor::zeros({c}, DType::Real64);
  const auto& v = x.f64();
  const auto& m = mean.f64();
  auto& s = out.f64();
  for (int64_t ch = 0; ch < c; ++ch) {
    double acc = 0;
    for (int64_t bb = 0; bb < b; ++bb)
      for (int64_t tt = 0; tt < t; ++tt) {
        const double d = v[(bb * c + ch) * t + tt] - m[ch];
        acc += d * d;
      }
    s[ch] = std::sqrt(acc / static_cast<double>(b * t) + kVarianceFloor);
  }
  return out;
}

int last_bn_index(const ModelGraph& model) {
  int last = -1;
  for (size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].kind == LayerKind::BatchNorm) last = static_cast<int>(i);
  return last;
}

}  // namespace

Tape record_tape(const ModelGraph& model, const Tensor& input) {
  const int last_bn = last_bn_index(model);
  if (last_bn < 0)
    throw StatsError("grad_input: model has no BatchNorm layers to match statistics on");

  Tensor x = input.to_f64();
  if (x.rank() == 2) x = x.reshaped({1, x.dim(0), x.dim(1)});
  if (x.rank() != 3 || x.dim(1) != model.mel_bins)
    throw ShapeError("grad_input: input shape " + shape_str(input.shape()) +
                     " does not match model input (" + std::to_string(model.mel_bins) +
                     ", T)");

  Tape tape;
  int cur = push(tape, {Tape::Op::Input, -1, -1, nullptr, "input", x});
  std::vector<int> residual_stack;

  // tape.nodes reallocates on push, so values are copied out before pushing
  for (int li = 0; li <= last_bn; ++li) {
    const Layer& l = model.layers[li];
    const Tensor value = tape.nodes[cur].value;
    switch (l.kind) {
      case LayerKind::Conv1d: {
        Tensor y = conv1d_f(value, l.param("w").to_f64(), l.param("b").to_f64(), l.spec);
        cur = push(tape, {Tape::Op::Conv, cur, -1, &l, l.name, std::move(y)});
        break;
      }
      case LayerKind::BatchNorm: {
        Tensor mu = batch_mean(value);
        Tensor sd = batch_std(value, mu);
        const int mean_id =
            push(tape, {Tape::Op::BatchMean, cur, -1, &l, l.name, std::move(mu)});
        const int std_id =
            push(tape, {Tape::Op::BatchStd, cur, mean_id, &l, l.name, std::move(sd)});
        tape.stat_nodes.emplace_back(l.name, mean_id, std_id);
        Tensor y = batchnorm_f(value, l.param("gamma").to_f64(), l.param("beta").to_f64(),
                               l.param("running_mean").to_f64(),
                               l.param("running_var").to_f64(), l.eps, BnMode::Eval);
        cur = push(tape, {Tape::Op::BnEval, cur, -1, &l, l.name, std::move(y)});
        break;
      }
      case LayerKind::Relu: {
        Tensor y = relu_f(value);
        cur = push(tape, {Tape::Op::Relu, cur, -1, &l, l.name, std::move(y)});
        break;
      }
      case LayerKind::Dense: {
        Tensor y = dense_f(value, l.param("w").to_f64(), l.param("b").to_f64());
        cur = push(tape, {Tape::Op::Dense, cur, -1, &l, l.name, std::move(y)});
        break;
      }
      case LayerKind::ResidualBegin:
        residual_stack.push_back(cur);
        break;
      case LayerKind::ResidualAdd: {
        if (residual_stack.empty())
          throw ShapeError("grad_input: residual_add '" + l.name + "' without begin");
        const int skip = residual_stack.back();
        residual_stack.pop_back();
        Tensor y = add_f(value, tape.nodes[skip].value);
        cur = push(tape, {Tape::Op::Add, cur, skip, &l, l.name, std::move(y)});
        break;
      }
      default:
        throw StatsError("grad_input: layer '" + l.name + "' (" +
                         layer_kind_name(l.kind) +
                         ") is not in the differentiable subset but precedes a BatchNorm");
    }
  }
  return tape;
}

BatchStats tape_stats(const Tape& tape) {
  BatchStats s;
  for (const auto& [name, mean_id, std_id] : tape.stat_nodes) {
    BatchStats::PerLayer p;
    p.layer_name = name;
    p.mean = tape.nodes[mean_id].value.f64();
    p.stddev = tape.nodes[std_id].value.f64();
    s.layers.push_back(std::move(p));
  }
  return s;
}

GradResult grad_input(const ModelGraph& model, const Tensor& input, const StatsLoss& loss) {
  Tape tape = record_tape(model, input);
  GradResult res;
  res.stats = tape_stats(tape);
  res.loss = loss.value(res.stats);
  if (!std::isfinite(res.loss)) {
    for (const auto& n : tape.nodes)
      if (!all_finite(n.value))
        throw NumericError("grad_input: non-finite values first appear at layer '" +
                           n.label + "'");
    throw NumericError("grad_input: loss is non-finite");
  }

  // adjoint buffers, one per node
  std::vector<std::vector<double>> adj(tape.nodes.size());
  for (size_t i = 0; i < tape.nodes.size(); ++i)
    adj[i].assign(tape.nodes[i].value.numel(), 0.0);

  const BatchStats g = loss.gradient(res.stats);
  if (g.layers.size() != tape.stat_nodes.size())
    throw StatsError("grad_input: loss gradient structure mismatch");
  for (size_t i = 0; i < tape.stat_nodes.size(); ++i) {
    const auto& [name, mean_id, std_id] = tape.stat_nodes[i];
    for (size_t c = 0; c < g.layers[i].mean.size(); ++c) {
      adj[mean_id][c] += g.layers[i].mean[c];
      adj[std_id][c] += g.layers[i].stddev[c];
    }
  }

  for (int i = static_cast<int>(tape.nodes.size()) - 1; i >= 0; --i) {
    const auto& n = tape.nodes[i];
    switch (n.op) {
      case Tape::Op::Input:
        break;
      case Tape::Op::Conv: {
        const Tensor& x = tape.nodes[n.a].value;
        const auto& w = n.layer->param("w");
        const ConvSpec& sp = n.layer->spec;
        const int64_t B = x.dim(0), T = x.dim(2);
        const int64_t cout = sp.out_channels, cin_g = sp.in_channels / sp.groups;
        const int64_t cout_g = cout / sp.groups, k = sp.kernel_size;
        const int64_t to = n.value.dim(2);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t oc = 0; oc < cout; ++oc) {
            const int64_t ci0 = (oc / cout_g) * cin_g;
            for (int64_t ot = 0; ot < to; ++ot) {
              const double gy = adj[i][(b * cout + oc) * to + ot];
              if (gy == 0.0) continue;
              const int64_t t0 = ot * sp.stride - sp.padding;
              for (int64_t ci = 0; ci < cin_g; ++ci)
                for (int64_t kk = 0; kk < k; ++kk) {
                  const int64_t t = t0 + kk * sp.dilation;
                  if (t >= 0 && t < T)
                    adj[n.a][(b * x.dim(1) + ci0 + ci) * T + t] +=
                        gy * w.scalar_at((oc * cin_g + ci) * k + kk);
                }
            }
          }
        break;
      }
      case Tape::Op::BnEval: {
        const auto& gamma = n.layer->param("gamma");
        const auto& rvar = n.layer->param("running_var");
        const int64_t C = n.value.dim(1), T = n.value.dim(2), B = n.value.dim(0);
        for (int64_t c = 0; c < C; ++c) {
          const double s = gamma.scalar_at(c) / std::sqrt(rvar.scalar_at(c) + n.layer->eps);
          for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t)
              adj[n.a][(b * C + c) * T + t] += s * adj[i][(b * C + c) * T + t];
        }
        break;
      }
      case Tape::Op::Relu: {
        const auto& x = tape.nodes[n.a].value.f64();
        for (size_t j = 0; j < x.size(); ++j)
          if (x[j] > 0.0) adj[n.a][j] += adj[i][j];
        break;
      }
      case Tape::Op::Dense: {
        const auto& w = n.layer->param("w");
        const Tensor& x = tape.nodes[n.a].value;
        const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = n.value.dim(1);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o)
            for (int64_t t = 0; t < T; ++t) {
              const double gy = adj[i][(b * O + o) * T + t];
              if (gy == 0.0) continue;
              for (int64_t c = 0; c < C; ++c)
                adj[n.a][(b * C + c) * T + t] += gy * w.scalar_at(o * C + c);
            }
        break;
      }
      case Tape::Op::Add:
        for (size_t j = 0; j < adj[i].size(); ++j) {
          adj[n.a][j] += adj[i][j];
          adj[n.b][j] += adj[i][j];
        }
        break;
      case Tape::Op::BatchMean: {
        const Tensor& x = tape.nodes[n.a].value;
        const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
        const double inv_n = 1.0 / static_cast<double>(B * T);
        for (int64_t c = 0; c < C; ++c) {
          const double gm = adj[i][c] * inv_n;
          if (gm == 0.0) continue;
          for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t) adj[n.a][(b * C + c) * T + t] += gm;
        }
        break;
      }
      case Tape::Op::BatchStd: {
        // sigma(x) = sqrt(mean((x - mean(x))^2) + floor); the mean(x)
        // dependence cancels, leaving d sigma/dx_j = (x_j - mu)/(N sigma).
        const Tensor& x = tape.nodes[n.a].value;
        const auto& mu = tape.nodes[n.b].value.f64();
        const auto& sd = n.value.f64();
        const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
        const double inv_n = 1.0 / static_cast<double>(B * T);
        const auto& xv = x.f64();
        for (int64_t c = 0; c < C; ++c) {
          const double gs = adj[i][c];
          if (gs == 0.0) continue;
          const double f = gs * inv_n / sd[c];
          for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t) {
              const int64_t j = (b * C + c) * T + t;
              adj[n.a][j] += f * (xv[j] - mu[c]);
            }
        }
        break;
      }
    }
  }

  Tensor grad = Tensor::from_f64(tape.nodes[0].value.shape(), std::move(adj[0]));
  if (input.rank() == 2) grad = grad.reshaped({grad.dim(1), grad.dim(2)});
  res.grad = std::move(grad);
  return res;
}

}  // namespace asrq
