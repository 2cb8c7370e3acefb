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

#include "asrq/int_runtime.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "asrq/io.hpp"
#include "asrq/purity.hpp"

namespace asrq {

// ---------------------------------------------------------------------------
// DyadicScale
// ---------------------------------------------------------------------------

DyadicScale DyadicScale::from_real(double factor) {
  if (!(factor > 0) || !std::isfinite(factor))
    throw CompileError("requant factor must be positive and finite");
  int exp = 0;
  const double frac = std::frexp(factor, &exp);  // factor = frac * 2^exp, frac in [0.5, 1)
  int64_t m = std::llround(frac * (int64_t{1} << 31));
  if (m == (int64_t{1} << 31)) {
    m >>= 1;
    ++exp;
  }
  const int shift = 31 - exp;
  if (shift < 0) throw CompileError("requant factor too large to encode dyadically");
  if (shift > 62) throw CompileError("requant factor too small to encode dyadically");
  DyadicScale d;
  d.mult = static_cast<int32_t>(m);
  d.shift = shift;
  return d;
}

int64_t DyadicScale::apply(int64_t v) const {
  const int64_t p = v * static_cast<int64_t>(mult);
  if (shift == 0) return p;
  const int64_t mag = p < 0 ? -p : p;
  const int64_t r = (mag + (int64_t{1} << (shift - 1))) >> shift;
  return p < 0 ? -r : r;
}

// ---------------------------------------------------------------------------
// Integer exponential and friends
// ---------------------------------------------------------------------------

namespace {

constexpr double kLn2 = 0.6931471805599453;
// quadratic fit of exp on (-ln2, 0]
constexpr double kExpA = 0.3585;
constexpr double kExpB = 1.353;
constexpr double kExpC = 0.344;
// number of ln2 steps past which the result underflows every grid we use
constexpr int kMaxLn2Shifts = 40;

int64_t round_div_pos(int64_t num, int64_t den) {  // round-half-up, positives
  return (2 * num + den) / (2 * den);
}

}  // namespace

IExpParams IExpParams::make(double input_scale) {
  if (!(input_scale > 0) || !std::isfinite(input_scale))
    throw CompileError("iexp: input scale must be positive");
  // re-grid so ln2 spans [2^12, 2^13) steps: fine enough for the polynomial
  // constants, coarse enough that squares stay inside int32-sized values
  const int k = static_cast<int>(std::ceil(std::log2(4096.0 * input_scale / kLn2)));
  if (k > 45 || k < -45)
    throw CompileError("iexp: input scale out of the encodable range");
  IExpParams p;
  p.pre_shift = k;
  p.fine_scale = std::ldexp(input_scale, -k);
  p.q_ln2 = std::llround(kLn2 / p.fine_scale);
  p.q_bias = std::llround(kExpB / p.fine_scale);
  p.q_const = std::llround(kExpC / (kExpA * p.fine_scale * p.fine_scale));
  p.out_scale = kExpA * p.fine_scale * p.fine_scale;
  p.one = std::llround(1.0 / p.out_scale);
  return p;
}

int64_t IExpParams::exp_int(int64_t q) const {
  if (q > 0) throw NumericError("iexp: positive input violates the shifted contract");
  int64_t qf;
  if (pre_shift >= 0) {
    qf = q << pre_shift;
  } else {
    const int s = -pre_shift;
    const int64_t mag = (-q + (int64_t{1} << (s - 1))) >> s;
    qf = -mag;
  }
  const int64_t z = (-qf) / q_ln2;
  if (z > kMaxLn2Shifts) return 0;
  const int64_t rem = qf + z * q_ln2;  // in (-q_ln2, 0]
  const int64_t t = rem + q_bias;
  const int64_t val = t * t + q_const;
  if (z == 0) return val;
  return (val + (int64_t{1} << (z - 1))) >> z;
}

double IExpParams::exp_sim(double x) const {
  // same decomposition on real values; all intermediates are integer-valued
  double qf;
  if (pre_shift >= 0) {
    qf = x / fine_scale;
  } else {
    const int s = -pre_shift;
    const double step = std::ldexp(1.0, s);
    qf = -std::floor((-x / (fine_scale / step) + step / 2.0) / step);
  }
  const double z = std::floor(-qf / static_cast<double>(q_ln2));
  if (z > kMaxLn2Shifts) return 0.0;
  const double rem = qf + z * static_cast<double>(q_ln2);
  const double t = rem + static_cast<double>(q_bias);
  const double val = t * t + static_cast<double>(q_const);
  if (z == 0.0) return val;
  const double denom = std::ldexp(1.0, static_cast<int>(z));
  return std::floor(val / denom + 0.5);
}

int64_t IExpParams::sigmoid_neg_int(int64_t q) const {
  const int64_t e = exp_int(q);
  return round_div_pos(kUnitGridMax * e, one + e);
}

double IExpParams::sigmoid_neg_sim(double x) const {
  const double e = exp_sim(x);
  return std::floor((kUnitGridMax * e) / (static_cast<double>(one) + e) + 0.5);
}

namespace {

int64_t round_div_signed(int64_t num, int64_t den) {  // round half away, den > 0
  const int64_t mag = num < 0 ? -num : num;
  const int64_t r = (2 * mag + den) / (2 * den);
  return num < 0 ? -r : r;
}

}  // namespace

int64_t IExpParams::swish_units_int(int64_t q) const {
  if (q <= 0) {
    const int64_t e = exp_int(q);
    return round_div_signed(kSwishGridDiv * q * e, one + e);
  }
  // x * sigmoid(x) = x * one / (one + exp(-x)) for positive x
  const int64_t e = exp_int(-q);
  return round_div_signed(kSwishGridDiv * q * one, one + e);
}

double IExpParams::swish_units_sim(double x) const {
  const double in_scale = std::ldexp(fine_scale, pre_shift);
  const double qd = x / in_scale;  // exact: x is a grid multiple
  const double den_one = static_cast<double>(one);
  if (x <= 0) {
    const double e = exp_sim(x);
    const double num = static_cast<double>(kSwishGridDiv) * qd * e;
    const double r = std::floor(std::abs(num) / (den_one + e) + 0.5);
    return num < 0 ? -r : r;
  }
  const double e = exp_sim(-x);
  const double num = static_cast<double>(kSwishGridDiv) * qd * den_one;
  return std::floor(num / (den_one + e) + 0.5);
}

// ---------------------------------------------------------------------------
// Compile
// ---------------------------------------------------------------------------

namespace {

constexpr int64_t kAccLimit = int64_t{1} << 31;

int64_t int_at(const Tensor& t, int64_t i) {
  return t.dtype() == DType::Int8 ? static_cast<int64_t>(t.i8()[i])
                                  : static_cast<int64_t>(t.i32()[i]);
}

Tensor narrow_to_i8(const Tensor& q32) {
  Tensor t = Tensor::zeros(q32.shape(), DType::Int8);
  auto& d = t.i8();
  const auto& s = q32.i32();
  for (size_t i = 0; i < s.size(); ++i) d[i] = static_cast<int8_t>(s[i]);
  return t;
}

struct GridState {
  double scale = 1;
  int64_t qmax = 127;
};

QDense lower_dense(const std::string& point_name, const Tensor& w, const Tensor& b,
                   const QuantConfig& cfg, const GridState& in, int64_t macs_per_out) {
  const auto& e = cfg.at(point_name);
  if (!e.weight)
    throw CompileError("config entry '" + point_name + "' lacks weight parameters");
  const QuantParams wp = *e.weight;
  const QuantParams ap = e.act;

  QDense d;
  d.name = point_name;
  Tensor q32 = quantize(w, wp);
  d.weight = wp.bits <= 8 ? narrow_to_i8(q32) : std::move(q32);
  d.in_scale = in.scale;
  d.w_scale = wp.scale();
  d.out_scale = ap.scale();
  d.out_qmax = ap.grid_max();

  const double bias_scale = d.w_scale * d.in_scale;
  Tensor qb = Tensor::zeros(b.shape(), DType::Int32);
  int64_t max_bias = 0;
  for (int64_t i = 0; i < b.numel(); ++i) {
    const double q = round_half_even(b.scalar_at(i) / bias_scale);
    if (std::abs(q) >= static_cast<double>(kAccLimit))
      throw CompileError("site '" + point_name + "': bias does not fit int32");
    qb.i32()[i] = static_cast<int32_t>(q);
    max_bias = std::max(max_bias, std::abs(static_cast<int64_t>(qb.i32()[i])));
  }
  d.bias = std::move(qb);

  // INT32 headroom for deployment-width grids (signed 8-bit and the [0,255]
  // unit grid); wider diagnostic grids run on the 64-bit accumulators and
  // only need to stay clear of those.
  const bool int32_contract = wp.grid_max() <= 127 && in.qmax <= 255;
  const int64_t limit = int32_contract ? kAccLimit : (int64_t{1} << 62);
  if (macs_per_out * wp.grid_max() * in.qmax + max_bias >= limit)
    throw CompileError("site '" + point_name +
                       "': INT32 accumulator headroom exceeded (" +
                       std::to_string(macs_per_out) + " MACs at these bit-widths)");

  d.requant = DyadicScale::from_real(bias_scale / d.out_scale);
  return d;
}

GridState grid_of(const QDense& d) { return {d.out_scale, d.out_qmax}; }

}  // namespace

QuantizedModel compile(const ModelGraph& model, const QuantConfig& cfg) {
  if (model.has_batchnorm())
    throw CompileError("compile: model must be BN-folded first");
  model.validate();
  const auto points = quant_points(model);
  for (const auto& p : points)
    if (!cfg.covers(p.name))
      throw CompileError("compile: quant config missing entry for '" + p.name + "'");
  if (!cfg.covers(input_boundary_name()))
    throw CompileError("compile: quant config missing the input boundary entry");

  QuantizedModel qm;
  qm.input_params = cfg.at(input_boundary_name()).act;
  qm.input_params.validate();
  if (qm.input_params.alpha <= 0)
    throw CompileError("compile: input boundary has a non-positive clipping range");
  qm.weight_bits = cfg.weight_bits;
  qm.act_bits = cfg.act_bits;
  qm.mel_bins = model.mel_bins;
  qm.frames = model.frames;
  qm.metadata = model.metadata;

  GridState cur{qm.input_params.scale(), qm.input_params.grid_max()};
  std::vector<GridState> res_stack;

  for (const auto& l : model.layers) {
    switch (l.kind) {
      case LayerKind::Conv1d: {
        const int64_t macs = (l.spec.in_channels / l.spec.groups) * l.spec.kernel_size;
        QDense d = lower_dense(l.name, l.param("w"), l.param("b"), cfg, cur, macs);
        d.spec = l.spec;
        cur = grid_of(d);
        qm.items.push_back(QConvItem{std::move(d)});
        break;
      }
      case LayerKind::Dense: {
        QDense d = lower_dense(l.name, l.param("w"), l.param("b"), cfg, cur,
                               l.param("w").dim(1));
        cur = grid_of(d);
        qm.items.push_back(QDenseItem{std::move(d)});
        break;
      }
      case LayerKind::Relu:
        qm.items.push_back(QReluItem{l.name});
        break;
      case LayerKind::ResidualBegin:
        res_stack.push_back(cur);
        qm.items.push_back(QResBeginItem{});
        break;
      case LayerKind::ResidualAdd: {
        if (res_stack.empty())
          throw CompileError("compile: residual_add '" + l.name + "' without begin");
        const GridState skip = res_stack.back();
        res_stack.pop_back();
        const QuantParams ap = cfg.at(l.name).act;
        QResAddItem item;
        item.name = l.name;
        item.out_qmax = ap.grid_max();
        item.out_scale = ap.scale();
        item.main = DyadicScale::from_real(cur.scale / item.out_scale);
        item.skip = DyadicScale::from_real(skip.scale / item.out_scale);
        cur = {item.out_scale, item.out_qmax};
        qm.items.push_back(std::move(item));
        break;
      }
      case LayerKind::Sigmoid: {
        QSigmoidItem item{l.name, IExpParams::make(cur.scale), cur.scale};
        cur = {kUnitGridScale, kUnitGridMax};
        qm.items.push_back(std::move(item));
        break;
      }
      case LayerKind::Softmax: {
        QSoftmaxItem item{l.name, IExpParams::make(cur.scale), cur.scale};
        cur = {kUnitGridScale, kUnitGridMax};
        qm.items.push_back(std::move(item));
        break;
      }
      case LayerKind::Swish: {
        const QuantParams ap = cfg.at(l.name).act;
        QSwishItem item;
        item.name = l.name;
        item.exp = IExpParams::make(cur.scale);
        item.in_scale = cur.scale;
        item.out_scale = ap.scale();
        item.out_qmax = ap.grid_max();
        item.requant = DyadicScale::from_real(
            cur.scale / static_cast<double>(kSwishGridDiv) / item.out_scale);
        cur = {item.out_scale, item.out_qmax};
        qm.items.push_back(std::move(item));
        break;
      }
      case LayerKind::Attention: {
        QAttentionItem a;
        a.name = l.name;
        const int64_t c = l.param("wq").dim(1);
        a.q = lower_dense(l.name + ".q", l.param("wq"), l.param("bq"), cfg, cur, c);
        a.k = lower_dense(l.name + ".k", l.param("wk"), l.param("bk"), cfg, cur, c);
        a.v = lower_dense(l.name + ".v", l.param("wv"), l.param("bv"), cfg, cur, c);

        const QuantParams sp = cfg.at(l.name + ".scores").act;
        a.scores_scale = sp.scale();
        a.scores_qmax = sp.grid_max();
        if (c * a.q.out_qmax * a.k.out_qmax >= kAccLimit)
          throw CompileError("site '" + l.name + ".scores': accumulator headroom exceeded");
        a.scores_requant = DyadicScale::from_real(
            a.q.out_scale * a.k.out_scale / std::sqrt(static_cast<double>(c)) /
            a.scores_scale);
        a.softmax_exp = IExpParams::make(a.scores_scale);

        const QuantParams cp = cfg.at(l.name + ".ctx").act;
        a.ctx_scale = cp.scale();
        a.ctx_qmax = cp.grid_max();
        if (model.frames * kUnitGridMax * a.v.out_qmax >= kAccLimit)
          throw CompileError("site '" + l.name + ".ctx': accumulator headroom exceeded");
        a.ctx_requant =
            DyadicScale::from_real(kUnitGridScale * a.v.out_scale / a.ctx_scale);

        a.out = lower_dense(l.name + ".out", l.param("wo"), l.param("bo"), cfg,
                            {a.ctx_scale, a.ctx_qmax}, c);
        a.h1 = lower_dense(l.name + ".h1", l.param("w1"), l.param("b1"), cfg,
                           grid_of(a.out), c);

        const QuantParams wp = cfg.at(l.name + ".swish").act;
        a.swish_scale = wp.scale();
        a.swish_qmax = wp.grid_max();
        a.swish_exp = IExpParams::make(a.h1.out_scale);
        a.swish_requant = DyadicScale::from_real(
            a.h1.out_scale / static_cast<double>(kSwishGridDiv) / a.swish_scale);

        a.h2 = lower_dense(l.name, l.param("w2"), l.param("b2"), cfg,
                           {a.swish_scale, a.swish_qmax}, l.param("w2").dim(1));
        cur = grid_of(a.h2);
        qm.items.push_back(std::move(a));
        break;
      }
      case LayerKind::BatchNorm:
        throw CompileError("compile: unexpected batchnorm layer");
    }
  }
  qm.output_scale = cur.scale;
  return qm;
}

// ---------------------------------------------------------------------------
// Integer kernels
// ---------------------------------------------------------------------------

namespace {

int64_t clamp_sym(int64_t v, int64_t qmax) { return std::clamp(v, -qmax, qmax); }

Tensor promote_bct_int(const Tensor& x, const char* who) {
  if (!x.is_int()) throw ShapeError(std::string(who) + ": expected an integer tensor");
  if (x.rank() == 2) return x.reshaped({1, x.dim(0), x.dim(1)});
  if (x.rank() == 3) return x;
  throw ShapeError(std::string(who) + ": expected (C,T) or (B,C,T)");
}

}  // namespace

Tensor conv1d_int(const Tensor& q_x, const QDense& site) {
  const Tensor x = promote_bct_int(q_x, "conv1d_int");
  const ConvSpec& sp = site.spec;
  const int64_t B = x.dim(0), T = x.dim(2);
  if (x.dim(1) != sp.in_channels)
    throw ShapeError("conv1d_int: channel mismatch at '" + site.name + "'");
  if (site.bias.numel() != sp.out_channels)
    throw ShapeError("conv1d_int: bias size mismatch at '" + site.name + "'");
  const int64_t cout = sp.out_channels, cin_g = sp.in_channels / sp.groups;
  const int64_t cout_g = cout / sp.groups, k = sp.kernel_size;
  const int64_t to = sp.out_len(T);

  Tensor out = Tensor::zeros({B, cout, to}, DType::Int32);
  auto& y = out.i32();
  const auto& xv = x.i32();
  const auto& bias = site.bias.i32();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oc = 0; oc < cout; ++oc) {
      const int64_t ci0 = (oc / cout_g) * cin_g;
      for (int64_t ot = 0; ot < to; ++ot) {
        int64_t acc = bias[oc];
        const int64_t t0 = ot * sp.stride - sp.padding;
        for (int64_t ci = 0; ci < cin_g; ++ci)
          for (int64_t kk = 0; kk < k; ++kk) {
            const int64_t t = t0 + kk * sp.dilation;
            if (t >= 0 && t < T)
              acc += int_at(site.weight, (oc * cin_g + ci) * k + kk) *
                     static_cast<int64_t>(xv[(b * sp.in_channels + ci0 + ci) * T + t]);
          }
        y[(b * cout + oc) * to + ot] =
            static_cast<int32_t>(clamp_sym(site.requant.apply(acc), site.out_qmax));
      }
    }
  return q_x.rank() == 2 ? out.reshaped({cout, to}) : out;
}

Tensor matmul_int(const Tensor& a, const Tensor& b_t, const Tensor& bias,
                  const DyadicScale& requant, int64_t out_qmax) {
  if (a.rank() != 2 || b_t.rank() != 2 || a.dim(1) != b_t.dim(1))
    throw ShapeError("matmul_int: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b_t.shape()) + "^T");
  const int64_t m = a.dim(0), k = a.dim(1), n = b_t.dim(0);
  const bool has_bias = bias.numel() > 0;
  if (has_bias && bias.numel() != n)
    throw ShapeError("matmul_int: bias size does not match output columns");
  Tensor out = Tensor::zeros({m, n}, DType::Int32);
  auto& y = out.i32();
  const auto& av = a.i32();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      int64_t acc = has_bias ? static_cast<int64_t>(bias.i32()[j]) : 0;
      for (int64_t kk = 0; kk < k; ++kk)
        acc += static_cast<int64_t>(av[i * k + kk]) * int_at(b_t, j * k + kk);
      y[i * n + j] = static_cast<int32_t>(clamp_sym(requant.apply(acc), out_qmax));
    }
  return out;
}

Tensor relu_int(const Tensor& q) {
  if (!q.is_int()) throw ShapeError("relu_int: expected an integer tensor");
  Tensor out = q;
  if (q.dtype() == DType::Int32) {
    for (auto& v : out.i32()) v = std::max(v, 0);
  } else {
    for (auto& v : out.i8()) v = std::max<int8_t>(v, 0);
  }
  return out;
}

Tensor add_int(const Tensor& q_main, const DyadicScale& main, const Tensor& q_skip,
               const DyadicScale& skip, int64_t out_qmax) {
  if (q_main.shape() != q_skip.shape())
    throw ShapeError("add_int: operand shapes differ");
  Tensor out = Tensor::zeros(q_main.shape(), DType::Int32);
  auto& y = out.i32();
  for (int64_t i = 0; i < q_main.numel(); ++i) {
    const int64_t a = main.apply(int_at(q_main, i));
    const int64_t b = skip.apply(int_at(q_skip, i));
    y[i] = static_cast<int32_t>(clamp_sym(a + b, out_qmax));
  }
  return out;
}

std::pair<Tensor, double> iexp(const Tensor& q, double scale) {
  const IExpParams p = IExpParams::make(scale);
  Tensor out = Tensor::zeros(q.shape(), DType::Int32);
  auto& y = out.i32();
  for (int64_t i = 0; i < q.numel(); ++i)
    y[i] = static_cast<int32_t>(p.exp_int(int_at(q, i)));
  return {std::move(out), p.out_scale};
}

std::pair<Tensor, double> isoftmax(const Tensor& q, double scale) {
  if (q.rank() < 1) throw ShapeError("isoftmax: rank-0 tensor");
  const IExpParams p = IExpParams::make(scale);
  const int64_t n = q.dim(q.rank() - 1);
  const int64_t rows = q.numel() / n;
  Tensor out = Tensor::zeros(q.shape(), DType::Int32);
  auto& y = out.i32();
  std::vector<int64_t> e(n);
  for (int64_t r = 0; r < rows; ++r) {
    int64_t mx = int_at(q, r * n);
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, int_at(q, r * n + i));
    int64_t sum = 0;
    for (int64_t i = 0; i < n; ++i) {
      e[i] = p.exp_int(int_at(q, r * n + i) - mx);
      sum += e[i];
    }
    for (int64_t i = 0; i < n; ++i)
      y[r * n + i] = static_cast<int32_t>(
          std::min<int64_t>(kUnitGridMax, round_div_pos(kUnitGridMax * e[i], sum)));
  }
  return {std::move(out), kUnitGridScale};
}

std::pair<Tensor, double> isigmoid(const Tensor& q, double scale) {
  const IExpParams p = IExpParams::make(scale);
  Tensor out = Tensor::zeros(q.shape(), DType::Int32);
  auto& y = out.i32();
  for (int64_t i = 0; i < q.numel(); ++i) {
    const int64_t v = int_at(q, i);
    y[i] = static_cast<int32_t>(v <= 0 ? p.sigmoid_neg_int(v)
                                       : kUnitGridMax - p.sigmoid_neg_int(-v));
  }
  return {std::move(out), kUnitGridScale};
}

std::pair<Tensor, double> iswish(const Tensor& q, double scale) {
  const IExpParams p = IExpParams::make(scale);
  Tensor res = Tensor::zeros(q.shape(), DType::Int32);
  auto& y = res.i32();
  for (int64_t i = 0; i < q.numel(); ++i)
    y[i] = static_cast<int32_t>(p.swish_units_int(int_at(q, i)));
  return {std::move(res), scale / static_cast<double>(kSwishGridDiv)};
}

// ---------------------------------------------------------------------------
// Integer executor
// ---------------------------------------------------------------------------

namespace {

Tensor transpose_int2d(const Tensor& x) {
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({c, r}, DType::Int32);
  auto& y = out.i32();
  const auto& v = x.i32();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) y[j * r + i] = v[i * c + j];
  return out;
}

Tensor slice_batch_int(const Tensor& x, int64_t b) {
  const int64_t c = x.dim(1), t = x.dim(2);
  Tensor out = Tensor::zeros({c, t}, DType::Int32);
  std::copy_n(x.i32().begin() + b * c * t, c * t, out.i32().begin());
  return out;
}

Tensor stack_int(const std::vector<Tensor>& slices) {
  Shape s{static_cast<int64_t>(slices.size())};
  s.insert(s.end(), slices.front().shape().begin(), slices.front().shape().end());
  Tensor out = Tensor::zeros(s, DType::Int32);
  const int64_t n = slices.front().numel();
  for (size_t b = 0; b < slices.size(); ++b)
    std::copy_n(slices[b].i32().begin(), n, out.i32().begin() + b * n);
  return out;
}

Tensor sigmoid_map_int(const Tensor& q, const IExpParams& p) {
  Tensor out = Tensor::zeros(q.shape(), DType::Int32);
  auto& y = out.i32();
  const auto& v = q.i32();
  for (size_t i = 0; i < v.size(); ++i)
    y[i] = static_cast<int32_t>(v[i] <= 0 ? p.sigmoid_neg_int(v[i])
                                          : kUnitGridMax - p.sigmoid_neg_int(-v[i]));
  return out;
}

Tensor softmax_rows_int(const Tensor& q, const IExpParams& p) {
  const int64_t n = q.dim(q.rank() - 1);
  const int64_t rows = q.numel() / n;
  Tensor out = Tensor::zeros(q.shape(), DType::Int32);
  auto& y = out.i32();
  const auto& v = q.i32();
  std::vector<int64_t> e(n);
  for (int64_t r = 0; r < rows; ++r) {
    int64_t mx = v[r * n];
    for (int64_t i = 1; i < n; ++i) mx = std::max<int64_t>(mx, v[r * n + i]);
    int64_t sum = 0;
    for (int64_t i = 0; i < n; ++i) {
      e[i] = p.exp_int(v[r * n + i] - mx);
      sum += e[i];
    }
    for (int64_t i = 0; i < n; ++i)
      y[r * n + i] = static_cast<int32_t>(
          std::min<int64_t>(kUnitGridMax, round_div_pos(kUnitGridMax * e[i], sum)));
  }
  return out;
}

Tensor swish_map_int(const Tensor& q, const QSwishItem& it) {
  Tensor out = Tensor::zeros(q.shape(), DType::Int32);
  auto& y = out.i32();
  const auto& v = q.i32();
  for (size_t i = 0; i < v.size(); ++i)
    y[i] = static_cast<int32_t>(
        clamp_sym(it.requant.apply(it.exp.swish_units_int(v[i])), it.out_qmax));
  return out;
}

void record(RuntimeTrace* tr, const std::string& name, const Tensor& t) {
  if (tr) (*tr)[name] = t;
}

Tensor run_attention_int(const QAttentionItem& a, const Tensor& x, RuntimeTrace* tr) {
  const int64_t B = x.dim(0), T = x.dim(2);
  if (T * kUnitGridMax * a.v.out_qmax >= kAccLimit)
    throw NumericError("attention '" + a.name +
                       "': sequence too long for INT32 context accumulators");
  std::vector<Tensor> outs, tq, tk, tv, tscores, tattn, tctx, tout, th1, tswish;
  const Tensor empty;
  for (int64_t b = 0; b < B; ++b) {
    const Tensor frames = transpose_int2d(slice_batch_int(x, b));  // (T, C)
    const Tensor q = matmul_int(frames, a.q.weight, a.q.bias, a.q.requant, a.q.out_qmax);
    const Tensor k = matmul_int(frames, a.k.weight, a.k.bias, a.k.requant, a.k.out_qmax);
    const Tensor v = matmul_int(frames, a.v.weight, a.v.bias, a.v.requant, a.v.out_qmax);
    const Tensor scores = matmul_int(q, k, empty, a.scores_requant, a.scores_qmax);
    const Tensor attn = softmax_rows_int(scores, a.softmax_exp);
    const Tensor ctx =
        matmul_int(attn, transpose_int2d(v), empty, a.ctx_requant, a.ctx_qmax);
    const Tensor proj = matmul_int(ctx, a.out.weight, a.out.bias, a.out.requant,
                                   a.out.out_qmax);
    const Tensor h1 = matmul_int(proj, a.h1.weight, a.h1.bias, a.h1.requant, a.h1.out_qmax);
    Tensor gated = Tensor::zeros(h1.shape(), DType::Int32);
    {
      auto& y = gated.i32();
      const auto& hv = h1.i32();
      for (size_t i = 0; i < hv.size(); ++i)
        y[i] = static_cast<int32_t>(clamp_sym(
            a.swish_requant.apply(a.swish_exp.swish_units_int(hv[i])), a.swish_qmax));
    }
    const Tensor h2 = matmul_int(gated, a.h2.weight, a.h2.bias, a.h2.requant,
                                 a.h2.out_qmax);
    outs.push_back(transpose_int2d(h2));
    if (tr) {
      tq.push_back(q); tk.push_back(k); tv.push_back(v);
      tscores.push_back(scores); tattn.push_back(attn); tctx.push_back(ctx);
      tout.push_back(proj); th1.push_back(h1); tswish.push_back(gated);
    }
  }
  if (tr) {
    record(tr, a.name + ".q", stack_int(tq));
    record(tr, a.name + ".k", stack_int(tk));
    record(tr, a.name + ".v", stack_int(tv));
    record(tr, a.name + ".scores", stack_int(tscores));
    record(tr, a.name + ".attn", stack_int(tattn));
    record(tr, a.name + ".ctx", stack_int(tctx));
    record(tr, a.name + ".out", stack_int(tout));
    record(tr, a.name + ".h1", stack_int(th1));
    record(tr, a.name + ".swish", stack_int(tswish));
  }
  return stack_int(outs);
}

Tensor dense_int_bct(const Tensor& x, const QDense& d) {
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  const int64_t O = d.weight.dim(0);
  if (d.weight.dim(1) != C)
    throw ShapeError("dense_int: channel mismatch at '" + d.name + "'");
  Tensor out = Tensor::zeros({B, O, T}, DType::Int32);
  auto& y = out.i32();
  const auto& xv = x.i32();
  const auto& bias = d.bias.i32();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t t = 0; t < T; ++t) {
        int64_t acc = bias[o];
        for (int64_t c = 0; c < C; ++c)
          acc += int_at(d.weight, o * C + c) * static_cast<int64_t>(xv[(b * C + c) * T + t]);
        y[(b * O + o) * T + t] =
            static_cast<int32_t>(clamp_sym(d.requant.apply(acc), d.out_qmax));
      }
  return out;
}

}  // namespace

IntForwardResult forward_int(const QuantizedModel& qm, const Tensor& input,
                             bool want_trace) {
  bool was_2d = false;
  Tensor x = input;
  if (x.rank() == 2) {
    was_2d = true;
    x = x.reshaped({1, x.dim(0), x.dim(1)});
  }
  if (x.rank() != 3 || x.dim(1) != qm.mel_bins)
    throw ShapeError("forward_int: input shape " + shape_str(input.shape()) +
                     " does not match (" + std::to_string(qm.mel_bins) + ", T)");

  IntForwardResult res;
  RuntimeTrace* tr = want_trace ? &res.trace : nullptr;
  Tensor q = quantize(x, qm.input_params);  // the one float op at the input boundary
  {
    IntegerPurityGuard guard;
    std::vector<Tensor> res_stack;
    for (const auto& item : qm.items) {
      std::visit(
          [&](const auto& it) {
            using T = std::decay_t<decltype(it)>;
            if constexpr (std::is_same_v<T, QConvItem>) {
              q = conv1d_int(q, it.d);
              record(tr, it.d.name, q);
            } else if constexpr (std::is_same_v<T, QDenseItem>) {
              q = dense_int_bct(q, it.d);
              record(tr, it.d.name, q);
            } else if constexpr (std::is_same_v<T, QReluItem>) {
              q = relu_int(q);
              record(tr, it.name, q);
            } else if constexpr (std::is_same_v<T, QResBeginItem>) {
              res_stack.push_back(q);
            } else if constexpr (std::is_same_v<T, QResAddItem>) {
              if (res_stack.empty())
                throw NumericError("forward_int: residual stack underflow");
              Tensor skip = res_stack.back();
              res_stack.pop_back();
              q = add_int(q, it.main, skip, it.skip, it.out_qmax);
              record(tr, it.name, q);
            } else if constexpr (std::is_same_v<T, QSigmoidItem>) {
              q = sigmoid_map_int(q, it.exp);
              record(tr, it.name, q);
            } else if constexpr (std::is_same_v<T, QSoftmaxItem>) {
              q = softmax_rows_int(q, it.exp);
              record(tr, it.name, q);
            } else if constexpr (std::is_same_v<T, QSwishItem>) {
              q = swish_map_int(q, it);
              record(tr, it.name, q);
            } else if constexpr (std::is_same_v<T, QAttentionItem>) {
              q = run_attention_int(it, q, tr);
              record(tr, it.name, q);
            }
          },
          item);
    }
  }
  // output boundary dequantization
  Tensor logits = Tensor::zeros(q.shape(), DType::Real32);
  for (int64_t i = 0; i < q.numel(); ++i)
    logits.f32()[i] = static_cast<float>(qm.output_scale * static_cast<double>(q.i32()[i]));
  if (was_2d && logits.rank() == 3)
    logits = logits.reshaped({logits.dim(1), logits.dim(2)});
  res.logits = std::move(logits);
  return res;
}

// ---------------------------------------------------------------------------
// Simulated-quantization executor
// ---------------------------------------------------------------------------

namespace {

// grid index of a real value: the values sim carries are exact grid multiples
int64_t sim_index(double value, double scale) {
  return static_cast<int64_t>(round_half_even(value / scale));
}

Tensor sim_trace_tensor(const Tensor& vals, double scale) {
  Tensor out = Tensor::zeros(vals.shape(), DType::Int32);
  const auto& v = vals.f64();
  for (size_t i = 0; i < v.size(); ++i)
    out.i32()[i] = static_cast<int32_t>(sim_index(v[i], scale));
  return out;
}

// fake-quantize a raw real tensor onto a symmetric grid
Tensor sim_regrid(const Tensor& raw, double scale, int64_t qmax) {
  Tensor out = raw;
  for (auto& v : out.f64()) {
    const int64_t g = clamp_sym(static_cast<int64_t>(round_half_even(v / scale)), qmax);
    v = scale * static_cast<double>(g);
  }
  return out;
}

Tensor sim_dense_weights(const QDense& d) {
  Tensor w = Tensor::zeros(d.weight.shape(), DType::Real64);
  for (int64_t i = 0; i < d.weight.numel(); ++i)
    w.f64()[i] = d.w_scale * static_cast<double>(int_at(d.weight, i));
  return w;
}

Tensor sim_dense_bias(const QDense& d) {
  Tensor b = Tensor::zeros(d.bias.shape(), DType::Real64);
  const double s = d.w_scale * d.in_scale;
  for (int64_t i = 0; i < d.bias.numel(); ++i)
    b.f64()[i] = s * static_cast<double>(d.bias.i32()[i]);
  return b;
}

Tensor sim_frame_dense(const Tensor& x_tc, const QDense& d) {
  Tensor raw = matmul_f(x_tc, [&] {
    Tensor wt = sim_dense_weights(d);
    const int64_t o = wt.dim(0), c = wt.dim(1);
    Tensor t = Tensor::zeros({c, o}, DType::Real64);
    for (int64_t i = 0; i < o; ++i)
      for (int64_t j = 0; j < c; ++j) t.f64()[j * o + i] = wt.f64()[i * c + j];
    return t;
  }());
  const Tensor bias = sim_dense_bias(d);
  const int64_t t = raw.dim(0), o = raw.dim(1);
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < o; ++j) raw.f64()[i * o + j] += bias.f64()[j];
  return sim_regrid(raw, d.out_scale, d.out_qmax);
}

Tensor sim_sigmoid_map(const Tensor& x, const IExpParams& p) {
  Tensor out = x;
  for (auto& v : out.f64()) {
    const double o = v <= 0 ? p.sigmoid_neg_sim(v)
                            : static_cast<double>(kUnitGridMax) - p.sigmoid_neg_sim(-v);
    v = o * kUnitGridScale;
  }
  return out;
}

Tensor sim_softmax_rows(const Tensor& x, const IExpParams& p) {
  const int64_t n = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / n;
  Tensor out = x;
  auto& v = out.f64();
  std::vector<double> e(n);
  for (int64_t r = 0; r < rows; ++r) {
    double mx = v[r * n];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, v[r * n + i]);
    double sum = 0;
    for (int64_t i = 0; i < n; ++i) {
      e[i] = p.exp_sim(v[r * n + i] - mx);
      sum += e[i];
    }
    for (int64_t i = 0; i < n; ++i) {
      const double o =
          std::min(static_cast<double>(kUnitGridMax),
                   std::floor((kUnitGridMax * e[i]) / sum + 0.5));
      v[r * n + i] = o * kUnitGridScale;
    }
  }
  return out;
}

Tensor sim_slice(const Tensor& x, int64_t b) {
  const int64_t c = x.dim(1), t = x.dim(2);
  Tensor out = Tensor::zeros({c, t}, DType::Real64);
  std::copy_n(x.f64().begin() + b * c * t, c * t, out.f64().begin());
  return out;
}

Tensor sim_transpose(const Tensor& x) {
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({c, r}, DType::Real64);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.f64()[j * r + i] = x.f64()[i * c + j];
  return out;
}

Tensor sim_stack(const std::vector<Tensor>& slices) {
  Shape s{static_cast<int64_t>(slices.size())};
  s.insert(s.end(), slices.front().shape().begin(), slices.front().shape().end());
  Tensor out = Tensor::zeros(s, DType::Real64);
  const int64_t n = slices.front().numel();
  for (size_t b = 0; b < slices.size(); ++b)
    std::copy_n(slices[b].f64().begin(), n, out.f64().begin() + b * n);
  return out;
}

void sim_record(RuntimeTrace* tr, const std::string& name, const Tensor& vals,
                double scale) {
  if (tr) (*tr)[name] = sim_trace_tensor(vals, scale);
}

Tensor sim_attention(const QAttentionItem& a, const Tensor& x, RuntimeTrace* tr) {
  const int64_t B = x.dim(0);
  const int64_t c = a.q.weight.dim(1);
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  std::vector<Tensor> outs, tq, tk, tv, tscores, tattn, tctx, tout, th1, tswish;
  for (int64_t b = 0; b < B; ++b) {
    const Tensor frames = sim_transpose(sim_slice(x, b));
    const Tensor q = sim_frame_dense(frames, a.q);
    const Tensor k = sim_frame_dense(frames, a.k);
    const Tensor v = sim_frame_dense(frames, a.v);
    Tensor scores_raw = matmul_f(q, sim_transpose(k));
    for (auto& s : scores_raw.f64()) s *= inv_sqrt_c;
    const Tensor scores = sim_regrid(scores_raw, a.scores_scale, a.scores_qmax);
    const Tensor attn = sim_softmax_rows(scores, a.softmax_exp);
    Tensor ctx_raw = matmul_f(attn, v);
    const Tensor ctx = sim_regrid(ctx_raw, a.ctx_scale, a.ctx_qmax);
    const Tensor proj = sim_frame_dense(ctx, a.out);
    const Tensor h1 = sim_frame_dense(proj, a.h1);
    Tensor gated = h1;
    for (auto& hv : gated.f64())
      hv = a.swish_exp.swish_units_sim(hv) * a.h1.out_scale /
           static_cast<double>(kSwishGridDiv);
    gated = sim_regrid(gated, a.swish_scale, a.swish_qmax);
    const Tensor h2 = sim_frame_dense(gated, a.h2);
    outs.push_back(sim_transpose(h2));
    if (tr) {
      tq.push_back(q); tk.push_back(k); tv.push_back(v);
      tscores.push_back(scores); tattn.push_back(attn); tctx.push_back(ctx);
      tout.push_back(proj); th1.push_back(h1); tswish.push_back(gated);
    }
  }
  if (tr) {
    sim_record(tr, a.name + ".q", sim_stack(tq), a.q.out_scale);
    sim_record(tr, a.name + ".k", sim_stack(tk), a.k.out_scale);
    sim_record(tr, a.name + ".v", sim_stack(tv), a.v.out_scale);
    sim_record(tr, a.name + ".scores", sim_stack(tscores), a.scores_scale);
    sim_record(tr, a.name + ".attn", sim_stack(tattn), kUnitGridScale);
    sim_record(tr, a.name + ".ctx", sim_stack(tctx), a.ctx_scale);
    sim_record(tr, a.name + ".out", sim_stack(tout), a.out.out_scale);
    sim_record(tr, a.name + ".h1", sim_stack(th1), a.h1.out_scale);
    sim_record(tr, a.name + ".swish", sim_stack(tswish), a.swish_scale);
  }
  return sim_stack(outs);
}

}  // namespace

SimForwardResult forward_sim(const QuantizedModel& qm, const Tensor& input,
                             bool want_trace) {
  bool was_2d = false;
  Tensor x0 = input;
  if (x0.rank() == 2) {
    was_2d = true;
    x0 = x0.reshaped({1, x0.dim(0), x0.dim(1)});
  }
  if (x0.rank() != 3 || x0.dim(1) != qm.mel_bins)
    throw ShapeError("forward_sim: input shape " + shape_str(input.shape()) +
                     " does not match (" + std::to_string(qm.mel_bins) + ", T)");

  SimForwardResult res;
  RuntimeTrace* tr = want_trace ? &res.trace : nullptr;
  // fake-quantize the input exactly as forward_int's boundary does
  Tensor x = fake_quantize(x0, qm.input_params);
  double cur_scale = qm.input_params.scale();
  std::vector<std::pair<Tensor, double>> res_stack;

  for (const auto& item : qm.items) {
    std::visit(
        [&](const auto& it) {
          using T = std::decay_t<decltype(it)>;
          if constexpr (std::is_same_v<T, QConvItem>) {
            Tensor raw = conv1d_f(x, sim_dense_weights(it.d), sim_dense_bias(it.d),
                                  it.d.spec);
            x = sim_regrid(raw, it.d.out_scale, it.d.out_qmax);
            cur_scale = it.d.out_scale;
            sim_record(tr, it.d.name, x, cur_scale);
          } else if constexpr (std::is_same_v<T, QDenseItem>) {
            Tensor raw = dense_f(x, sim_dense_weights(it.d), sim_dense_bias(it.d));
            x = sim_regrid(raw, it.d.out_scale, it.d.out_qmax);
            cur_scale = it.d.out_scale;
            sim_record(tr, it.d.name, x, cur_scale);
          } else if constexpr (std::is_same_v<T, QReluItem>) {
            x = relu_f(x);
            sim_record(tr, it.name, x, cur_scale);
          } else if constexpr (std::is_same_v<T, QResBeginItem>) {
            res_stack.emplace_back(x, cur_scale);
          } else if constexpr (std::is_same_v<T, QResAddItem>) {
            auto [skip, skip_scale] = res_stack.back();
            res_stack.pop_back();
            (void)skip_scale;
            Tensor out = x;
            auto& ov = out.f64();
            const auto& sv = skip.f64();
            for (size_t i = 0; i < ov.size(); ++i) {
              const int64_t ga = sim_index(ov[i], it.out_scale);
              const int64_t gb = sim_index(sv[i], it.out_scale);
              ov[i] = it.out_scale *
                      static_cast<double>(clamp_sym(ga + gb, it.out_qmax));
            }
            x = std::move(out);
            cur_scale = it.out_scale;
            sim_record(tr, it.name, x, cur_scale);
          } else if constexpr (std::is_same_v<T, QSigmoidItem>) {
            x = sim_sigmoid_map(x, it.exp);
            cur_scale = kUnitGridScale;
            sim_record(tr, it.name, x, cur_scale);
          } else if constexpr (std::is_same_v<T, QSoftmaxItem>) {
            x = sim_softmax_rows(x, it.exp);
            cur_scale = kUnitGridScale;
            sim_record(tr, it.name, x, cur_scale);
          } else if constexpr (std::is_same_v<T, QSwishItem>) {
            Tensor out = x;
            for (auto& v : out.f64())
              v = it.exp.swish_units_sim(v) * it.in_scale /
                  static_cast<double>(kSwishGridDiv);
            x = sim_regrid(out, it.out_scale, it.out_qmax);
            cur_scale = it.out_scale;
            sim_record(tr, it.name, x, cur_scale);
          } else if constexpr (std::is_same_v<T, QAttentionItem>) {
            x = sim_attention(it, x, tr);
            cur_scale = it.h2.out_scale;
            sim_record(tr, it.name, x, cur_scale);
          }
        },
        item);
  }

  Tensor logits = x.to_f32();
  if (was_2d && logits.rank() == 3)
    logits = logits.reshaped({logits.dim(1), logits.dim(2)});
  res.logits = std::move(logits);
  return res;
}

Tensor forward_sim(const ModelGraph& folded_model, const QuantConfig& config,
                   const Tensor& input) {
  return forward_sim(compile(folded_model, config), input).logits;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json dyadic_to_json(const DyadicScale& d) {
  return {{"mult", d.mult}, {"shift", d.shift}};
}

DyadicScale dyadic_from_json(const nlohmann::json& j) {
  DyadicScale d;
  d.mult = j.at("mult");
  d.shift = j.at("shift");
  return d;
}

nlohmann::json iexp_to_json(const IExpParams& p) {
  return {{"pre_shift", p.pre_shift}, {"q_ln2", p.q_ln2},   {"q_bias", p.q_bias},
          {"q_const", p.q_const},     {"one", p.one},       {"fine_scale", p.fine_scale},
          {"out_scale", p.out_scale}};
}

IExpParams iexp_from_json(const nlohmann::json& j) {
  IExpParams p;
  p.pre_shift = j.at("pre_shift");
  p.q_ln2 = j.at("q_ln2");
  p.q_bias = j.at("q_bias");
  p.q_const = j.at("q_const");
  p.one = j.at("one");
  p.fine_scale = j.at("fine_scale");
  p.out_scale = j.at("out_scale");
  return p;
}

nlohmann::json dense_to_json(const QDense& d, std::string& blob, bool with_spec) {
  nlohmann::json j;
  j["name"] = d.name;
  if (with_spec)
    j["spec"] = {{"in", d.spec.in_channels}, {"out", d.spec.out_channels},
                 {"k", d.spec.kernel_size},  {"stride", d.spec.stride},
                 {"pad", d.spec.padding},    {"dil", d.spec.dilation},
                 {"groups", d.spec.groups}};
  j["tensors"] = {blob_append_tensor(blob, "w", d.weight),
                  blob_append_tensor(blob, "b", d.bias)};
  j["requant"] = dyadic_to_json(d.requant);
  j["out_qmax"] = d.out_qmax;
  j["in_scale"] = d.in_scale;
  j["w_scale"] = d.w_scale;
  j["out_scale"] = d.out_scale;
  return j;
}

QDense dense_from_json(const nlohmann::json& j, const std::string& blob) {
  QDense d;
  d.name = j.at("name");
  if (j.contains("spec")) {
    const auto& s = j["spec"];
    d.spec = ConvSpec{s.at("in"), s.at("out"), s.at("k"),      s.at("stride"),
                      s.at("pad"), s.at("dil"), s.at("groups")};
  }
  d.weight = blob_read_tensor(j.at("tensors").at(0), blob);
  d.bias = blob_read_tensor(j.at("tensors").at(1), blob);
  d.requant = dyadic_from_json(j.at("requant"));
  d.out_qmax = j.at("out_qmax");
  d.in_scale = j.at("in_scale");
  d.w_scale = j.at("w_scale");
  d.out_scale = j.at("out_scale");
  return d;
}

}  // namespace

void save_quantized(const QuantizedModel& qm, const std::string& path) {
  nlohmann::json header;
  header["kind"] = "quantized_model";
  header["input_shape"] = {qm.mel_bins, qm.frames};
  header["weight_bits"] = qm.weight_bits;
  header["act_bits"] = qm.act_bits;
  header["input"] = {{"bits", qm.input_params.bits}, {"alpha", qm.input_params.alpha}};
  header["output_scale"] = qm.output_scale;
  header["metadata"] = qm.metadata;
  std::string blob;
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : qm.items) {
    nlohmann::json j;
    std::visit(
        [&](const auto& it) {
          using T = std::decay_t<decltype(it)>;
          if constexpr (std::is_same_v<T, QConvItem>) {
            j["op"] = "conv";
            j["site"] = dense_to_json(it.d, blob, true);
          } else if constexpr (std::is_same_v<T, QDenseItem>) {
            j["op"] = "dense";
            j["site"] = dense_to_json(it.d, blob, false);
          } else if constexpr (std::is_same_v<T, QReluItem>) {
            j["op"] = "relu";
            j["name"] = it.name;
          } else if constexpr (std::is_same_v<T, QResBeginItem>) {
            j["op"] = "res_begin";
          } else if constexpr (std::is_same_v<T, QResAddItem>) {
            j["op"] = "res_add";
            j["name"] = it.name;
            j["main"] = dyadic_to_json(it.main);
            j["skip"] = dyadic_to_json(it.skip);
            j["out_qmax"] = it.out_qmax;
            j["out_scale"] = it.out_scale;
          } else if constexpr (std::is_same_v<T, QSigmoidItem>) {
            j["op"] = "sigmoid";
            j["name"] = it.name;
            j["exp"] = iexp_to_json(it.exp);
            j["in_scale"] = it.in_scale;
          } else if constexpr (std::is_same_v<T, QSoftmaxItem>) {
            j["op"] = "softmax";
            j["name"] = it.name;
            j["exp"] = iexp_to_json(it.exp);
            j["in_scale"] = it.in_scale;
          } else if constexpr (std::is_same_v<T, QSwishItem>) {
            j["op"] = "swish";
            j["name"] = it.name;
            j["exp"] = iexp_to_json(it.exp);
            j["requant"] = dyadic_to_json(it.requant);
            j["out_qmax"] = it.out_qmax;
            j["in_scale"] = it.in_scale;
            j["out_scale"] = it.out_scale;
          } else if constexpr (std::is_same_v<T, QAttentionItem>) {
            j["op"] = "attention";
            j["name"] = it.name;
            j["q"] = dense_to_json(it.q, blob, false);
            j["k"] = dense_to_json(it.k, blob, false);
            j["v"] = dense_to_json(it.v, blob, false);
            j["out"] = dense_to_json(it.out, blob, false);
            j["h1"] = dense_to_json(it.h1, blob, false);
            j["h2"] = dense_to_json(it.h2, blob, false);
            j["scores_requant"] = dyadic_to_json(it.scores_requant);
            j["scores_qmax"] = it.scores_qmax;
            j["scores_scale"] = it.scores_scale;
            j["softmax_exp"] = iexp_to_json(it.softmax_exp);
            j["ctx_requant"] = dyadic_to_json(it.ctx_requant);
            j["ctx_qmax"] = it.ctx_qmax;
            j["ctx_scale"] = it.ctx_scale;
            j["swish_exp"] = iexp_to_json(it.swish_exp);
            j["swish_requant"] = dyadic_to_json(it.swish_requant);
            j["swish_qmax"] = it.swish_qmax;
            j["swish_scale"] = it.swish_scale;
          }
        },
        item);
    items.push_back(std::move(j));
  }
  header["items"] = std::move(items);
  aqm_write(path, header, blob);
}

QuantizedModel load_quantized(const std::string& path) {
  auto [header, blob] = aqm_read(path);
  try {
    if (header.at("kind") != "quantized_model")
      throw FormatError("'" + path + "' does not hold a quantized model");
    QuantizedModel qm;
    qm.mel_bins = header.at("input_shape").at(0);
    qm.frames = header.at("input_shape").at(1);
    qm.weight_bits = header.at("weight_bits");
    qm.act_bits = header.at("act_bits");
    qm.input_params = QuantParams{header.at("input").at("bits").get<int>(),
                                  header.at("input").at("alpha").get<double>()};
    qm.output_scale = header.at("output_scale");
    if (header.contains("metadata"))
      qm.metadata = header["metadata"].get<std::map<std::string, std::string>>();
    for (const auto& j : header.at("items")) {
      const std::string op = j.at("op");
      if (op == "conv") {
        qm.items.push_back(QConvItem{dense_from_json(j.at("site"), blob)});
      } else if (op == "dense") {
        qm.items.push_back(QDenseItem{dense_from_json(j.at("site"), blob)});
      } else if (op == "relu") {
        qm.items.push_back(QReluItem{j.at("name")});
      } else if (op == "res_begin") {
        qm.items.push_back(QResBeginItem{});
      } else if (op == "res_add") {
        QResAddItem it;
        it.name = j.at("name");
        it.main = dyadic_from_json(j.at("main"));
        it.skip = dyadic_from_json(j.at("skip"));
        it.out_qmax = j.at("out_qmax");
        it.out_scale = j.at("out_scale");
        qm.items.push_back(std::move(it));
      } else if (op == "sigmoid" || op == "softmax") {
        if (op == "sigmoid") {
          QSigmoidItem it{j.at("name"), iexp_from_json(j.at("exp")), j.at("in_scale")};
          qm.items.push_back(std::move(it));
        } else {
          QSoftmaxItem it{j.at("name"), iexp_from_json(j.at("exp")), j.at("in_scale")};
          qm.items.push_back(std::move(it));
        }
      } else if (op == "swish") {
        QSwishItem it;
        it.name = j.at("name");
        it.exp = iexp_from_json(j.at("exp"));
        it.requant = dyadic_from_json(j.at("requant"));
        it.out_qmax = j.at("out_qmax");
        it.in_scale = j.at("in_scale");
        it.out_scale = j.at("out_scale");
        qm.items.push_back(std::move(it));
      } else if (op == "attention") {
        QAttentionItem it;
        it.name = j.at("name");
        it.q = dense_from_json(j.at("q"), blob);
        it.k = dense_from_json(j.at("k"), blob);
        it.v = dense_from_json(j.at("v"), blob);
        it.out = dense_from_json(j.at("out"), blob);
        it.h1 = dense_from_json(j.at("h1"), blob);
        it.h2 = dense_from_json(j.at("h2"), blob);
        it.scores_requant = dyadic_from_json(j.at("scores_requant"));
        it.scores_qmax = j.at("scores_qmax");
        it.scores_scale = j.at("scores_scale");
        it.softmax_exp = iexp_from_json(j.at("softmax_exp"));
        it.ctx_requant = dyadic_from_json(j.at("ctx_requant"));
        it.ctx_qmax = j.at("ctx_qmax");
        it.ctx_scale = j.at("ctx_scale");
        it.swish_exp = iexp_from_json(j.at("swish_exp"));
        it.swish_requant = dyadic_from_json(j.at("swish_requant"));
        it.swish_qmax = j.at("swish_qmax");
        it.swish_scale = j.at("swish_scale");
        qm.items.push_back(std::move(it));
      } else {
        throw FormatError("unknown quantized op '" + op + "'");
      }
    }
    return qm;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': quantized header inconsistent: " + e.what());
  }
}

}  // namespace asrq
