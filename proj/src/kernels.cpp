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

#include "asrq/kernels.hpp"

#include <cmath>

#include "asrq/purity.hpp"

namespace asrq {

namespace {

struct Bct {
  int64_t b, c, t;
  bool batched;
};

Bct as_bct(const Tensor& x, const char* who) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  throw ShapeError(std::string(who) + ": expected (C,T) or (B,C,T), got " +
                   shape_str(x.shape()));
}

Shape out_shape(const Bct& v, int64_t c, int64_t t) {
  return v.batched ? Shape{v.b, c, t} : Shape{c, t};
}

void require_real(const Tensor& x, const char* who) {
  if (!x.is_real())
    throw ShapeError(std::string(who) + ": expected a real tensor, got " +
                     dtype_name(x.dtype()));
}

template <typename T>
const std::vector<T>& vals(const Tensor& x);
template <>
const std::vector<float>& vals<float>(const Tensor& x) { return x.f32(); }
template <>
const std::vector<double>& vals<double>(const Tensor& x) { return x.f64(); }

template <typename T>
std::vector<T>& vals_mut(Tensor& x);
template <>
std::vector<float>& vals_mut<float>(Tensor& x) { return x.f32(); }
template <>
std::vector<double>& vals_mut<double>(Tensor& x) { return x.f64(); }

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::Real32 : DType::Real64;
}

template <typename T>
Tensor conv1d_impl(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   const ConvSpec& spec) {
  const Bct v = as_bct(input, "conv1d");
  const int64_t cin = spec.in_channels, cout = spec.out_channels, k = spec.kernel_size;
  const int64_t cin_g = cin / spec.groups, cout_g = cout / spec.groups;
  if (v.c != cin)
    throw ShapeError("conv1d: input has " + std::to_string(v.c) + " channels, spec wants " +
                     std::to_string(cin));
  if (weight.rank() != 3 || weight.dim(0) != cout || weight.dim(1) != cin_g ||
      weight.dim(2) != k)
    throw ShapeError("conv1d: weight shape " + shape_str(weight.shape()) +
                     " does not match spec (" + std::to_string(cout) + "," +
                     std::to_string(cin_g) + "," + std::to_string(k) + ")");
  const bool has_bias = bias.numel() > 0;
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout))
    throw ShapeError("conv1d: bias shape " + shape_str(bias.shape()));

  const int64_t to = spec.out_len(v.t);
  Tensor out = Tensor::zeros(out_shape(v, cout, to), dtype_of<T>());
  const auto& x = vals<T>(input);
  const auto& w = vals<T>(weight);
  const T* bptr = has_bias ? vals<T>(bias).data() : nullptr;
  auto& y = vals_mut<T>(out);

  for (int64_t b = 0; b < v.b; ++b) {
    for (int64_t oc = 0; oc < cout; ++oc) {
      const int64_t g = oc / cout_g;
      const int64_t ci0 = g * cin_g;
      for (int64_t ot = 0; ot < to; ++ot) {
        double acc = bptr ? static_cast<double>(bptr[oc]) : 0.0;
        const int64_t t0 = ot * spec.stride - spec.padding;
        for (int64_t ci = 0; ci < cin_g; ++ci) {
          const T* xrow = &x[(b * v.c + ci0 + ci) * v.t];
          const T* wrow = &w[(oc * cin_g + ci) * k];
          for (int64_t kk = 0; kk < k; ++kk) {
            const int64_t t = t0 + kk * spec.dilation;
            if (t >= 0 && t < v.t) acc += static_cast<double>(wrow[kk]) * xrow[t];
          }
        }
        y[(b * cout + oc) * to + ot] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

template <typename T>
Tensor batchnorm_impl(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                      const Tensor& rmean, const Tensor& rvar, double eps, BnMode mode,
                      ChannelStats* collected) {
  const Bct v = as_bct(input, "batchnorm");
  const int64_t c = v.c;
  for (const Tensor* p : {&gamma, &beta, &rmean, &rvar})
    if (p->rank() != 1 || p->dim(0) != c)
      throw ShapeError("batchnorm: per-channel parameter shape " + shape_str(p->shape()) +
                       " does not match " + std::to_string(c) + " channels");
  if (eps <= 0) throw StatsError("batchnorm: eps must be positive");
  for (int64_t i = 0; i < c; ++i)
    if (rvar.scalar_at(i) < 0) throw StatsError("batchnorm: negative running variance");

  ChannelStats batch;
  if (mode == BnMode::Collect || collected) batch = channel_stats(input);

  Tensor out = Tensor::zeros(input.shape(), dtype_of<T>());
  const auto& x = vals<T>(input);
  auto& y = vals_mut<T>(out);
  for (int64_t ch = 0; ch < c; ++ch) {
    const double g = gamma.scalar_at(ch);
    const double bb = beta.scalar_at(ch);
    const double mu = mode == BnMode::Eval ? rmean.scalar_at(ch) : batch.mean[ch];
    const double var = mode == BnMode::Eval ? rvar.scalar_at(ch) : batch.var[ch];
    const double scale = g / std::sqrt(var + eps);
    const double shift = bb - mu * scale;
    for (int64_t b = 0; b < v.b; ++b) {
      T* row = &y[(b * c + ch) * v.t];
      const T* src = &x[(b * c + ch) * v.t];
      for (int64_t t = 0; t < v.t; ++t)
        row[t] = static_cast<T>(scale * static_cast<double>(src[t]) + shift);
    }
  }
  if (collected) *collected = batch;
  return out;
}

template <typename T>
Tensor dense_impl(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const Bct v = as_bct(input, "dense");
  if (weight.rank() != 2 || weight.dim(1) != v.c)
    throw ShapeError("dense: weight shape " + shape_str(weight.shape()) +
                     " does not accept " + std::to_string(v.c) + " input channels");
  const int64_t o = weight.dim(0);
  const bool has_bias = bias.numel() > 0;
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != o))
    throw ShapeError("dense: bias shape " + shape_str(bias.shape()));

  Tensor out = Tensor::zeros(out_shape(v, o, v.t), dtype_of<T>());
  const auto& x = vals<T>(input);
  const auto& w = vals<T>(weight);
  const T* bptr = has_bias ? vals<T>(bias).data() : nullptr;
  auto& y = vals_mut<T>(out);
  for (int64_t b = 0; b < v.b; ++b)
    for (int64_t oc = 0; oc < o; ++oc)
      for (int64_t t = 0; t < v.t; ++t) {
        double acc = bptr ? static_cast<double>(bptr[oc]) : 0.0;
        for (int64_t c = 0; c < v.c; ++c)
          acc += static_cast<double>(w[oc * v.c + c]) * x[(b * v.c + c) * v.t + t];
        y[(b * o + oc) * v.t + t] = static_cast<T>(acc);
      }
  return out;
}

template <typename T>
Tensor matmul_impl(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n}, dtype_of<T>());
  const auto& av = vals<T>(a);
  const auto& bv = vals<T>(b);
  auto& y = vals_mut<T>(out);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (int64_t kk = 0; kk < k; ++kk)
        acc += static_cast<double>(av[i * k + kk]) * bv[kk * n + j];
      y[i * n + j] = static_cast<T>(acc);
    }
  return out;
}

template <typename T, typename F>
Tensor map_impl(const Tensor& x, F f) {
  Tensor out = Tensor::zeros(x.shape(), dtype_of<T>());
  const auto& src = vals<T>(x);
  auto& dst = vals_mut<T>(out);
  for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(f(static_cast<double>(src[i])));
  return out;
}

template <typename T>
Tensor softmax_impl(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax: rank-0 tensor");
  const int64_t n = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape(), dtype_of<T>());
  const auto& src = vals<T>(x);
  auto& dst = vals_mut<T>(out);
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = &src[r * n];
    double mx = row[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double sum = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double e = std::exp(static_cast<double>(row[i]) - mx);
      dst[r * n + i] = static_cast<T>(e);
      sum += e;
    }
    for (int64_t i = 0; i < n; ++i)
      dst[r * n + i] = static_cast<T>(static_cast<double>(dst[r * n + i]) / sum);
  }
  return out;
}

template <typename Fn32, typename Fn64>
Tensor dispatch(const Tensor& x, const char* who, Fn32 f32, Fn64 f64) {
  require_real(x, who);
  note_real_arith(who);
  return x.dtype() == DType::Real32 ? f32() : f64();
}

}  // namespace

Tensor conv1d_f(const Tensor& input, const Tensor& weight, const Tensor& bias,
                const ConvSpec& spec) {
  spec.validate();
  if (weight.dtype() != input.dtype() || (bias.numel() > 0 && bias.dtype() != input.dtype()))
    throw ShapeError("conv1d: input/weight/bias dtypes differ");
  return dispatch(
      input, "conv1d_f",
      [&] { return conv1d_impl<float>(input, weight, bias, spec); },
      [&] { return conv1d_impl<double>(input, weight, bias, spec); });
}

Tensor batchnorm_f(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   const Tensor& running_mean, const Tensor& running_var, double eps,
                   BnMode mode, ChannelStats* collected) {
  return dispatch(
      input, "batchnorm_f",
      [&] {
        return batchnorm_impl<float>(input, gamma, beta, running_mean, running_var, eps,
                                     mode, collected);
      },
      [&] {
        return batchnorm_impl<double>(input, gamma, beta, running_mean, running_var, eps,
                                      mode, collected);
      });
}

Tensor dense_f(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (weight.dtype() != input.dtype())
    throw ShapeError("dense: input/weight dtypes differ");
  return dispatch(
      input, "dense_f", [&] { return dense_impl<float>(input, weight, bias); },
      [&] { return dense_impl<double>(input, weight, bias); });
}

Tensor matmul_f(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) throw ShapeError("matmul: dtypes differ");
  return dispatch(
      a, "matmul_f", [&] { return matmul_impl<float>(a, b); },
      [&] { return matmul_impl<double>(a, b); });
}

Tensor relu_f(const Tensor& x) {
  return dispatch(
      x, "relu_f",
      [&] { return map_impl<float>(x, [](double v) { return v > 0 ? v : 0.0; }); },
      [&] { return map_impl<double>(x, [](double v) { return v > 0 ? v : 0.0; }); });
}

Tensor add_f(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype())
    throw ShapeError("add: operands " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  return dispatch(
      a, "add_f",
      [&] {
        Tensor out = a;
        auto& y = out.f32();
        const auto& bv = b.f32();
        for (size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
        return out;
      },
      [&] {
        Tensor out = a;
        auto& y = out.f64();
        const auto& bv = b.f64();
        for (size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
        return out;
      });
}

Tensor sigmoid_f(const Tensor& x) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  return dispatch(
      x, "sigmoid_f", [&] { return map_impl<float>(x, sig); },
      [&] { return map_impl<double>(x, sig); });
}

Tensor swish_f(const Tensor& x) {
  auto sw = [](double v) { return v / (1.0 + std::exp(-v)); };
  return dispatch(
      x, "swish_f", [&] { return map_impl<float>(x, sw); },
      [&] { return map_impl<double>(x, sw); });
}

Tensor softmax_f(const Tensor& x) {
  return dispatch(
      x, "softmax_f", [&] { return softmax_impl<float>(x); },
      [&] { return softmax_impl<double>(x); });
}

ChannelStats channel_stats(const Tensor& x) {
  const Bct v = as_bct(x, "channel_stats");
  ChannelStats s;
  s.mean.assign(v.c, 0.0);
  s.var.assign(v.c, 0.0);
  const int64_t n = v.b * v.t;
  for (int64_t ch = 0; ch < v.c; ++ch) {
    double sum = 0;
    for (int64_t b = 0; b < v.b; ++b)
      for (int64_t t = 0; t < v.t; ++t) sum += x.scalar_at((b * v.c + ch) * v.t + t);
    const double mu = sum / n;
    double acc = 0;
    for (int64_t b = 0; b < v.b; ++b)
      for (int64_t t = 0; t < v.t; ++t) {
        const double d = x.scalar_at((b * v.c + ch) * v.t + t) - mu;
        acc += d * d;
      }
    s.mean[ch] = mu;
    s.var[ch] = acc / n;
  }
  return s;
}

}  // namespace asrq
