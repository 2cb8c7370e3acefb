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

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "asrq/error.hpp"

namespace asrq {

enum class DType { Real32, Real64, Int8, Int32 };

inline const char* dtype_name(DType d) {
  switch (d) {
    case DType::Real32: return "real32";
    case DType::Real64: return "real64";
    case DType::Int8: return "int8";
    case DType::Int32: return "int32";
  }
  return "?";
}

inline DType dtype_from_name(const std::string& s) {
  if (s == "real32") return DType::Real32;
  if (s == "real64") return DType::Real64;
  if (s == "int8") return DType::Int8;
  if (s == "int32") return DType::Int32;
  throw FormatError("unknown dtype: " + s);
}

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense N-dimensional array, row-major, immutable by convention once built
/// (operations return new tensors). Carries one of four element types.
class Tensor {
 public:
  Tensor() : shape_{}, dtype_(DType::Real32), data_(std::vector<float>{}) {}

  static Tensor zeros(Shape shape, DType dtype) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = dtype;
    int64_t n = shape_numel(t.shape_);
    switch (dtype) {
      case DType::Real32: t.data_ = std::vector<float>(n, 0.f); break;
      case DType::Real64: t.data_ = std::vector<double>(n, 0.0); break;
      case DType::Int8: t.data_ = std::vector<int8_t>(n, 0); break;
      case DType::Int32: t.data_ = std::vector<int32_t>(n, 0); break;
    }
    return t;
  }

  static Tensor from_f32(Shape shape, std::vector<float> v) {
    return from_vec(std::move(shape), std::move(v), DType::Real32);
  }
  static Tensor from_f64(Shape shape, std::vector<double> v) {
    return from_vec(std::move(shape), std::move(v), DType::Real64);
  }
  static Tensor from_i8(Shape shape, std::vector<int8_t> v) {
    return from_vec(std::move(shape), std::move(v), DType::Int8);
  }
  static Tensor from_i32(Shape shape, std::vector<int32_t> v) {
    return from_vec(std::move(shape), std::move(v), DType::Int32);
  }

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(i); }
  int64_t numel() const { return shape_.empty() ? data_size() : shape_numel(shape_); }

  bool is_real() const { return dtype_ == DType::Real32 || dtype_ == DType::Real64; }
  bool is_int() const { return !is_real(); }

  std::vector<float>& f32() { return get<float>("real32"); }
  const std::vector<float>& f32() const { return get<float>("real32"); }
  std::vector<double>& f64() { return get<double>("real64"); }
  const std::vector<double>& f64() const { return get<double>("real64"); }
  std::vector<int8_t>& i8() { return get<int8_t>("int8"); }
  const std::vector<int8_t>& i8() const { return get<int8_t>("int8"); }
  std::vector<int32_t>& i32() { return get<int32_t>("int32"); }
  const std::vector<int32_t>& i32() const { return get<int32_t>("int32"); }

  /// Element read as double regardless of dtype. Reporting/metadata use only.
  double scalar_at(int64_t i) const {
    switch (dtype_) {
      case DType::Real32: return f32().at(i);
      case DType::Real64: return f64().at(i);
      case DType::Int8: return i8().at(i);
      case DType::Int32: return i32().at(i);
    }
    return 0.0;
  }

  Tensor to_f64() const {
    Tensor t = zeros(shape_, DType::Real64);
    for (int64_t i = 0; i < numel(); ++i) t.f64()[i] = scalar_at(i);
    return t;
  }

  Tensor to_f32() const {
    Tensor t = zeros(shape_, DType::Real32);
    for (int64_t i = 0; i < numel(); ++i) t.f32()[i] = static_cast<float>(scalar_at(i));
    return t;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                       " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  bool same_values(const Tensor& o) const {
    if (shape_ != o.shape_ || dtype_ != o.dtype_) return false;
    return data_ == o.data_;
  }

 private:
  template <typename T>
  static Tensor from_vec(Shape shape, std::vector<T> v, DType d) {
    if (shape_numel(shape) != static_cast<int64_t>(v.size()))
      throw ShapeError("data length " + std::to_string(v.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = d;
    t.data_ = std::move(v);
    return t;
  }

  template <typename T>
  std::vector<T>& get(const char* want) {
    auto* p = std::get_if<std::vector<T>>(&data_);
    if (!p)
      throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype_) +
                       ", expected " + want);
    return *p;
  }
  template <typename T>
  const std::vector<T>& get(const char* want) const {
    return const_cast<Tensor*>(this)->get<T>(want);
  }

  int64_t data_size() const {
    return std::visit([](const auto& v) { return static_cast<int64_t>(v.size()); }, data_);
  }

  Shape shape_;
  DType dtype_;
  std::variant<std::vector<float>, std::vector<double>, std::vector<int8_t>,
               std::vector<int32_t>>
      data_;
};

/// Geometry of a 1-D convolution.
struct ConvSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel_size = 1;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t dilation = 1;
  int64_t groups = 1;

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0 || kernel_size <= 0)
      throw ConfigError("conv spec: channel and kernel sizes must be positive");
    if (stride < 1 || dilation < 1 || padding < 0 || groups < 1)
      throw ConfigError("conv spec: invalid stride/dilation/padding/groups");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      throw ConfigError("conv spec: channels not divisible by groups");
  }

  int64_t out_len(int64_t t) const {
    int64_t o = (t + 2 * padding - dilation * (kernel_size - 1) - 1) / stride + 1;
    if (o < 1)
      throw ShapeError("input too short: length " + std::to_string(t) +
                       " yields no output positions");
    return o;
  }

  bool operator==(const ConvSpec&) const = default;
};

}  // namespace asrq
