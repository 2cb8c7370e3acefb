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

#include "asrq/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "container writers assume a little-endian host");

namespace asrq {

namespace {

constexpr char kModelMagic[4] = {'A', 'Q', 'M', '1'};
constexpr char kMelMagic[4] = {'A', 'M', 'E', 'L'};

size_t dtype_bytes(DType d) {
  switch (d) {
    case DType::Real32: return 4;
    case DType::Real64: return 8;
    case DType::Int8: return 1;
    case DType::Int32: return 4;
  }
  return 0;
}

template <typename T>
void append_values(std::string& blob, const std::vector<T>& v) {
  const size_t off = blob.size();
  blob.resize(off + v.size() * sizeof(T));
  std::memcpy(blob.data() + off, v.data(), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> take_values(const std::string& blob, size_t off, size_t n) {
  std::vector<T> v(n);
  std::memcpy(v.data(), blob.data() + off, n * sizeof(T));
  return v;
}

void append_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

uint32_t parse_u32(const std::string& s, size_t off) {
  uint32_t v;
  std::memcpy(&v, s.data() + off, 4);
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

void dump(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write '" + path + "'");
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw FormatError("short write to '" + path + "'");
}

nlohmann::json spec_to_json(const ConvSpec& s) {
  return {{"in", s.in_channels},   {"out", s.out_channels}, {"k", s.kernel_size},
          {"stride", s.stride},    {"pad", s.padding},      {"dil", s.dilation},
          {"groups", s.groups}};
}

ConvSpec spec_from_json(const nlohmann::json& j) {
  ConvSpec s;
  s.in_channels = j.at("in");
  s.out_channels = j.at("out");
  s.kernel_size = j.at("k");
  s.stride = j.at("stride");
  s.padding = j.at("pad");
  s.dilation = j.at("dil");
  s.groups = j.at("groups");
  return s;
}

}  // namespace

nlohmann::json blob_append_tensor(std::string& blob, const std::string& key,
                                  const Tensor& t) {
  nlohmann::json desc;
  desc["key"] = key;
  desc["dtype"] = dtype_name(t.dtype());
  desc["shape"] = t.shape();
  desc["offset"] = blob.size();
  desc["bytes"] = static_cast<uint64_t>(t.numel()) * dtype_bytes(t.dtype());
  switch (t.dtype()) {
    case DType::Real32: append_values(blob, t.f32()); break;
    case DType::Real64: append_values(blob, t.f64()); break;
    case DType::Int8: append_values(blob, t.i8()); break;
    case DType::Int32: append_values(blob, t.i32()); break;
  }
  return desc;
}

Tensor blob_read_tensor(const nlohmann::json& desc, const std::string& blob) {
  const DType d = dtype_from_name(desc.at("dtype").get<std::string>());
  Shape shape = desc.at("shape").get<Shape>();
  const size_t off = desc.at("offset").get<size_t>();
  const size_t bytes = desc.at("bytes").get<size_t>();
  const int64_t n = shape_numel(shape);
  if (bytes != static_cast<size_t>(n) * dtype_bytes(d))
    throw FormatError("tensor '" + desc.at("key").get<std::string>() +
                      "': byte count does not match shape");
  if (off + bytes > blob.size())
    throw TruncationError("payload shorter than header declares for tensor '" +
                          desc.at("key").get<std::string>() + "'");
  switch (d) {
    case DType::Real32: return Tensor::from_f32(shape, take_values<float>(blob, off, n));
    case DType::Real64: return Tensor::from_f64(shape, take_values<double>(blob, off, n));
    case DType::Int8: return Tensor::from_i8(shape, take_values<int8_t>(blob, off, n));
    case DType::Int32: return Tensor::from_i32(shape, take_values<int32_t>(blob, off, n));
  }
  throw FormatError("unreachable dtype");
}

void aqm_write(const std::string& path, const nlohmann::json& header,
               const std::string& blob) {
  const std::string hdr = header.dump();
  std::string out;
  out.reserve(8 + hdr.size() + blob.size());
  out.append(kModelMagic, 4);
  append_u32(out, static_cast<uint32_t>(hdr.size()));
  out += hdr;
  out += blob;
  dump(path, out);
}

std::pair<nlohmann::json, std::string> aqm_read(const std::string& path) {
  const std::string data = slurp(path);
  if (data.size() < 4 || std::memcmp(data.data(), kModelMagic, 4) != 0)
    throw MagicMismatchError("'" + path + "' is not an AQM1 container");
  if (data.size() < 8) throw TruncationError("'" + path + "': missing header length");
  const uint32_t hlen = parse_u32(data, 4);
  if (8 + static_cast<size_t>(hlen) > data.size())
    throw TruncationError("'" + path + "': header extends past end of file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(8, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': bad JSON header: " + e.what());
  }
  return {header, data.substr(8 + hlen)};
}

void save_model(const ModelGraph& model, const std::string& path) {
  nlohmann::json header;
  header["kind"] = "float_model";
  header["input_shape"] = {model.mel_bins, model.frames};
  header["metadata"] = model.metadata;
  std::string blob;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers) {
    nlohmann::json jl;
    jl["name"] = l.name;
    jl["layer_kind"] = layer_kind_name(l.kind);
    if (l.kind == LayerKind::Conv1d) jl["spec"] = spec_to_json(l.spec);
    if (l.kind == LayerKind::BatchNorm) jl["eps"] = l.eps;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [key, t] : l.params) {
      if (t.dtype() != DType::Real32)
        throw FormatError("float model tensors must be real32");
      tensors.push_back(blob_append_tensor(blob, key, t));
    }
    jl["tensors"] = std::move(tensors);
    layers.push_back(std::move(jl));
  }
  header["layers"] = std::move(layers);
  aqm_write(path, header, blob);
}

ModelGraph load_model(const std::string& path) {
  auto [header, blob] = aqm_read(path);
  try {
    if (header.at("kind") != "float_model")
      throw FormatError("'" + path + "' holds a " +
                        header.at("kind").get<std::string>() + ", not a float model");
    ModelGraph g;
    g.mel_bins = header.at("input_shape").at(0);
    g.frames = header.at("input_shape").at(1);
    if (header.contains("metadata"))
      g.metadata = header["metadata"].get<std::map<std::string, std::string>>();
    for (const auto& jl : header.at("layers")) {
      Layer l;
      l.name = jl.at("name");
      l.kind = layer_kind_from_name(jl.at("layer_kind"));
      if (jl.contains("spec")) l.spec = spec_from_json(jl["spec"]);
      if (jl.contains("eps")) l.eps = jl["eps"];
      for (const auto& desc : jl.at("tensors"))
        l.params[desc.at("key").get<std::string>()] = blob_read_tensor(desc, blob);
      g.layers.push_back(std::move(l));
    }
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': header inconsistent: " + e.what());
  }
}

void write_amel(const std::string& path, const Tensor& batch) {
  if (batch.rank() != 3 || batch.dtype() != DType::Real32)
    throw ShapeError("write_amel: expected real32 (batch, mel, frames) tensor");
  std::string out;
  out.append(kMelMagic, 4);
  for (int i = 0; i < 3; ++i) append_u32(out, static_cast<uint32_t>(batch.dim(i)));
  const size_t off = out.size();
  out.resize(off + batch.f32().size() * 4);
  std::memcpy(out.data() + off, batch.f32().data(), batch.f32().size() * 4);
  dump(path, out);
}

Tensor read_amel(const std::string& path) {
  const std::string data = slurp(path);
  if (data.size() < 4 || std::memcmp(data.data(), kMelMagic, 4) != 0)
    throw MagicMismatchError("'" + path + "' is not an AMEL file");
  if (data.size() < 16) throw TruncationError("'" + path + "': missing dimensions");
  const int64_t b = parse_u32(data, 4), m = parse_u32(data, 8), t = parse_u32(data, 12);
  const size_t need = 16 + static_cast<size_t>(b) * m * t * 4;
  if (data.size() < need)
    throw TruncationError("'" + path + "': payload shorter than dimensions declare");
  std::vector<float> v(static_cast<size_t>(b) * m * t);
  std::memcpy(v.data(), data.data() + 16, v.size() * 4);
  return Tensor::from_f32({b, m, t}, std::move(v));
}

void write_text_file(const std::string& path, const std::string& content) {
  dump(path, content);
}

std::string read_text_file(const std::string& path) { return slurp(path); }

}  // namespace asrq
