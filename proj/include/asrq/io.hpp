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

#include <string>
#include <utility>

#include <json.hpp>

#include "asrq/model.hpp"
#include "asrq/tensor.hpp"

namespace asrq {

// AQM1 container: magic "AQM1", 32-bit LE header length, UTF-8 JSON header,
// then raw row-major little-endian tensor payloads in header order.

/// Serialize `t` onto `blob` and return a payload descriptor for the header.
nlohmann::json blob_append_tensor(std::string& blob, const std::string& key,
                                  const Tensor& t);

/// Reconstruct a tensor from its descriptor and the payload blob.
Tensor blob_read_tensor(const nlohmann::json& desc, const std::string& blob);

void aqm_write(const std::string& path, const nlohmann::json& header,
               const std::string& blob);
std::pair<nlohmann::json, std::string> aqm_read(const std::string& path);

void save_model(const ModelGraph& model, const std::string& path);
ModelGraph load_model(const std::string& path);

/// Synthetic mel batch file: magic "AMEL", 32-bit LE dims (batch, mel, frames),
/// real32 LE payload.
void write_amel(const std::string& path, const Tensor& batch);
Tensor read_amel(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace asrq
