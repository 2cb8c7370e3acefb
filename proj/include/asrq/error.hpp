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

#include <stdexcept>
#include <string>

namespace asrq {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shapes do not match an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (toy model config, quantization config, bit widths).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk container. Subclasses distinguish the failure mode.
class FormatError : public Error {
 public:
  using Error::Error;
};

class MagicMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Invalid statistics (negative variance, missing BatchNorm layers).
class StatsError : public Error {
 public:
  using Error::Error;
};

/// Numeric failure at runtime (non-finite loss, degenerate range, overflow).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Integer value outside the range its quantization parameters allow.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Model cannot be lowered to the integer runtime (headroom, missing config).
class CompileError : public Error {
 public:
  using Error::Error;
};

}  // namespace asrq
