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

namespace asrq {

/// While a guard is alive the current thread is inside an integer-only
/// region: any real-arithmetic layer kernel that runs bumps the violation
/// counter and throws. Layer kernels self-report through note_real_arith().
class IntegerPurityGuard {
 public:
  IntegerPurityGuard();
  ~IntegerPurityGuard();
  IntegerPurityGuard(const IntegerPurityGuard&) = delete;
  IntegerPurityGuard& operator=(const IntegerPurityGuard&) = delete;
};

bool integer_region_active();
void note_real_arith(const char* what);
int64_t purity_violation_count();
void reset_purity_violations();

}  // namespace asrq
