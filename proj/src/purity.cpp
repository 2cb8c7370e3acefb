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

#include "asrq/purity.hpp"

#include <atomic>
#include <string>

#include "asrq/error.hpp"

namespace asrq {

namespace {
thread_local int g_depth = 0;
std::atomic<int64_t> g_violations{0};
}  // namespace

IntegerPurityGuard::IntegerPurityGuard() { ++g_depth; }
IntegerPurityGuard::~IntegerPurityGuard() { --g_depth; }

bool integer_region_active() { return g_depth > 0; }

void note_real_arith(const char* what) {
  if (g_depth > 0) {
    g_violations.fetch_add(1, std::memory_order_relaxed);
    throw NumericError(std::string("integer-purity violation: real arithmetic in '") +
                       what + "' inside an integer-only region");
  }
}

int64_t purity_violation_count() { return g_violations.load(std::memory_order_relaxed); }

void reset_purity_violations() { g_violations.store(0, std::memory_order_relaxed); }

}  // namespace asrq
