/*
 * Copyright 2026 The sdrpesq Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "sdrpesq/grid.hpp"

namespace sdrpesq {

/// Scalar loss, its optional gradient w.r.t. the mask, and named
/// intermediate values for debugging.
struct LossReport {
  double value = 0.0;
  std::optional<RealGrid> gradient;
  std::map<std::string, double> diagnostics;
  // Hash of every discrete branch the forward pass took (clips, max/min,
  // floors, masks). Two evaluations with equal signatures lie on the same
  // smooth piece of the loss.
  std::uint64_t branch_signature = 0;
};

/// FNV-1a accumulator for branch decisions.
class BranchSignature {
 public:
  void add(std::uint64_t v) noexcept {
    for (int i = 0; i < 8; ++i) {
      hash_ ^= (v >> (8 * i)) & 0xffu;
      hash_ *= 1099511628211ull;
    }
  }
  std::uint64_t value() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 1469598103934665603ull;
};

}  // namespace sdrpesq
