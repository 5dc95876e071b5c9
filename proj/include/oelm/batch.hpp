// Copyright 2026 The oelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oelm/matrix.hpp"

namespace oelm {

// `rows` training sequences of `length` tokens each, stored row-major.
struct Batch {
  std::size_t rows = 0;
  std::size_t length = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  TokenId separator = 0;

  std::span<const TokenId> input_row(std::size_t r) const {
    return {inputs.data() + r * length, length};
  }
  std::span<const TokenId> target_row(std::size_t r) const {
    return {targets.data() + r * length, length};
  }

  friend bool operator==(const Batch&, const Batch&) = default;
};

}  // namespace oelm
