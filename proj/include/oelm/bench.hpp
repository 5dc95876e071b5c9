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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oelm/checkpoint.hpp"
#include "oelm/model.hpp"
#include "oelm/nn.hpp"

namespace oelm {

struct BenchProtocol {
  std::size_t prompt_tokens = 36;
  std::size_t gen_tokens = 1024;
  bool dry_run = true;  // one untimed full generation before anything is measured
  std::size_t warmup_passes = 1;  // untimed prompt forward passes per variant
  std::size_t repetitions = 5;
  std::uint64_t prompt_seed = 0;
};

struct RepTiming {
  double prefill_seconds = 0.0;
  double generation_seconds = 0.0;
};

struct ThroughputReport {
  std::string norm_variant;
  std::int64_t norm_invocations = 0;  // per token
  std::size_t prompt_tokens = 0;
  std::size_t gen_tokens = 0;
  double prefill_seconds = 0.0;     // median over repetitions
  double generation_seconds = 0.0;  // median over repetitions
  double prompt_tps = 0.0;
  double generation_tps = 0.0;
  double total_tps = 0.0;
  std::vector<RepTiming> reps;
};

double tokens_per_second(std::size_t tokens, double seconds);
double median(std::vector<double> values);

// Medians of the per-repetition phase times and the throughputs derived from
// them; total_tps = (prompt + gen) / (prefill + generation).
ThroughputReport summarize(std::size_t prompt_tokens, std::size_t gen_tokens,
                           nn::NormVariant variant, std::int64_t norm_invocations,
                           std::span<const RepTiming> reps);

// Deterministic prompt of `n` ids below `vocab`.
std::vector<TokenId> benchmark_prompt(std::size_t n, std::int64_t vocab, std::uint64_t seed);

void validate(const BenchProtocol& protocol, const ModelSpec& spec);

ThroughputReport run_benchmark(const Checkpoint& ckpt, const BenchProtocol& protocol,
                               nn::NormVariant variant, const Clock& clock = steady_clock());

struct NormComparison {
  ThroughputReport naive;
  ThroughputReport fused;
  double speedup = 0.0;  // fused generation_tps / naive generation_tps
  double max_logit_diff = 0.0;
};

// Checks both variants produce the same prompt logits (|diff| <= tolerance *
// max(1, |logit|)), then times them with interleaved repetitions.
NormComparison compare_norm_variants(const Checkpoint& ckpt, const BenchProtocol& protocol,
                                     const Clock& clock = steady_clock(),
                                     double tolerance = 1e-5);

nlohmann::json to_json(const ThroughputReport& r);
std::string csv_header();
std::string csv_row(const std::string& model, const ThroughputReport& r);

}  // namespace oelm
