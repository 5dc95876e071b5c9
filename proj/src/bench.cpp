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

#include "oelm/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "oelm/error.hpp"

namespace oelm {

namespace {

std::atomic<bool> g_session_active{false};

// Benchmarks run one at a time per process.
class SessionGuard {
 public:
  SessionGuard() {
    if (g_session_active.exchange(true)) {
      fail(ErrorKind::kProtocol, "another benchmark session is already running");
    }
  }
  ~SessionGuard() { g_session_active.store(false); }
  SessionGuard(const SessionGuard&) = delete;
  SessionGuard& operator=(const SessionGuard&) = delete;
};

RepTiming time_rep(const Transformer& model, std::span<const TokenId> prompt,
                   std::size_t gen_tokens, const Clock& clock) {
  const Generation g = generate(model, prompt, gen_tokens, SamplerConfig{}, clock);
  return {g.prefill_seconds, g.generation_seconds};
}

void warm_up(const Transformer& model, std::span<const TokenId> prompt, std::size_t passes) {
  for (std::size_t i = 0; i < passes; ++i) {
    KVCache cache = model.make_cache();
    (void)model.forward_cached(prompt, cache, false);
  }
}

}  // namespace

double tokens_per_second(std::size_t tokens, double seconds) {
  if (!(seconds > 0.0)) {
    fail(ErrorKind::kProtocol, "phase time must be positive to report throughput");
  }
  return static_cast<double>(tokens) / seconds;
}

double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorKind::kProtocol, "median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ThroughputReport summarize(std::size_t prompt_tokens, std::size_t gen_tokens,
                           nn::NormVariant variant, std::int64_t norm_invocations,
                           std::span<const RepTiming> reps) {
  ThroughputReport r;
  r.norm_variant = nn::to_string(variant);
  r.norm_invocations = norm_invocations;
  r.prompt_tokens = prompt_tokens;
  r.gen_tokens = gen_tokens;
  r.reps.assign(reps.begin(), reps.end());
  std::vector<double> pre, gen;
  for (const RepTiming& t : reps) {
    pre.push_back(t.prefill_seconds);
    gen.push_back(t.generation_seconds);
  }
  r.prefill_seconds = median(pre);
  r.generation_seconds = median(gen);
  r.prompt_tps = tokens_per_second(prompt_tokens, r.prefill_seconds);
  r.generation_tps = tokens_per_second(gen_tokens, r.generation_seconds);
  r.total_tps = tokens_per_second(prompt_tokens + gen_tokens,
                                  r.prefill_seconds + r.generation_seconds);
  return r;
}

std::vector<TokenId> benchmark_prompt(std::size_t n, std::int64_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> ids(n);
  for (TokenId& id : ids) id = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab));
  return ids;
}

void validate(const BenchProtocol& p, const ModelSpec& spec) {
  if (p.prompt_tokens == 0) fail(ErrorKind::kProtocol, "prompt_tokens must be positive");
  if (p.gen_tokens == 0) fail(ErrorKind::kProtocol, "gen_tokens must be positive");
  if (p.repetitions == 0) fail(ErrorKind::kProtocol, "repetitions must be positive");
  if (p.prompt_tokens + p.gen_tokens > static_cast<std::size_t>(spec.context_length)) {
    fail(ErrorKind::kProtocol, "prompt (" + std::to_string(p.prompt_tokens) + ") + generation (" +
                                   std::to_string(p.gen_tokens) + ") exceed context length " +
                                   std::to_string(spec.context_length));
  }
}

ThroughputReport run_benchmark(const Checkpoint& ckpt, const BenchProtocol& protocol,
                               nn::NormVariant variant, const Clock& clock) {
  validate(protocol, ckpt.spec);
  SessionGuard session;
  const Transformer model(ckpt, variant);
  const auto prompt = benchmark_prompt(protocol.prompt_tokens, ckpt.spec.vocab_size,
                                       protocol.prompt_seed);
  if (protocol.dry_run) (void)generate(model, prompt, protocol.gen_tokens, SamplerConfig{});
  warm_up(model, prompt, protocol.warmup_passes);
  std::vector<RepTiming> reps;
  for (std::size_t i = 0; i < protocol.repetitions; ++i) {
    reps.push_back(time_rep(model, prompt, protocol.gen_tokens, clock));
  }
  return summarize(protocol.prompt_tokens, protocol.gen_tokens, variant,
                   count_norm_invocations(model.plan()), reps);
}

NormComparison compare_norm_variants(const Checkpoint& ckpt, const BenchProtocol& protocol,
                                     const Clock& clock, double tolerance) {
  validate(protocol, ckpt.spec);
  SessionGuard session;
  const Transformer naive(ckpt, nn::NormVariant::kNaive);
  const Transformer fused(ckpt, nn::NormVariant::kFused);
  const auto prompt = benchmark_prompt(protocol.prompt_tokens, ckpt.spec.vocab_size,
                                       protocol.prompt_seed);

  NormComparison cmp;
  const Matrix a = naive.forward(prompt);
  const Matrix b = fused.forward(prompt);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ref = b.values()[i];
    const double diff = std::abs(a.values()[i] - ref);
    cmp.max_logit_diff = std::max(cmp.max_logit_diff, diff);
    if (!(diff <= tolerance * std::max(1.0, std::abs(ref)))) {
      fail(ErrorKind::kCorrectness, "naive and fused RMSNorm logits differ by " +
                                        std::to_string(diff) + "; benchmark invalid");
    }
  }

  if (protocol.dry_run) (void)generate(fused, prompt, protocol.gen_tokens, SamplerConfig{});
  warm_up(naive, prompt, protocol.warmup_passes);
  warm_up(fused, prompt, protocol.warmup_passes);
  std::vector<RepTiming> naive_reps, fused_reps;
  for (std::size_t i = 0; i < protocol.repetitions; ++i) {
    // Alternate which variant goes first so slow drift does not favour one.
    if (i % 2 == 0) {
      naive_reps.push_back(time_rep(naive, prompt, protocol.gen_tokens, clock));
      fused_reps.push_back(time_rep(fused, prompt, protocol.gen_tokens, clock));
    } else {
      fused_reps.push_back(time_rep(fused, prompt, protocol.gen_tokens, clock));
      naive_reps.push_back(time_rep(naive, prompt, protocol.gen_tokens, clock));
    }
  }
  const std::int64_t invocations = count_norm_invocations(fused.plan());
  cmp.naive = summarize(protocol.prompt_tokens, protocol.gen_tokens, nn::NormVariant::kNaive,
                        invocations, naive_reps);
  cmp.fused = summarize(protocol.prompt_tokens, protocol.gen_tokens, nn::NormVariant::kFused,
                        invocations, fused_reps);
  cmp.speedup = cmp.fused.generation_tps / cmp.naive.generation_tps;
  return cmp;
}

nlohmann::json to_json(const ThroughputReport& r) {
  nlohmann::json reps = nlohmann::json::array();
  for (const RepTiming& t : r.reps) {
    reps.push_back({{"prefill_seconds", t.prefill_seconds},
                    {"generation_seconds", t.generation_seconds}});
  }
  return nlohmann::json{{"norm_variant", r.norm_variant},
                        {"norm_invocations", r.norm_invocations},
                        {"prompt_tokens", r.prompt_tokens},
                        {"gen_tokens", r.gen_tokens},
                        {"prefill_seconds", r.prefill_seconds},
                        {"generation_seconds", r.generation_seconds},
                        {"prompt_tps", r.prompt_tps},
                        {"generation_tps", r.generation_tps},
                        {"total_tps", r.total_tps},
                        {"reps", reps}};
}

std::string csv_header() { return "model,norm_layer,invocations,prompt_tps,generation_tps,total_tps"; }

std::string csv_row(const std::string& model, const ThroughputReport& r) {
  std::ostringstream out;
  out << model << ",RMSNorm-" << r.norm_variant << "," << r.norm_invocations << ","
      << std::fixed << std::setprecision(2) << r.prompt_tps << "," << r.generation_tps << ","
      << r.total_tps;
  return out.str();
}

}  // namespace oelm
