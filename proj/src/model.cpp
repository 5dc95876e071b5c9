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

#include "oelm/model.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "oelm/error.hpp"

namespace oelm {

namespace tn = tensor_names;

namespace {

constexpr double kInitStd = 0.02;

double truncated_normal(std::mt19937_64& rng, std::normal_distribution<double>& dist) {
  for (;;) {
    const double z = dist(rng);
    if (std::abs(z) <= 2.0 * kInitStd) return z;
  }
}

void check_tokens(std::span<const TokenId> tokens, const ModelSpec& spec) {
  for (TokenId t : tokens) {
    if (t < 0 || t >= spec.vocab_size) {
      fail(ErrorKind::kData, "token id " + std::to_string(t) + " outside vocabulary of " +
                                 std::to_string(spec.vocab_size));
    }
  }
}

}  // namespace

Checkpoint init_model(const ScalePlan& plan, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.spec = plan.spec;
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(plan.spec.num_layers));
  std::ostringstream note;
  note << "normal(0, " << kInitStd << ") truncated at 2 sigma; attn.wo and ffn.w_down scaled by "
       << "1/sqrt(2N); norm gains 1; seed " << seed;
  ckpt.init_note = note.str();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, kInitStd);
  for (const auto& [name, shape] : expected_tensor_shapes(plan)) {
    Matrix m(shape.rows, shape.cols);
    if (is_norm_gain(name)) {
      m.fill(1.0);
    } else {
      const bool residual = name.ends_with(tn::kWo) || name.ends_with(tn::kDown);
      const double scale = residual ? residual_scale : 1.0;
      for (double& v : m.values()) {
        v = static_cast<double>(static_cast<float>(truncated_normal(rng, dist) * scale));
      }
    }
    ckpt.tensors.emplace(name, std::move(m));
  }
  return ckpt;
}

KVCache::KVCache(const ScalePlan& plan)
    : capacity_(static_cast<std::size_t>(plan.spec.context_length)) {
  keys_.reserve(plan.layers.size());
  values_.reserve(plan.layers.size());
  for (const LayerPlan& l : plan.layers) {
    const auto width = static_cast<std::size_t>(l.kv_width(plan.spec.head_dim));
    keys_.emplace_back(capacity_, width);
    values_.emplace_back(capacity_, width);
  }
}

Transformer::Transformer(const Checkpoint& ckpt, nn::NormVariant norm)
    : plan_(build_plan(ckpt.spec)),
      norm_(norm),
      rope_(nn::RopeConfig{static_cast<std::size_t>(ckpt.spec.head_dim), ckpt.spec.rope_theta},
            static_cast<std::size_t>(ckpt.spec.context_length)) {
  validate_checkpoint(ckpt);
  embedding_ = &ckpt.tensor(tn::kEmbedding);
  output_ = ckpt.spec.weight_tying ? embedding_ : &ckpt.tensor(tn::kOutput);
  final_norm_ = &ckpt.tensor(tn::kFinalNorm);
  const ModelSpec& s = plan_.spec;
  for (const LayerPlan& l : plan_.layers) {
    auto get = [&](std::string_view suffix) {
      return &ckpt.tensor(layer_tensor_name(l.index, s.num_layers, suffix));
    };
    layers_.push_back(LayerWeights{
        get(tn::kAttnNorm), get(tn::kWq), get(tn::kWk), get(tn::kWv), get(tn::kWo),
        get(tn::kQNorm), get(tn::kKNorm), get(tn::kFfnNorm), get(tn::kGate), get(tn::kUp),
        get(tn::kDown),
        nn::AttentionShape{static_cast<std::size_t>(l.n_heads),
                           static_cast<std::size_t>(l.n_kv_heads),
                           static_cast<std::size_t>(s.head_dim)}});
  }
}

Matrix Transformer::run(std::span<const TokenId> tokens, KVCache* cache,
                        bool all_logits) const {
  const ModelSpec& s = plan_.spec;
  const std::size_t T = tokens.size();
  const std::size_t offset = cache != nullptr ? cache->filled_ : 0;
  if (T == 0) fail(ErrorKind::kData, "empty token sequence");
  if (offset + T > static_cast<std::size_t>(s.context_length)) {
    fail(ErrorKind::kContext, "sequence of " + std::to_string(offset + T) +
                                  " tokens exceeds context length " +
                                  std::to_string(s.context_length));
  }
  check_tokens(tokens, s);
  const auto d = static_cast<std::size_t>(s.d_model);
  const double eps = s.norm_epsilon;

  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    auto src = embedding_->row(static_cast<std::size_t>(tokens[t]));
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }

  Matrix h, q, k, v, proj, gate, up;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerWeights& w = layers_[li];
    nn::rmsnorm_rows(x, w.attn_norm->row(0), eps, h, norm_);
    matmul(h, *w.wq, q);
    matmul(h, *w.wk, k);
    matmul(h, *w.wv, v);
    nn::rmsnorm_heads(q, *w.q_norm, eps, norm_);
    nn::rmsnorm_heads(k, *w.k_norm, eps, norm_);
    rope_.rotate_rows(q, offset);
    rope_.rotate_rows(k, offset);

    Matrix attn;
    if (cache != nullptr) {
      Matrix& ck = cache->keys_[li];
      Matrix& cv = cache->values_[li];
      for (std::size_t t = 0; t < T; ++t) {
        std::copy(k.row(t).begin(), k.row(t).end(), ck.row(offset + t).begin());
        std::copy(v.row(t).begin(), v.row(t).end(), cv.row(offset + t).begin());
      }
      attn = nn::gqa_attention(q, MatrixView(ck).top(offset + T), MatrixView(cv).top(offset + T),
                               w.shape, offset);
    } else {
      attn = nn::gqa_attention(q, k, v, w.shape, 0);
    }
    matmul(attn, *w.wo, proj);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += proj.values()[i];

    nn::rmsnorm_rows(x, w.ffn_norm->row(0), eps, h, norm_);
    matmul(h, *w.w_gate, gate);
    matmul(h, *w.w_up, up);
    for (std::size_t i = 0; i < gate.size(); ++i) {
      gate.values()[i] = nn::silu(gate.values()[i]) * up.values()[i];
    }
    matmul(gate, *w.w_down, proj);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += proj.values()[i];
  }
  if (cache != nullptr) cache->filled_ += T;

  const std::size_t first = all_logits ? 0 : T - 1;
  Matrix last(T - first, d);
  for (std::size_t t = first; t < T; ++t) {
    nn::rmsnorm(x.row(t), final_norm_->row(0), eps, last.row(t - first), norm_);
  }
  Matrix logits;
  matmul_bt(last, *output_, logits);
  return logits;
}

Matrix Transformer::forward(std::span<const TokenId> tokens) const {
  return run(tokens, nullptr, true);
}

Matrix Transformer::forward_cached(std::span<const TokenId> tokens, KVCache& cache,
                                   bool all_logits) const {
  if (cache.num_layers() != layers_.size()) {
    fail(ErrorKind::kShape, "cache has " + std::to_string(cache.num_layers()) +
                                " layers, model has " + std::to_string(layers_.size()));
  }
  return run(tokens, &cache, all_logits);
}

std::vector<double> Transformer::decode_step(KVCache& cache, TokenId token) const {
  if (cache.filled() >= cache.capacity()) {
    fail(ErrorKind::kContext, "KV cache full at " + std::to_string(cache.capacity()) + " tokens");
  }
  const TokenId one[1] = {token};
  Matrix logits = forward_cached(one, cache, false);
  return {logits.values().begin(), logits.values().end()};
}

Matrix forward(const Checkpoint& ckpt, std::span<const TokenId> tokens) {
  return Transformer(ckpt).forward(tokens);
}

std::vector<double> decode_step(const Checkpoint& ckpt, KVCache& cache, TokenId token) {
  return Transformer(ckpt).decode_step(cache, token);
}

void validate(const SamplerConfig& cfg) {
  if (cfg.mode == SamplerConfig::Mode::kTemperature &&
      !(cfg.temperature > 0.0 && std::isfinite(cfg.temperature))) {
    fail(ErrorKind::kConfig, "sampling temperature must be positive");
  }
}

TokenId argmax(std::span<const double> logits) {
  if (logits.empty()) fail(ErrorKind::kShape, "argmax over empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

TokenId sample(std::span<const double> logits, const SamplerConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  if (cfg.mode == SamplerConfig::Mode::kGreedy) return argmax(logits);
  std::vector<double> p(logits.begin(), logits.end());
  for (double& z : p) z /= cfg.temperature;
  nn::softmax(p);
  // 53-bit uniform in [0, 1) so the draw does not depend on library
  // distribution internals.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return argmax(logits);
}

Clock steady_clock() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
}

Generation generate(const Transformer& model, std::span<const TokenId> prompt,
                    std::size_t n_new, const SamplerConfig& sampler, const Clock& clock) {
  validate(sampler);
  if (prompt.empty()) fail(ErrorKind::kData, "generation needs a non-empty prompt");
  const auto context = static_cast<std::size_t>(model.spec().context_length);
  if (prompt.size() + n_new > context) {
    fail(ErrorKind::kContext, "prompt (" + std::to_string(prompt.size()) + ") + new tokens (" +
                                  std::to_string(n_new) + ") exceed context length " +
                                  std::to_string(context));
  }
  Generation gen;
  gen.tokens.assign(prompt.begin(), prompt.end());
  gen.tokens.reserve(prompt.size() + n_new);
  std::mt19937_64 rng(sampler.seed);
  KVCache cache = model.make_cache();

  const double t0 = clock();
  Matrix logits = model.forward_cached(prompt, cache, false);
  const double t1 = clock();
  std::vector<double> row(logits.values().begin(), logits.values().end());
  for (std::size_t i = 0; i < n_new; ++i) {
    const TokenId next = sample(row, sampler, rng);
    gen.tokens.push_back(next);
    row = model.decode_step(cache, next);
    ++gen.decode_steps;
  }
  const double t2 = clock();
  gen.prefill_seconds = t1 - t0;
  gen.generation_seconds = n_new == 0 ? 0.0 : t2 - t1;
  return gen;
}

Generation generate(const Checkpoint& ckpt, std::span<const TokenId> prompt,
                    std::size_t n_new, const SamplerConfig& sampler) {
  return generate(Transformer(ckpt), prompt, n_new, sampler);
}

}  // namespace oelm
