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
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oelm/batch.hpp"
#include "oelm/checkpoint.hpp"
#include "oelm/matrix.hpp"
#include "oelm/nn.hpp"
#include "oelm/scale_plan.hpp"

namespace oelm {

// Weights ~ N(0, 0.02) truncated at +-2 sigma, attn.wo and ffn.w_down further
// scaled by 1/sqrt(2N), norm gains 1. Values are rounded to single precision
// so a fresh checkpoint survives save/load unchanged.
Checkpoint init_model(const ScalePlan& plan, std::uint64_t seed);

// Per-layer key/value store for incremental decoding. Keys are stored after
// query/key normalization and rotary embedding.
class KVCache {
 public:
  explicit KVCache(const ScalePlan& plan);

  std::size_t filled() const { return filled_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t num_layers() const { return keys_.size(); }

  MatrixView keys(std::size_t layer) const { return MatrixView(keys_[layer]).top(filled_); }
  MatrixView values(std::size_t layer) const {
    return MatrixView(values_[layer]).top(filled_);
  }

  void clear() { filled_ = 0; }

 private:
  friend class Transformer;

  std::size_t capacity_;
  std::size_t filled_ = 0;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
};

// Inference view over a checkpoint. Holds pointers into `ckpt`, which must
// outlive it; with weight tying the output projection *is* tok_embeddings.
// Immutable after construction, so one instance may serve concurrent sessions
// that each own their KVCache.
class Transformer {
 public:
  explicit Transformer(const Checkpoint& ckpt,
                       nn::NormVariant norm = nn::NormVariant::kFused);

  const ScalePlan& plan() const { return plan_; }
  const ModelSpec& spec() const { return plan_.spec; }
  nn::NormVariant norm_variant() const { return norm_; }
  KVCache make_cache() const { return KVCache(plan_); }

  // Full-sequence forward without a cache: T x vocab logits.
  Matrix forward(std::span<const TokenId> tokens) const;

  // Appends `tokens` to `cache` and returns logits for every new position
  // (all_logits) or only the last one (1 x vocab).
  Matrix forward_cached(std::span<const TokenId> tokens, KVCache& cache,
                        bool all_logits) const;

  std::vector<double> decode_step(KVCache& cache, TokenId token) const;

  // The matrix used as the output projection.
  const Matrix& output_projection() const { return *output_; }

 private:
  struct LayerWeights {
    const Matrix* attn_norm;
    const Matrix* wq;
    const Matrix* wk;
    const Matrix* wv;
    const Matrix* wo;
    const Matrix* q_norm;
    const Matrix* k_norm;
    const Matrix* ffn_norm;
    const Matrix* w_gate;
    const Matrix* w_up;
    const Matrix* w_down;
    nn::AttentionShape shape;
  };

  Matrix run(std::span<const TokenId> tokens, KVCache* cache, bool all_logits) const;

  ScalePlan plan_;
  nn::NormVariant norm_;
  const Matrix* embedding_;
  const Matrix* output_;
  const Matrix* final_norm_;
  std::vector<LayerWeights> layers_;
  nn::RopeTable rope_;
};

Matrix forward(const Checkpoint& ckpt, std::span<const TokenId> tokens);
std::vector<double> decode_step(const Checkpoint& ckpt, KVCache& cache, TokenId token);

struct SamplerConfig {
  enum class Mode { kGreedy, kTemperature };
  Mode mode = Mode::kGreedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

void validate(const SamplerConfig& cfg);

// Lowest id wins ties.
TokenId argmax(std::span<const double> logits);
TokenId sample(std::span<const double> logits, const SamplerConfig& cfg, std::mt19937_64& rng);

// Monotonic seconds; swappable so benchmarks can be tested with a scripted clock.
using Clock = std::function<double()>;
Clock steady_clock();

struct Generation {
  std::vector<TokenId> tokens;  // prompt followed by the new tokens
  double prefill_seconds = 0.0;
  double generation_seconds = 0.0;
  std::size_t decode_steps = 0;
};

// Prefills the prompt, then runs one decode step per new token (each sampled
// token is appended to the cache).
Generation generate(const Transformer& model, std::span<const TokenId> prompt,
                    std::size_t n_new, const SamplerConfig& sampler,
                    const Clock& clock = steady_clock());
Generation generate(const Checkpoint& ckpt, std::span<const TokenId> prompt,
                    std::size_t n_new, const SamplerConfig& sampler);

// ---------------------------------------------------------------------------
// Training support
// ---------------------------------------------------------------------------

using Gradients = std::map<std::string, Matrix>;

Gradients zero_gradients(const Checkpoint& ckpt);

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

// Mean cross-entropy over every position of every row, with its gradient
// with respect to every checkpoint tensor.
LossAndGrad loss_and_grad(const Checkpoint& ckpt, const Batch& batch);
double evaluate_loss(const Checkpoint& ckpt, const Batch& batch);

}  // namespace oelm
