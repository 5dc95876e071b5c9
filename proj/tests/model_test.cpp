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

#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oelm/model.hpp"
#include "oelm/nn.hpp"
#include "test_util.hpp"

using namespace oelm;
using oelm::testing::random_checkpoint;
using oelm::testing::random_tiny_spec;
using oelm::testing::thrown_kind;

namespace {

ModelSpec small_spec() {
  ModelSpec s;
  s.d_model = 16;
  s.num_layers = 2;
  s.head_dim = 4;
  s.alpha_min = 0.5;
  s.alpha_max = 1.0;
  s.beta_min = 0.5;
  s.beta_max = 2.0;
  s.vocab_size = 23;
  s.context_length = 16;
  s.kv_group = 2;
  return s;
}

std::vector<TokenId> random_tokens(std::size_t n, std::int64_t vocab, std::mt19937_64& rng) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab));
  return t;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("init is deterministic with unit norm gains") {
  const ScalePlan plan = build_plan(small_spec());
  const Checkpoint a = init_model(plan, 42), b = init_model(plan, 42), c = init_model(plan, 43);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& [name, m] : a.tensors) {
    if (!is_norm_gain(name)) continue;
    for (double v : m.values()) CHECK(v == 1.0);
  }
  CHECK(a.parameter_count() == count_parameters(plan));
}

TEST_CASE("init standard deviation") {
  ModelSpec s = small_spec();
  s.vocab_size = 20000;
  const Checkpoint ckpt = init_model(build_plan(s), 1);
  const auto& e = ckpt.tensor(tensor_names::kEmbedding).values();
  const double mean = std::accumulate(e.begin(), e.end(), 0.0) / e.size();
  double var = 0.0;
  for (double v : e) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / e.size());
  CHECK(sd >= 0.017);
  CHECK(sd <= 0.023);
  for (double v : e) CHECK(std::abs(v) <= 0.04 + 1e-7);
}

TEST_CASE("weight tying shares the embedding matrix") {
  const Checkpoint tied = init_model(build_plan(small_spec()), 1);
  const Transformer model(tied);
  CHECK(&model.output_projection() == &tied.tensor(tensor_names::kEmbedding));
  CHECK(tied.tensors.count(std::string(tensor_names::kOutput)) == 0);

  ModelSpec s = small_spec();
  s.weight_tying = false;
  const Checkpoint untied = init_model(build_plan(s), 1);
  const Transformer m2(untied);
  CHECK(&m2.output_projection() == &untied.tensor(tensor_names::kOutput));
}

TEST_CASE("single token forward equals decode on an empty cache") {
  const Checkpoint ckpt = random_checkpoint(small_spec(), 3);
  const Transformer model(ckpt);
  for (TokenId t : {0, 7, 22}) {
    const TokenId one[1] = {t};
    const Matrix full = model.forward(one);
    KVCache cache = model.make_cache();
    const auto step = model.decode_step(cache, t);
    CHECK(cache.filled() == 1);
    for (std::size_t v = 0; v < step.size(); ++v) CHECK(rel(step[v], full(0, v)) < 1e-12);
  }
}

TEST_CASE("logits are finite and softmax normalizes") {
  std::mt19937_64 rng(4);
  const Checkpoint ckpt = random_checkpoint(small_spec(), 4);
  const Matrix logits = forward(ckpt, random_tokens(9, 23, rng));
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    std::vector<double> p(logits.row(t).begin(), logits.row(t).end());
    for (double v : p) CHECK(std::isfinite(v));
    nn::softmax(p);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("future tokens never change earlier logits") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelSpec s = random_tiny_spec(rng);
    const Checkpoint ckpt = random_checkpoint(s, rng());
    const Transformer model(ckpt);
    auto tokens = random_tokens(8, s.vocab_size, rng);
    const Matrix base = model.forward(tokens);
    const std::size_t cut = 1 + rng() % 7;
    for (std::size_t i = cut; i < tokens.size(); ++i) {
      tokens[i] = static_cast<TokenId>((tokens[i] + 1 + rng() % 5) % s.vocab_size);
    }
    const Matrix changed = model.forward(tokens);
    for (std::size_t t = 0; t < cut; ++t) {
      for (std::size_t v = 0; v < base.cols(); ++v) CHECK(changed(t, v) == base(t, v));
    }
  }
}

TEST_CASE("prefill then decode matches the full forward") {
  std::mt19937_64 rng(6);
  const Checkpoint ckpt = random_checkpoint(small_spec(), 6);
  const Transformer model(ckpt);
  const auto tokens = random_tokens(8, 23, rng);
  const Matrix full = model.forward(tokens);
  KVCache cache = model.make_cache();
  Matrix last = model.forward_cached(std::span(tokens).first(5), cache, false);
  std::vector<double> row(last.values().begin(), last.values().end());
  for (std::size_t v = 0; v < row.size(); ++v) CHECK(rel(row[v], full(4, v)) < 1e-10);
  for (std::size_t i = 5; i < 8; ++i) {
    row = model.decode_step(cache, tokens[i]);
    for (std::size_t v = 0; v < row.size(); ++v) CHECK(rel(row[v], full(i, v)) < 1e-10);
  }
  CHECK(cache.filled() == 8);
}

TEST_CASE("cache capacity and token range are enforced") {
  const Checkpoint ckpt = random_checkpoint(small_spec(), 7);
  const Transformer model(ckpt);
  KVCache cache = model.make_cache();
  for (int i = 0; i < 16; ++i) (void)model.decode_step(cache, 1);
  CHECK(thrown_kind([&] { model.decode_step(cache, 1); }) == ErrorKind::kContext);
  const std::vector<TokenId> too_long(17, 1);
  CHECK(thrown_kind([&] { model.forward(too_long); }) == ErrorKind::kContext);
  const std::vector<TokenId> bad{23};
  CHECK(thrown_kind([&] { model.forward(bad); }) == ErrorKind::kData);
}

TEST_CASE("generation") {
  const Checkpoint ckpt = random_checkpoint(small_spec(), 8);
  const std::vector<TokenId> prompt{1, 2, 3};
  const SamplerConfig greedy;
  const Generation a = generate(ckpt, prompt, 6, greedy);
  const Generation b = generate(ckpt, prompt, 6, greedy);
  CHECK(a.tokens == b.tokens);
  CHECK(a.tokens.size() == 9);
  CHECK(a.decode_steps == 6);

  const Generation none = generate(ckpt, prompt, 0, greedy);
  CHECK(none.tokens == prompt);
  CHECK(none.decode_steps == 0);
  CHECK(none.generation_seconds == 0.0);

  SamplerConfig cold;
  cold.mode = SamplerConfig::Mode::kTemperature;
  cold.temperature = 1e-6;
  cold.seed = 99;
  CHECK(generate(ckpt, prompt, 6, cold).tokens == a.tokens);

  SamplerConfig warm = cold;
  warm.temperature = 1.0;
  CHECK(generate(ckpt, prompt, 6, warm).tokens == generate(ckpt, prompt, 6, warm).tokens);

  CHECK(thrown_kind([&] { generate(ckpt, prompt, 14, greedy); }) == ErrorKind::kContext);
  CHECK_NOTHROW(generate(ckpt, prompt, 13, greedy));
  SamplerConfig broken = cold;
  broken.temperature = 0.0;
  CHECK(thrown_kind([&] { generate(ckpt, prompt, 1, broken); }) == ErrorKind::kConfig);
}

TEST_CASE("argmax breaks ties toward the lowest id") {
  const std::vector<double> l{0.5, 2.0, 2.0, -1.0};
  CHECK(argmax(l) == 1);
}

TEST_CASE("naive norm variant gives the same logits") {
  std::mt19937_64 rng(9);
  const Checkpoint ckpt = random_checkpoint(small_spec(), 9);
  const auto tokens = random_tokens(10, 23, rng);
  const Matrix a = Transformer(ckpt, nn::NormVariant::kNaive).forward(tokens);
  const Matrix b = Transformer(ckpt, nn::NormVariant::kFused).forward(tokens);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(rel(a.values()[i], b.values()[i]) < 1e-12);
}

TEST_CASE("full model loss gradient") {
  ModelSpec s = small_spec();
  s.d_model = 8;
  s.vocab_size = 11;
  s.weight_tying = false;
  for (bool tied : {false, true}) {
    s.weight_tying = tied;
    Checkpoint ckpt = random_checkpoint(s, tied ? 10 : 11);
    std::mt19937_64 rng(12);
    Batch batch;
    batch.rows = 2;
    batch.length = 4;
    batch.inputs = random_tokens(8, s.vocab_size, rng);
    batch.targets = random_tokens(8, s.vocab_size, rng);
    batch.separator = 10;
    LossAndGrad lg = loss_and_grad(ckpt, batch);
    CHECK(lg.loss == doctest::Approx(evaluate_loss(ckpt, batch)).epsilon(1e-13));
    double worst = 0.0;
    for (auto& [name, m] : ckpt.tensors) {
      const Matrix& g = lg.grads.at(name);
      worst = std::max(worst, oelm::testing::check_gradient(
                                  m.values(), g.values(), [&] { return evaluate_loss(ckpt, batch); }));
    }
    CHECK(worst <= 1.0);
  }
}
