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
#include <fstream>
#include <random>

#include "doctest.h"
#include "oelm/train.hpp"
#include "test_util.hpp"

using namespace oelm;
using oelm::testing::random_checkpoint;
using oelm::testing::thrown_kind;

namespace {

ModelSpec small_spec() {
  ModelSpec s;
  s.d_model = 8;
  s.num_layers = 2;
  s.head_dim = 4;
  s.alpha_min = 0.5;
  s.beta_min = 1.0;
  s.beta_max = 2.0;
  s.vocab_size = 13;
  s.context_length = 8;
  s.kv_group = 1;
  return s;
}

Batch random_batch(std::mt19937_64& rng, std::int64_t vocab, std::size_t rows, std::size_t len) {
  Batch b;
  b.rows = rows;
  b.length = len;
  b.separator = static_cast<TokenId>(vocab - 1);
  for (std::size_t i = 0; i < rows * len; ++i) {
    b.inputs.push_back(static_cast<TokenId>(rng() % vocab));
    b.targets.push_back(static_cast<TokenId>(rng() % vocab));
  }
  return b;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST_CASE("schedule endpoints with default values") {
  const TrainSchedule s;
  CHECK(rel(lr_at(0, s), 1e-6) <= 1e-15);
  CHECK(rel(lr_at(5000, s), 0.0024) <= 1e-15);
  CHECK(rel(lr_at(350000, s), 0.1 * 0.0024) <= 1e-15);
  // Cosine midpoint: 0.1 + 0.9 * 0.5 of the peak.
  CHECK(rel(lr_at(5000 + 172500, s), 0.55 * 0.0024) <= 1e-14);
  CHECK(rel(lr_at(4999, s), 1e-6 + (0.0024 - 1e-6) * 4999.0 / 5000.0) <= 1e-15);
}

TEST_CASE("schedule is continuous and monotone around the peak") {
  const TrainSchedule s;
  const double before = lr_at(4999, s), at = lr_at(5000, s), after = lr_at(5001, s);
  CHECK(before < at);
  CHECK(after < at);
  CHECK(at - before < 1e-6);
  CHECK(at - after < 1e-9);
  for (std::int64_t step = 5000; step < 350000; step += 997) CHECK(lr_at(step + 1, s) <= lr_at(step, s));
}

TEST_CASE("schedule validation") {
  TrainSchedule s;
  CHECK(thrown_kind([&] { lr_at(-1, s); }) == ErrorKind::kSchedule);
  CHECK(thrown_kind([&] { lr_at(350001, s); }) == ErrorKind::kSchedule);
  s.warmup_steps = s.total_steps;
  CHECK(thrown_kind([&] { validate(s); }) == ErrorKind::kSchedule);
  s = TrainSchedule{};
  s.final_lr_fraction = 1.5;
  CHECK(thrown_kind([&] { validate(s); }) == ErrorKind::kSchedule);
}

TEST_CASE("gradient clipping") {
  Gradients g;
  g["a"] = Matrix(1, 2, std::vector<double>{3.0, 4.0});
  CHECK(clip_gradients(g, 1.0) == 5.0);
  CHECK(g["a"](0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(g["a"](0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  Gradients small;
  small["a"] = Matrix(1, 2, std::vector<double>{0.3, 0.4});
  const Gradients copy = small;
  CHECK(clip_gradients(small, 1.0) == doctest::Approx(0.5));
  CHECK(small == copy);

  Gradients big;
  big["a"] = Matrix(1, 4, std::vector<double>{2.0, 2.0, 2.0, 2.0});
  big["b"] = Matrix(1, 0);
  CHECK(clip_gradients(big, 1.0) == doctest::Approx(4.0));
  for (double v : big["a"].values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(global_norm(big) - 1.0) < 1e-12);

  Gradients bad;
  bad["a"] = Matrix(1, 2, std::vector<double>{1.0, 1.0});
  bad["b"] = Matrix(1, 1, std::vector<double>{NAN});
  const Gradients bad_copy = bad;
  CHECK(thrown_kind([&] { clip_gradients(bad, 0.1); }) == ErrorKind::kNumeric);
  CHECK(bad.at("a") == bad_copy.at("a"));
}

TEST_CASE("adamw matches a scalar reference") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  const AdamHyper h{0.9, 0.95, 1e-8, 0.1};
  std::vector<double> p(5), m(5, 0.0), v(5, 0.0);
  for (auto& x : p) x = n(rng);
  std::vector<double> rp = p, rm(5, 0.0), rv(5, 0.0);
  for (int t = 1; t <= 6; ++t) {
    std::vector<double> g(5);
    for (auto& x : g) x = n(rng);
    const double lr = 0.01 * t;
    adamw_update(p, g, m, v, t, lr, h);
    for (int i = 0; i < 5; ++i) {
      rm[i] = 0.9 * rm[i] + 0.1 * g[i];
      rv[i] = 0.95 * rv[i] + 0.05 * g[i] * g[i];
      const double mh = rm[i] / (1 - std::pow(0.9, t));
      const double vh = rv[i] / (1 - std::pow(0.95, t));
      rp[i] = rp[i] - lr * 0.1 * rp[i] - lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(rp[i]).epsilon(1e-13));
}

TEST_CASE("weight decay exemptions") {
  CHECK(receives_weight_decay("layer.00.attn.wq"));
  CHECK(receives_weight_decay("output"));
  CHECK_FALSE(receives_weight_decay("tok_embeddings"));
  CHECK_FALSE(receives_weight_decay("layer.01.ffn_norm"));
  CHECK_FALSE(receives_weight_decay("final_norm"));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  std::mt19937_64 rng(4);
  Checkpoint ckpt = random_checkpoint(small_spec(), 4);
  const Checkpoint before = ckpt;
  OptimizerState opt = OptimizerState::for_checkpoint(ckpt);
  TrainSchedule s;
  s.max_lr = 0.0;
  s.warmup_init_lr = 0.0;
  s.warmup_steps = 2;
  s.total_steps = 10;
  for (int i = 0; i < 3; ++i) train_step(ckpt, opt, random_batch(rng, 13, 2, 8), s);
  CHECK(ckpt == before);
  CHECK(opt.step == 3);
}

TEST_CASE("train steps are deterministic and reduce loss on a fixed batch") {
  TrainSchedule s;
  s.max_lr = 0.01;
  s.warmup_init_lr = 0.01;
  s.warmup_steps = 1;
  s.total_steps = 100;
  auto run = [&] {
    std::mt19937_64 rng(5);
    const Batch b = random_batch(rng, 13, 2, 8);
    Checkpoint ckpt = init_model(build_plan(small_spec()), 5);
    OptimizerState opt = OptimizerState::for_checkpoint(ckpt);
    std::vector<double> losses;
    for (int i = 0; i < 30; ++i) losses.push_back(train_step(ckpt, opt, b, s).loss);
    return losses;
  };
  const auto a = run(), b = run();
  CHECK(a == b);
  CHECK(a.back() < 0.5 * a.front());
}

TEST_CASE("accumulated batches average their gradients") {
  std::mt19937_64 rng(6);
  const Batch b1 = random_batch(rng, 13, 1, 8), b2 = random_batch(rng, 13, 1, 8);
  Batch joined = b1;
  joined.rows = 2;
  joined.inputs.insert(joined.inputs.end(), b2.inputs.begin(), b2.inputs.end());
  joined.targets.insert(joined.targets.end(), b2.targets.begin(), b2.targets.end());
  TrainSchedule s;
  s.warmup_steps = 1;
  s.total_steps = 10;
  s.clip_norm = 1e9;
  Checkpoint c1 = random_checkpoint(small_spec(), 6), c2 = c1;
  OptimizerState o1 = OptimizerState::for_checkpoint(c1), o2 = o1;
  const std::vector<Batch> both{b1, b2};
  const StepResult r1 = train_step(c1, o1, both, s);
  const StepResult r2 = train_step(c2, o2, joined, s);
  CHECK(r1.loss == doctest::Approx(r2.loss).epsilon(1e-13));
  CHECK(r1.grad_norm == doctest::Approx(r2.grad_norm).epsilon(1e-12));
  for (const auto& [name, m] : c1.tensors) {
    const auto other = c2.tensor(name).values();
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(m.values()[i] == doctest::Approx(other[i]).epsilon(1e-9));
  }
}

TEST_CASE("checkpoint averaging") {
  const ScalePlan plan = build_plan(small_spec());
  const Checkpoint a = init_model(plan, 7);
  const std::vector<Checkpoint> five(5, a);
  CHECK(average_checkpoints(five) == a);

  Checkpoint zero = a, twice = a, half = a;
  for (auto& [name, m] : zero.tensors) m.fill(0.0);
  for (auto& [name, m] : twice.tensors) {
    for (double& v : m.values()) v *= 2.0;
  }
  const std::vector<Checkpoint> pair{zero, twice};
  CHECK(average_checkpoints(pair) == a);

  std::vector<Checkpoint> random;
  for (int i = 0; i < 4; ++i) random.push_back(random_checkpoint(small_spec(), 100 + i));
  const Checkpoint avg = average_checkpoints(random);
  for (const auto& [name, m] : avg.tensors) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      double sum = 0.0;
      for (const Checkpoint& c : random) sum += c.tensor(name).values()[i];
      CHECK(std::abs(m.values()[i] - sum / 4.0) < 1e-12);
    }
  }
  std::vector<Checkpoint> reversed(random.rbegin(), random.rend());
  CHECK(average_checkpoints(reversed) == avg);

  ModelSpec other = small_spec();
  other.num_layers = 3;
  const std::vector<Checkpoint> mixed{a, init_model(build_plan(other), 7)};
  CHECK(thrown_kind([&] { average_checkpoints(mixed); }) == ErrorKind::kFormat);
  CHECK(thrown_kind([] { average_checkpoints(std::span<const Checkpoint>{}); }) == ErrorKind::kFormat);
}

TEST_CASE("smoothing window") {
  std::vector<LossRecord> log;
  for (int i = 0; i < 6; ++i) log.push_back(LossRecord{i, 0.0, static_cast<double>(i), 0.0, 0.0});
  CHECK(smoothed(log, 6, 3) == doctest::Approx(4.0));
  CHECK(smoothed(log, 2, 5) == doctest::Approx(0.5));
  CHECK(thrown_kind([&] { smoothed(log, 7, 3); }) == ErrorKind::kShape);
}

TEST_CASE("short training run writes logs and checkpoints") {
  const auto dir = oelm::testing::scratch_dir("train_short");
  TrainConfig cfg;
  cfg.spec = load_model_spec(oelm::testing::source_dir() / "specs" / "tiny.cfg");
  cfg.spec.context_length = 32;
  cfg.manifest = oelm::testing::source_dir() / "data" / "manifest.json";
  cfg.schedule.warmup_steps = 2;
  cfg.schedule.total_steps = 6;
  cfg.schedule.max_lr = 0.003;
  cfg.tokens_per_batch = 64;
  cfg.checkpoint_every = 2;
  cfg.average_last = 2;
  cfg.output_dir = dir;
  const TrainSummary s = run_training(cfg);
  CHECK(s.log.size() == 6);
  CHECK(s.checkpoints.size() == 3);
  CHECK(s.final_checkpoint == dir / "ckpt_000006.oelm");
  CHECK(std::filesystem::exists(s.averaged_checkpoint));
  std::ifstream log(dir / "loss.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step").get<int>() == lines);
    CHECK_FALSE(j.contains("wall_ms"));
    ++lines;
  }
  CHECK(lines == 6);

  cfg.spec.vocab_size = 100;
  CHECK(thrown_kind([&] { run_training(cfg); }) == ErrorKind::kConfig);
}
