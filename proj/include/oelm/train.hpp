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
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oelm/batch.hpp"
#include "oelm/checkpoint.hpp"
#include "oelm/model.hpp"

namespace oelm {

struct TrainSchedule {
  double max_lr = 0.0024;
  double warmup_init_lr = 1e-6;
  std::int64_t warmup_steps = 5000;
  std::int64_t total_steps = 350000;
  double final_lr_fraction = 0.1;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_epsilon = 1e-8;
};

void validate(const TrainSchedule& sched);

// Linear warmup from warmup_init_lr to max_lr, then cosine decay from max_lr
// to final_lr_fraction * max_lr, reached exactly at total_steps.
double lr_at(std::int64_t step, const TrainSchedule& sched);

// Scales every gradient by clip_norm / norm when the global L2 norm exceeds
// clip_norm. Returns the pre-clip norm. Non-finite gradients raise a numeric
// error before anything is modified.
double clip_gradients(Gradients& grads, double clip_norm);
double global_norm(const Gradients& grads);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

// One decoupled-weight-decay Adam update of a single tensor. `step` is the
// 1-based update count used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::int64_t step, double lr, const AdamHyper& hyper);

// Weight decay applies to every tensor except norm gains and tok_embeddings.
bool receives_weight_decay(std::string_view tensor_name);

struct OptimizerState {
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
  std::int64_t step = 0;

  static OptimizerState for_checkpoint(const Checkpoint& ckpt);
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Forward, backward, clip, AdamW at lr_at(opt.step); increments opt.step.
// Several batches act as gradient accumulation (their gradients are
// averaged). Either every tensor is updated or none is.
StepResult train_step(Checkpoint& ckpt, OptimizerState& opt, std::span<const Batch> batches,
                      const TrainSchedule& sched);
StepResult train_step(Checkpoint& ckpt, OptimizerState& opt, const Batch& batch,
                      const TrainSchedule& sched);

// Elementwise mean of every tensor; all inputs must share one spec.
Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts);
Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths);

// ---------------------------------------------------------------------------
// Desk-scale training run
// ---------------------------------------------------------------------------

struct TrainConfig {
  ModelSpec spec;
  TrainSchedule schedule;
  std::filesystem::path manifest;
  std::uint64_t seed = 0;       // model init
  std::uint64_t data_seed = 0;  // document stream
  std::size_t tokens_per_batch = 512;
  std::size_t accumulation = 1;
  std::int64_t checkpoint_every = 50;
  std::size_t average_last = 5;
  std::filesystem::path output_dir;
};

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

// Omits wall_ms so loss logs are reproducible byte for byte.
nlohmann::json to_json(const LossRecord& r);

struct TrainSummary {
  std::vector<LossRecord> log;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path final_checkpoint;
  std::filesystem::path averaged_checkpoint;  // empty when fewer than two checkpoints
};

// Trains from a fresh init, appending one JSON line per step to
// output_dir/loss.jsonl and saving output_dir/ckpt_<step>.oelm every
// checkpoint_every steps and at the end, plus the average of the last
// `average_last` checkpoints as output_dir/averaged.oelm.
TrainSummary run_training(const TrainConfig& cfg,
                          const std::function<void(const LossRecord&)>& on_step = {});

// Mean of a window of trailing values, used to smooth noisy loss curves.
double smoothed(std::span<const LossRecord> log, std::size_t end, std::size_t window);

}  // namespace oelm
