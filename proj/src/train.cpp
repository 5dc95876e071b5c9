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

#include "oelm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "oelm/data.hpp"
#include "oelm/error.hpp"

namespace oelm {

void validate(const TrainSchedule& s) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kSchedule, what);
  };
  // A zero rate is allowed: it freezes the parameters.
  check(s.max_lr >= 0 && std::isfinite(s.max_lr), "max_lr must be non-negative");
  check(s.warmup_init_lr >= 0, "warmup_init_lr must be non-negative");
  check(s.warmup_init_lr <= s.max_lr, "warmup_init_lr must not exceed max_lr");
  check(s.warmup_steps > 0, "warmup_steps must be positive");
  check(s.total_steps > 0, "total_steps must be positive");
  check(s.warmup_steps < s.total_steps, "warmup_steps must be below total_steps");
  check(s.final_lr_fraction > 0 && s.final_lr_fraction <= 1, "final_lr_fraction must be in (0, 1]");
  check(s.weight_decay >= 0, "weight_decay must be non-negative");
  check(s.clip_norm > 0, "clip_norm must be positive");
}

double lr_at(std::int64_t step, const TrainSchedule& s) {
  validate(s);
  if (step < 0 || step > s.total_steps) {
    fail(ErrorKind::kSchedule, "step " + std::to_string(step) + " outside [0, " +
                                   std::to_string(s.total_steps) + "]");
  }
  if (step < s.warmup_steps) {
    return s.warmup_init_lr + (s.max_lr - s.warmup_init_lr) * static_cast<double>(step) /
                                  static_cast<double>(s.warmup_steps);
  }
  const double min_lr = s.final_lr_fraction * s.max_lr;
  const double p = static_cast<double>(step - s.warmup_steps) /
                   static_cast<double>(s.total_steps - s.warmup_steps);
  return min_lr + 0.5 * (s.max_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * p));
}

double global_norm(const Gradients& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.values()) ss += v * v;
  }
  return std::sqrt(ss);
}

double clip_gradients(Gradients& grads, double clip_norm) {
  for (const auto& [name, g] : grads) {
    for (double v : g.values()) {
      if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite gradient in '" + name + "'");
    }
  }
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) fail(ErrorKind::kNumeric, "gradient norm overflowed");
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& v : g.values()) v *= scale;
    }
  }
  return norm;
}

void adamw_update(std::span<double> param, std::span<const double> grad,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::int64_t step, double lr, const AdamHyper& h) {
  if (grad.size() != param.size() || first_moment.size() != param.size() ||
      second_moment.size() != param.size()) {
    fail(ErrorKind::kShape, "adamw_update buffers disagree in length");
  }
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * h.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    first_moment[i] = h.beta1 * first_moment[i] + (1.0 - h.beta1) * g;
    second_moment[i] = h.beta2 * second_moment[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = first_moment[i] / bc1;
    const double v_hat = second_moment[i] / bc2;
    param[i] *= decay;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

bool receives_weight_decay(std::string_view name) {
  return !is_norm_gain(name) && name != tensor_names::kEmbedding;
}

OptimizerState OptimizerState::for_checkpoint(const Checkpoint& ckpt) {
  OptimizerState st;
  for (const auto& [name, m] : ckpt.tensors) {
    st.first_moment.emplace(name, Matrix(m.rows(), m.cols()));
    st.second_moment.emplace(name, Matrix(m.rows(), m.cols()));
  }
  return st;
}

StepResult train_step(Checkpoint& ckpt, OptimizerState& opt, std::span<const Batch> batches,
                      const TrainSchedule& sched) {
  if (batches.empty()) fail(ErrorKind::kShape, "train_step needs at least one batch");
  const double lr = lr_at(opt.step, sched);
  for (const auto& [name, m] : ckpt.tensors) {
    auto it = opt.first_moment.find(name);
    if (it == opt.first_moment.end() || it->second.rows() != m.rows() ||
        it->second.cols() != m.cols()) {
      fail(ErrorKind::kShape, "optimizer state does not mirror tensor '" + name + "'");
    }
  }

  StepResult result;
  result.lr = lr;
  Gradients grads;
  const double share = 1.0 / static_cast<double>(batches.size());
  for (const Batch& b : batches) {
    LossAndGrad lg = loss_and_grad(ckpt, b);
    result.loss += share * lg.loss;
    if (grads.empty()) {
      grads = std::move(lg.grads);
      if (batches.size() > 1) {
        for (auto& [name, g] : grads) {
          for (double& v : g.values()) v *= share;
        }
      }
    } else {
      for (auto& [name, g] : grads) {
        auto src = lg.grads.at(name).values();
        auto dst = g.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += share * src[i];
      }
    }
  }
  if (!std::isfinite(result.loss)) fail(ErrorKind::kNumeric, "loss is not finite");
  // Throws before any parameter is touched.
  result.grad_norm = clip_gradients(grads, sched.clip_norm);

  const std::int64_t t = opt.step + 1;
  for (auto& [name, param] : ckpt.tensors) {
    AdamHyper h{sched.adam_beta1, sched.adam_beta2, sched.adam_epsilon,
                receives_weight_decay(name) ? sched.weight_decay : 0.0};
    adamw_update(param.values(), grads.at(name).values(), opt.first_moment.at(name).values(),
                 opt.second_moment.at(name).values(), t, lr, h);
  }
  opt.step = t;
  return result;
}

StepResult train_step(Checkpoint& ckpt, OptimizerState& opt, const Batch& batch,
                      const TrainSchedule& sched) {
  return train_step(ckpt, opt, std::span<const Batch>(&batch, 1), sched);
}

Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts) {
  if (ckpts.empty()) fail(ErrorKind::kFormat, "nothing to average");
  for (const Checkpoint& c : ckpts) {
    if (!(c.spec == ckpts[0].spec)) fail(ErrorKind::kFormat, "cannot average checkpoints with different specs");
    validate_checkpoint(c);
  }
  Checkpoint out = ckpts[0];
  // Copies of one checkpoint average to that checkpoint, header included.
  const bool same_note = std::all_of(ckpts.begin(), ckpts.end(), [&](const Checkpoint& c) {
    return c.init_note == ckpts[0].init_note;
  });
  if (!same_note) {
    out.init_note = "elementwise mean of " + std::to_string(ckpts.size()) + " checkpoints";
  }
  const auto k = static_cast<double>(ckpts.size());
  std::vector<double> vals(ckpts.size());
  for (auto& [name, m] : out.tensors) {
    std::vector<std::span<const double>> srcs;
    for (const Checkpoint& c : ckpts) srcs.push_back(c.tensor(name).values());
    auto dst = m.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      for (std::size_t j = 0; j < srcs.size(); ++j) vals[j] = srcs[j][i];
      // Sorting makes the result independent of input order, and measuring
      // from the smallest value keeps the mean of identical inputs exact.
      std::sort(vals.begin(), vals.end());
      double excess = 0.0;
      for (double v : vals) excess += v - vals[0];
      dst[i] = vals[0] + excess / k;
    }
  }
  return out;
}

Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths) {
  std::vector<Checkpoint> ckpts;
  ckpts.reserve(paths.size());
  for (const auto& p : paths) ckpts.push_back(load_checkpoint(p));
  return average_checkpoints(ckpts);
}

nlohmann::json to_json(const LossRecord& r) {
  return nlohmann::json{{"step", r.step},
                        {"lr", r.lr},
                        {"loss", r.loss},
                        {"grad_norm", r.grad_norm}};
}

double smoothed(std::span<const LossRecord> log, std::size_t end, std::size_t window) {
  if (end == 0 || end > log.size()) fail(ErrorKind::kShape, "smoothing window out of range");
  const std::size_t begin = end > window ? end - window : 0;
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += log[i].loss;
  return sum / static_cast<double>(end - begin);
}

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
  std::ostringstream name;
  name << "ckpt_" << std::setw(6) << std::setfill('0') << step << ".oelm";
  return dir / name.str();
}

}  // namespace

TrainSummary run_training(const TrainConfig& cfg,
                          const std::function<void(const LossRecord&)>& on_step) {
  validate(cfg.schedule);
  if (cfg.checkpoint_every <= 0) fail(ErrorKind::kConfig, "checkpoint_every must be positive");
  if (cfg.accumulation == 0) fail(ErrorKind::kConfig, "accumulation must be positive");
  const ScalePlan plan = build_plan(cfg.spec);
  const ByteTokenizer tokenizer;
  if (static_cast<std::size_t>(cfg.spec.vocab_size) < tokenizer.vocab_size()) {
    fail(ErrorKind::kConfig, "vocab_size " + std::to_string(cfg.spec.vocab_size) +
                                 " smaller than the byte tokenizer's " +
                                 std::to_string(tokenizer.vocab_size()));
  }
  const SourceManifest manifest = load_manifest(cfg.manifest);
  std::vector<Source> sources;
  for (const SourceSpec& s : manifest.sources) sources.push_back(load_source(s));
  DocumentStream stream(std::move(sources), tokenizer, manifest.policy, cfg.data_seed);
  BatchPacker packer(stream, tokenizer, static_cast<std::size_t>(cfg.spec.context_length),
                     cfg.tokens_per_batch);

  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream log_file(cfg.output_dir / "loss.jsonl", std::ios::trunc);
  if (!log_file) fail(ErrorKind::kData, "cannot write loss log in " + cfg.output_dir.string());

  Checkpoint ckpt = init_model(plan, cfg.seed);
  OptimizerState opt = OptimizerState::for_checkpoint(ckpt);
  TrainSummary summary;
  const auto start = std::chrono::steady_clock::now();
  std::vector<Batch> batches(cfg.accumulation);
  for (std::int64_t step = 0; step < cfg.schedule.total_steps; ++step) {
    for (Batch& b : batches) b = packer.next();
    const StepResult r = train_step(ckpt, opt, batches, cfg.schedule);
    LossRecord rec{step, r.lr, r.loss, r.grad_norm,
                   std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             start)
                       .count()};
    log_file << to_json(rec).dump() << "\n" << std::flush;
    summary.log.push_back(rec);
    if (on_step) on_step(rec);
    const std::int64_t done = step + 1;
    if (done % cfg.checkpoint_every == 0 || done == cfg.schedule.total_steps) {
      const auto path = checkpoint_path(cfg.output_dir, done);
      save_checkpoint(ckpt, path);
      summary.checkpoints.push_back(path);
    }
  }
  summary.final_checkpoint = summary.checkpoints.back();
  const std::size_t k = std::min(cfg.average_last, summary.checkpoints.size());
  if (k >= 2) {
    std::vector<std::filesystem::path> tail(summary.checkpoints.end() - static_cast<std::ptrdiff_t>(k),
                                            summary.checkpoints.end());
    summary.averaged_checkpoint = cfg.output_dir / "averaged.oelm";
    save_checkpoint(average_checkpoints(tail), summary.averaged_checkpoint);
  }
  return summary;
}

}  // namespace oelm
