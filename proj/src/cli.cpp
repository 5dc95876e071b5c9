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

#include "oelm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "oelm/bench.hpp"
#include "oelm/checkpoint.hpp"
#include "oelm/data.hpp"
#include "oelm/model.hpp"
#include "oelm/scale_plan.hpp"
#include "oelm/train.hpp"

namespace oelm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return kExitUsage;
    case ErrorKind::kNumeric:
    case ErrorKind::kCorrectness: return kExitNumeric;
    default: return kExitData;
  }
}

json resolve_config(const json& defaults, const json& file, const json& flags) {
  json resolved = defaults.is_null() ? json::object() : defaults;
  if (!file.is_null()) resolved.merge_patch(file);
  if (!flags.is_null()) resolved.merge_patch(flags);
  return resolved;
}

void anchor_paths(json& cfg, const fs::path& config_path, const std::vector<std::string>& keys) {
  const fs::path base = config_path.parent_path();
  for (const std::string& key : keys) {
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const json::json_pointer ptr(pointer);
    if (!cfg.contains(ptr) || !cfg.at(ptr).is_string()) continue;
    const fs::path p = cfg.at(ptr).get<std::string>();
    if (p.is_relative()) cfg[ptr] = (base / p).lexically_normal().string();
  }
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfig, "malformed config " + path.string() + ": " + e.what());
  }
}

namespace {

// Writes <out>/run.jsonl (line-delimited events) and <out>/manifest.json
// (resolved configuration plus CRC32 of every artifact).
class RunRecord {
 public:
  RunRecord(fs::path dir, std::string command, std::vector<std::string> argv)
      : dir_(std::move(dir)), command_(std::move(command)), argv_(std::move(argv)) {
    fs::create_directories(dir_);
    log_.open(dir_ / "run.jsonl", std::ios::app);
    if (!log_) fail(ErrorKind::kData, "cannot write run log in " + dir_.string());
  }

  const fs::path& dir() const { return dir_; }

  void event(const std::string& name, json payload) {
    payload["event"] = name;
    payload["command"] = command_;
    log_ << payload.dump() << "\n" << std::flush;
  }

  void resolved(const json& config) {
    config_ = config;
    event("resolved_config", {{"config", config}});
  }

  void artifact(const fs::path& path) { artifacts_.push_back(path); }

  void finish() {
    json arts = json::object();
    for (const fs::path& p : artifacts_) {
      char hex[9];
      std::snprintf(hex, sizeof hex, "%08x", file_crc32(p));
      arts[p.string()] = {{"crc32", hex}, {"bytes", fs::file_size(p)}};
    }
    json manifest{{"command", command_},
                  {"argv", argv_},
                  {"config", config_},
                  {"artifacts", arts}};
    std::ofstream out(dir_ / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) fail(ErrorKind::kData, "cannot write manifest in " + dir_.string());
    event("finished", {});
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> argv_;
  std::ofstream log_;
  json config_ = json::object();
  std::vector<fs::path> artifacts_;
};

template <typename T>
void set_flag(json& flags, const std::string& pointer, const std::optional<T>& v) {
  if (v) flags[json::json_pointer(pointer)] = *v;
}

json file_layer(const std::optional<std::string>& path, const std::vector<std::string>& path_keys) {
  if (!path) return json();
  json j = load_json_file(*path);
  anchor_paths(j, *path, path_keys);
  return j;
}

ModelSpec spec_from_reference(const json& ref) {
  if (ref.is_string()) return load_model_spec(ref.get<std::string>());
  return model_spec_from_json(ref);
}

template <typename T>
T get(const json& cfg, const char* key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config key '") + key + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct PlanArgs {
  std::optional<std::string> config;
  std::optional<std::int64_t> d_model, num_layers, head_dim, vocab_size, context_length, kv_group;
  std::optional<double> alpha_min, alpha_max, beta_min, beta_max;
  std::optional<bool> weight_tying;
};

void cmd_plan(const PlanArgs& a, RunRecord& rec, std::ostream& out) {
  json flags = json::object();
  set_flag(flags, "/d_model", a.d_model);
  set_flag(flags, "/num_layers", a.num_layers);
  set_flag(flags, "/head_dim", a.head_dim);
  set_flag(flags, "/vocab_size", a.vocab_size);
  set_flag(flags, "/context_length", a.context_length);
  set_flag(flags, "/kv_group", a.kv_group);
  set_flag(flags, "/alpha_min", a.alpha_min);
  set_flag(flags, "/alpha_max", a.alpha_max);
  set_flag(flags, "/beta_min", a.beta_min);
  set_flag(flags, "/beta_max", a.beta_max);
  set_flag(flags, "/weight_tying", a.weight_tying);
  const ModelSpec spec =
      model_spec_from_json(resolve_config(json::object(), file_layer(a.config, {}), flags));
  rec.resolved(to_json(spec));
  const ScalePlan plan = build_plan(spec);

  out << std::setw(6) << "layer" << std::setw(10) << "alpha" << std::setw(10) << "beta"
      << std::setw(8) << "heads" << std::setw(9) << "kv_heads" << std::setw(8) << "ffn" << "\n";
  for (const LayerPlan& l : plan.layers) {
    out << std::setw(6) << l.index << std::fixed << std::setprecision(4) << std::setw(10)
        << l.alpha << std::setw(10) << l.beta << std::setw(8) << l.n_heads << std::setw(9)
        << l.n_kv_heads << std::setw(8) << l.ffn_hidden << "\n";
  }
  const std::int64_t params = count_parameters(plan);
  out << "parameters: " << params << "\n";
  out << "norm invocations per token: " << count_norm_invocations(plan) << "\n";
  rec.event("plan", {{"parameters", params}, {"norm_invocations", count_norm_invocations(plan)}});
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::optional<std::string> config, model, manifest;
  std::optional<std::int64_t> steps, warmup_steps, checkpoint_every;
  std::optional<double> max_lr;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<std::size_t> tokens_per_batch, accumulation, average_last;
};

json train_defaults() {
  const TrainSchedule s;
  const TrainConfig c;
  return json{{"schedule",
               {{"max_lr", s.max_lr},
                {"warmup_init_lr", s.warmup_init_lr},
                {"warmup_steps", s.warmup_steps},
                {"total_steps", s.total_steps},
                {"final_lr_fraction", s.final_lr_fraction},
                {"weight_decay", s.weight_decay},
                {"clip_norm", s.clip_norm},
                {"adam_beta1", s.adam_beta1},
                {"adam_beta2", s.adam_beta2},
                {"adam_epsilon", s.adam_epsilon}}},
              {"seed", c.seed},
              {"data_seed", c.data_seed},
              {"tokens_per_batch", c.tokens_per_batch},
              {"accumulation", c.accumulation},
              {"checkpoint_every", c.checkpoint_every},
              {"average_last", c.average_last}};
}

TrainConfig train_config_from_json(const json& cfg, const fs::path& out_dir) {
  TrainConfig c;
  if (!cfg.contains("model")) fail(ErrorKind::kConfig, "train config needs 'model'");
  if (!cfg.contains("manifest")) fail(ErrorKind::kConfig, "train config needs 'manifest'");
  c.spec = spec_from_reference(cfg.at("model"));
  c.manifest = get<std::string>(cfg, "manifest");
  const json& s = cfg.at("schedule");
  c.schedule.max_lr = get<double>(s, "max_lr");
  c.schedule.warmup_init_lr = get<double>(s, "warmup_init_lr");
  c.schedule.warmup_steps = get<std::int64_t>(s, "warmup_steps");
  c.schedule.total_steps = get<std::int64_t>(s, "total_steps");
  c.schedule.final_lr_fraction = get<double>(s, "final_lr_fraction");
  c.schedule.weight_decay = get<double>(s, "weight_decay");
  c.schedule.clip_norm = get<double>(s, "clip_norm");
  c.schedule.adam_beta1 = get<double>(s, "adam_beta1");
  c.schedule.adam_beta2 = get<double>(s, "adam_beta2");
  c.schedule.adam_epsilon = get<double>(s, "adam_epsilon");
  c.seed = get<std::uint64_t>(cfg, "seed");
  c.data_seed = get<std::uint64_t>(cfg, "data_seed");
  c.tokens_per_batch = get<std::size_t>(cfg, "tokens_per_batch");
  c.accumulation = get<std::size_t>(cfg, "accumulation");
  c.checkpoint_every = get<std::int64_t>(cfg, "checkpoint_every");
  c.average_last = get<std::size_t>(cfg, "average_last");
  c.output_dir = out_dir;
  return c;
}

void cmd_train(const TrainArgs& a, RunRecord& rec, std::ostream& out) {
  json flags = json::object();
  set_flag(flags, "/model", a.model);
  set_flag(flags, "/manifest", a.manifest);
  set_flag(flags, "/schedule/total_steps", a.steps);
  set_flag(flags, "/schedule/warmup_steps", a.warmup_steps);
  set_flag(flags, "/schedule/max_lr", a.max_lr);
  set_flag(flags, "/seed", a.seed);
  set_flag(flags, "/data_seed", a.data_seed);
  set_flag(flags, "/tokens_per_batch", a.tokens_per_batch);
  set_flag(flags, "/accumulation", a.accumulation);
  set_flag(flags, "/checkpoint_every", a.checkpoint_every);
  set_flag(flags, "/average_last", a.average_last);
  json cfg = resolve_config(train_defaults(), file_layer(a.config, {"model", "manifest"}), flags);
  const TrainConfig tc = train_config_from_json(cfg, rec.dir());
  cfg["model"] = to_json(tc.spec);
  rec.resolved(cfg);

  const TrainSummary summary = run_training(tc, [&](const LossRecord& r) {
    if (r.step % 10 == 0 || r.step + 1 == tc.schedule.total_steps) {
      out << "step " << r.step << " lr " << r.lr << " loss " << r.loss << " grad_norm "
          << r.grad_norm << "\n";
    }
  });
  rec.event("training_done", {{"steps", summary.log.size()},
                              {"wall_ms", summary.log.empty() ? 0.0 : summary.log.back().wall_ms}});
  rec.artifact(rec.dir() / "loss.jsonl");
  for (const auto& p : summary.checkpoints) rec.artifact(p);
  if (!summary.averaged_checkpoint.empty()) rec.artifact(summary.averaged_checkpoint);
  out << "final checkpoint: " << summary.final_checkpoint.string() << "\n";
  if (!summary.averaged_checkpoint.empty()) {
    out << "averaged checkpoint: " << summary.averaged_checkpoint.string() << "\n";
  }
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::optional<std::string> config, ckpt, prompt, prompt_ids;
  std::optional<std::size_t> n_new;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
};

std::vector<TokenId> parse_ids(const std::string& text) {
  std::vector<TokenId> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      ids.push_back(static_cast<TokenId>(v));
    } catch (const std::exception&) {
      fail(ErrorKind::kUsage, "bad token id '" + item + "'");
    }
  }
  return ids;
}

void cmd_generate(const GenerateArgs& a, RunRecord& rec, std::ostream& out) {
  json flags = json::object();
  set_flag(flags, "/ckpt", a.ckpt);
  set_flag(flags, "/prompt", a.prompt);
  set_flag(flags, "/prompt_ids", a.prompt_ids);
  set_flag(flags, "/n_new", a.n_new);
  set_flag(flags, "/temperature", a.temperature);
  set_flag(flags, "/seed", a.seed);
  const json defaults{{"n_new", 64}, {"temperature", 0.0}, {"seed", 0}};
  const json cfg = resolve_config(defaults, file_layer(a.config, {"ckpt"}), flags);
  rec.resolved(cfg);
  if (!cfg.contains("ckpt")) fail(ErrorKind::kUsage, "generate needs --ckpt");

  const fs::path ckpt_path = get<std::string>(cfg, "ckpt");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  rec.artifact(ckpt_path);
  const ByteTokenizer tokenizer;
  const bool byte_vocab = static_cast<std::size_t>(ckpt.spec.vocab_size) >= tokenizer.vocab_size();
  std::vector<TokenId> prompt;
  if (cfg.contains("prompt_ids")) {
    prompt = parse_ids(get<std::string>(cfg, "prompt_ids"));
  } else if (cfg.contains("prompt")) {
    if (!byte_vocab) fail(ErrorKind::kUsage, "text prompts need a byte-level vocabulary; use --prompt-ids");
    prompt = tokenizer.encode(get<std::string>(cfg, "prompt"));
  } else {
    fail(ErrorKind::kUsage, "generate needs --prompt or --prompt-ids");
  }

  SamplerConfig sampler;
  const double temperature = get<double>(cfg, "temperature");
  if (temperature > 0.0) {
    sampler.mode = SamplerConfig::Mode::kTemperature;
    sampler.temperature = temperature;
  } else if (temperature < 0.0) {
    fail(ErrorKind::kUsage, "temperature must be >= 0 (0 selects greedy decoding)");
  }
  sampler.seed = get<std::uint64_t>(cfg, "seed");

  const Generation g = generate(ckpt, prompt, get<std::size_t>(cfg, "n_new"), sampler);
  const std::span<const TokenId> fresh(g.tokens.data() + prompt.size(),
                                       g.tokens.size() - prompt.size());
  if (byte_vocab) out << tokenizer.decode(fresh) << "\n";
  json result{{"tokens", std::vector<TokenId>(fresh.begin(), fresh.end())},
              {"prefill_seconds", g.prefill_seconds},
              {"generation_seconds", g.generation_seconds},
              {"decode_steps", g.decode_steps}};
  out << result.dump() << "\n";
  rec.event("generation", result);
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::optional<std::string> config, model, ckpt, norm, csv, label;
  std::optional<std::size_t> prompt_tokens, gen_tokens, reps, warmup;
  std::optional<bool> dry_run;
  std::optional<std::uint64_t> seed;
};

void cmd_bench(const BenchArgs& a, RunRecord& rec, std::ostream& out) {
  json flags = json::object();
  set_flag(flags, "/model", a.model);
  set_flag(flags, "/ckpt", a.ckpt);
  set_flag(flags, "/norm", a.norm);
  set_flag(flags, "/csv", a.csv);
  set_flag(flags, "/label", a.label);
  set_flag(flags, "/prompt_tokens", a.prompt_tokens);
  set_flag(flags, "/gen_tokens", a.gen_tokens);
  set_flag(flags, "/repetitions", a.reps);
  set_flag(flags, "/warmup_passes", a.warmup);
  set_flag(flags, "/dry_run", a.dry_run);
  set_flag(flags, "/seed", a.seed);
  const BenchProtocol p;
  const json defaults{{"norm", "both"},         {"label", "model"},
                      {"prompt_tokens", p.prompt_tokens}, {"gen_tokens", p.gen_tokens},
                      {"repetitions", p.repetitions},     {"warmup_passes", p.warmup_passes},
                      {"dry_run", p.dry_run},             {"seed", 0}};
  json cfg = resolve_config(defaults, file_layer(a.config, {"model", "ckpt", "csv"}), flags);

  Checkpoint ckpt;
  if (cfg.contains("ckpt")) {
    ckpt = load_checkpoint(get<std::string>(cfg, "ckpt"));
    rec.artifact(get<std::string>(cfg, "ckpt"));
  } else if (cfg.contains("model")) {
    const ModelSpec spec = spec_from_reference(cfg.at("model"));
    cfg["model"] = to_json(spec);
    ckpt = init_model(build_plan(spec), get<std::uint64_t>(cfg, "seed"));
  } else {
    fail(ErrorKind::kUsage, "bench needs --model or --ckpt");
  }
  rec.resolved(cfg);

  BenchProtocol protocol;
  protocol.prompt_tokens = get<std::size_t>(cfg, "prompt_tokens");
  protocol.gen_tokens = get<std::size_t>(cfg, "gen_tokens");
  protocol.repetitions = get<std::size_t>(cfg, "repetitions");
  protocol.warmup_passes = get<std::size_t>(cfg, "warmup_passes");
  protocol.dry_run = get<bool>(cfg, "dry_run");
  protocol.prompt_seed = get<std::uint64_t>(cfg, "seed");

  const std::string norm = get<std::string>(cfg, "norm");
  std::vector<ThroughputReport> reports;
  if (norm == "both") {
    const NormComparison cmp = compare_norm_variants(ckpt, protocol);
    reports = {cmp.naive, cmp.fused};
    rec.event("norm_comparison", {{"speedup", cmp.speedup}, {"max_logit_diff", cmp.max_logit_diff}});
    out << "fused/naive generation speedup: " << cmp.speedup << "\n";
  } else if (norm == "naive" || norm == "fused") {
    reports.push_back(run_benchmark(
        ckpt, protocol, norm == "naive" ? nn::NormVariant::kNaive : nn::NormVariant::kFused));
  } else {
    fail(ErrorKind::kUsage, "--norm must be naive, fused or both");
  }
  const std::string label = get<std::string>(cfg, "label");
  out << csv_header() << "\n";
  for (const ThroughputReport& r : reports) {
    out << csv_row(label, r) << "\n";
    rec.event("throughput", to_json(r));
  }
  if (cfg.contains("csv")) {
    const fs::path csv_path = get<std::string>(cfg, "csv");
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << csv_header() << "\n";
    for (const ThroughputReport& r : reports) csv << csv_row(label, r) << "\n";
    csv.close();
    if (!csv) fail(ErrorKind::kData, "cannot write " + csv_path.string());
    rec.artifact(csv_path);
  }
}

// ---------------------------------------------------------------------------

struct FilterArgs {
  std::optional<std::string> config, manifest;
  std::optional<std::int64_t> min_chars, min_tokens;
};

void cmd_filter_stats(const FilterArgs& a, RunRecord& rec, std::ostream& out) {
  json flags = json::object();
  set_flag(flags, "/manifest", a.manifest);
  set_flag(flags, "/min_chars", a.min_chars);
  set_flag(flags, "/min_tokens", a.min_tokens);
  json cfg = resolve_config(json::object(), file_layer(a.config, {"manifest"}), flags);
  if (!cfg.contains("manifest")) fail(ErrorKind::kUsage, "filter-stats needs --manifest");
  SourceManifest manifest = load_manifest(get<std::string>(cfg, "manifest"));
  if (cfg.contains("min_chars")) manifest.policy.min_chars = get<std::int64_t>(cfg, "min_chars");
  if (cfg.contains("min_tokens")) manifest.policy.min_tokens = get<std::int64_t>(cfg, "min_tokens");
  cfg["min_chars"] = manifest.policy.min_chars;
  cfg["min_tokens"] = manifest.policy.min_tokens;
  rec.resolved(cfg);

  const ByteTokenizer tokenizer;
  out << std::left << std::setw(16) << "source" << std::right << std::setw(10) << "documents"
      << std::setw(8) << "kept" << std::setw(14) << "skipped_chars" << std::setw(15)
      << "skipped_tokens" << "\n";
  for (const SourceSpec& s : manifest.sources) {
    const FilterStats st = filter_stats(load_source(s), tokenizer, manifest.policy);
    rec.artifact(s.path);
    out << std::left << std::setw(16) << st.source << std::right << std::setw(10) << st.documents
        << std::setw(8) << st.kept << std::setw(14) << st.skipped_chars << std::setw(15)
        << st.skipped_tokens << "\n";
    rec.event("filter_stats", {{"source", st.source},
                               {"documents", st.documents},
                               {"kept", st.kept},
                               {"skipped", {{"chars", st.skipped_chars}, {"tokens", st.skipped_tokens}}}});
  }
}

// ---------------------------------------------------------------------------

struct AvgArgs {
  std::vector<std::string> inputs;
  std::string output;
};

void cmd_avg(const AvgArgs& a, RunRecord& rec, std::ostream& out) {
  rec.resolved({{"inputs", a.inputs}, {"output", a.output}});
  std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
  const Checkpoint avg = average_checkpoints(paths);
  save_checkpoint(avg, a.output);
  for (const auto& p : paths) rec.artifact(p);
  rec.artifact(a.output);
  out << "averaged " << paths.size() << " checkpoints into " << a.output << "\n";
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-wise scaled decoder-only transformer toolkit", "oelm"};
  app.require_subcommand(0, 1);

  std::string out_dir;
  auto add_common = [&](CLI::App* sub, std::optional<std::string>* config) {
    sub->add_option("--out", out_dir, "Run directory for manifest and logs")
        ->default_val("runs/" + sub->get_name());
    if (config != nullptr) sub->add_option("--config", *config, "Config file (JSON)");
  };

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Print the per-layer plan and parameter count");
  add_common(plan_cmd, &plan.config);
  plan_cmd->add_option("--d-model", plan.d_model);
  plan_cmd->add_option("--num-layers", plan.num_layers);
  plan_cmd->add_option("--head-dim", plan.head_dim);
  plan_cmd->add_option("--vocab-size", plan.vocab_size);
  plan_cmd->add_option("--context-length", plan.context_length);
  plan_cmd->add_option("--kv-group", plan.kv_group);
  plan_cmd->add_option("--alpha-min", plan.alpha_min);
  plan_cmd->add_option("--alpha-max", plan.alpha_max);
  plan_cmd->add_option("--beta-min", plan.beta_min);
  plan_cmd->add_option("--beta-max", plan.beta_max);
  plan_cmd->add_option("--weight-tying", plan.weight_tying);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from scratch");
  add_common(train_cmd, &train.config);
  train_cmd->add_option("--model", train.model, "Model spec file");
  train_cmd->add_option("--manifest", train.manifest, "Source manifest");
  train_cmd->add_option("--steps", train.steps);
  train_cmd->add_option("--warmup-steps", train.warmup_steps);
  train_cmd->add_option("--max-lr", train.max_lr);
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--data-seed", train.data_seed);
  train_cmd->add_option("--tokens-per-batch", train.tokens_per_batch);
  train_cmd->add_option("--accumulation", train.accumulation);
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every);
  train_cmd->add_option("--average-last", train.average_last);

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Generate tokens from a checkpoint");
  add_common(gen_cmd, &gen.config);
  gen_cmd->add_option("--ckpt", gen.ckpt);
  gen_cmd->add_option("--prompt", gen.prompt, "Prompt text (byte-level vocabularies)");
  gen_cmd->add_option("--prompt-ids", gen.prompt_ids, "Comma-separated prompt token ids");
  gen_cmd->add_option("-n,--n-new", gen.n_new);
  gen_cmd->add_option("--temperature", gen.temperature, "0 selects greedy decoding");
  gen_cmd->add_option("--seed", gen.seed);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Measure prefill and generation throughput");
  add_common(bench_cmd, &bench.config);
  bench_cmd->add_option("--model", bench.model, "Model spec file (randomly initialized)");
  bench_cmd->add_option("--ckpt", bench.ckpt);
  bench_cmd->add_option("--norm", bench.norm, "naive | fused | both");
  bench_cmd->add_option("--csv", bench.csv);
  bench_cmd->add_option("--label", bench.label);
  bench_cmd->add_option("--prompt-tokens", bench.prompt_tokens);
  bench_cmd->add_option("--gen-tokens", bench.gen_tokens);
  bench_cmd->add_option("--reps", bench.reps);
  bench_cmd->add_option("--warmup", bench.warmup);
  bench_cmd->add_option("--dry-run", bench.dry_run);
  bench_cmd->add_option("--seed", bench.seed);

  FilterArgs filter;
  auto* filter_cmd = app.add_subcommand("filter-stats", "Kept/skipped counts per source");
  add_common(filter_cmd, &filter.config);
  filter_cmd->add_option("--manifest", filter.manifest);
  filter_cmd->add_option("--min-chars", filter.min_chars);
  filter_cmd->add_option("--min-tokens", filter.min_tokens);

  AvgArgs avg;
  auto* avg_cmd = app.add_subcommand("avg-ckpt", "Average checkpoints elementwise");
  add_common(avg_cmd, nullptr);
  avg_cmd->add_option("inputs", avg.inputs, "Checkpoints to average")->required();
  avg_cmd->add_option("-o,--output", avg.output, "Output checkpoint")->required();

  std::vector<const char*> cargv;
  for (const std::string& s : argv) cargv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
  if (sub == nullptr) {
    err << app.help();
    return kExitUsage;
  }

  try {
    RunRecord rec(out_dir, sub->get_name(), argv);
    if (sub == plan_cmd) cmd_plan(plan, rec, out);
    else if (sub == train_cmd) cmd_train(train, rec, out);
    else if (sub == gen_cmd) cmd_generate(gen, rec, out);
    else if (sub == bench_cmd) cmd_bench(bench, rec, out);
    else if (sub == filter_cmd) cmd_filter_stats(filter, rec, out);
    else if (sub == avg_cmd) cmd_avg(avg, rec, out);
    rec.finish();
  } catch (const Error& e) {
    err << "oelm: " << e.what() << "\n";
    if (e.kind() == ErrorKind::kUsage) err << sub->help();
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "oelm: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace oelm::cli
