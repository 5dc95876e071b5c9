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

#include "oelm/scale_plan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "oelm/error.hpp"

namespace oelm {

namespace {

void check(bool ok, const std::string& field, const std::string& why) {
  if (!ok) fail(ErrorKind::kPlanning, field + " " + why);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "d_model",    "num_layers", "head_dim",       "alpha_min",     "alpha_max",
      "beta_min",   "beta_max",   "vocab_size",     "context_length", "kv_group",
      "weight_tying", "norm_epsilon", "rope_theta"};
  return keys;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, bool required) {
  auto it = j.find(key);
  if (it == j.end()) {
    if (required) fail(ErrorKind::kConfig, std::string("missing required key '") + key + "'");
    return;
  }
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw std::invalid_argument("expected boolean");
      out = it->get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw std::invalid_argument("expected integer");
      out = it->get<T>();
    } else {
      if (!it->is_number()) throw std::invalid_argument("expected number");
      out = it->get<T>();
    }
  } catch (const std::exception& e) {
    fail(ErrorKind::kConfig, std::string("key '") + key + "': " + e.what());
  }
}

}  // namespace

void validate(const ModelSpec& s) {
  check(s.d_model > 0, "d_model", "must be positive");
  check(s.num_layers > 0, "num_layers", "must be positive");
  check(s.head_dim > 0, "head_dim", "must be positive");
  check(s.head_dim % 2 == 0, "head_dim", "must be even for rotary embeddings");
  check(std::isfinite(s.alpha_min) && s.alpha_min > 0, "alpha_min", "must be positive");
  check(std::isfinite(s.alpha_max) && s.alpha_max > 0, "alpha_max", "must be positive");
  check(s.alpha_min <= s.alpha_max, "alpha_min", "must not exceed alpha_max");
  check(std::isfinite(s.beta_min) && s.beta_min > 0, "beta_min", "must be positive");
  check(std::isfinite(s.beta_max) && s.beta_max > 0, "beta_max", "must be positive");
  check(s.beta_min <= s.beta_max, "beta_min", "must not exceed beta_max");
  check(s.vocab_size >= 2, "vocab_size", "must be at least 2");
  check(s.context_length >= 1, "context_length", "must be at least 1");
  check(s.kv_group >= 1, "kv_group", "must be positive");
  check(s.norm_epsilon > 0, "norm_epsilon", "must be positive");
  check(s.rope_theta > 0, "rope_theta", "must be positive");
}

double interpolate(std::int64_t i, std::int64_t n, double lo, double hi) {
  if (n < 1 || i < 0 || i >= n) {
    fail(ErrorKind::kPlanning, "layer index " + std::to_string(i) + " outside [0, " +
                                   std::to_string(n) + ")");
  }
  if (lo > hi) fail(ErrorKind::kPlanning, "interpolation range has lo > hi");
  if (n == 1) return lo;
  // The last layer takes the upper endpoint verbatim; lo + (hi - lo) can be
  // off by an ulp.
  if (i == n - 1) return hi;
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

std::int64_t round_half_up(double x) { return static_cast<std::int64_t>(std::floor(x + 0.5)); }

ScalePlan build_plan(const ModelSpec& spec) {
  validate(spec);
  ScalePlan plan{spec, {}};
  plan.layers.reserve(static_cast<std::size_t>(spec.num_layers));
  const auto d_model = static_cast<double>(spec.d_model);
  for (std::int64_t i = 0; i < spec.num_layers; ++i) {
    LayerPlan layer;
    layer.index = i;
    layer.alpha = interpolate(i, spec.num_layers, spec.alpha_min, spec.alpha_max);
    layer.beta = interpolate(i, spec.num_layers, spec.beta_min, spec.beta_max);
    // Query heads are rounded to the nearest whole number of KV groups so the
    // heads-per-KV-head ratio is always exactly kv_group.
    const double kv_target =
        layer.alpha * d_model / static_cast<double>(spec.head_dim * spec.kv_group);
    layer.n_kv_heads = std::max<std::int64_t>(1, round_half_up(kv_target));
    layer.n_heads = layer.n_kv_heads * spec.kv_group;
    layer.ffn_hidden = std::max<std::int64_t>(1, round_half_up(layer.beta * d_model));
    plan.layers.push_back(layer);
  }
  return plan;
}

std::int64_t count_parameters(const ScalePlan& plan) {
  const ModelSpec& s = plan.spec;
  const std::int64_t d = s.d_model;
  std::int64_t total = s.vocab_size * d;
  if (!s.weight_tying) total += s.vocab_size * d;
  total += d;  // final norm
  for (const LayerPlan& l : plan.layers) {
    const std::int64_t q = l.q_width(s.head_dim);
    const std::int64_t kv = l.kv_width(s.head_dim);
    total += d * q + 2 * d * kv + q * d;  // wq, wk, wv, wo
    total += 3 * d * l.ffn_hidden;        // gate, up, down
    total += 2 * d + q + kv;              // attn/ffn norms, per-head q/k gains
  }
  return total;
}

std::int64_t count_norm_invocations(const ScalePlan& plan) {
  return 4 * static_cast<std::int64_t>(plan.layers.size()) + 1;
}

nlohmann::json to_json(const ModelSpec& s) {
  return nlohmann::json{{"d_model", s.d_model},
                        {"num_layers", s.num_layers},
                        {"head_dim", s.head_dim},
                        {"alpha_min", s.alpha_min},
                        {"alpha_max", s.alpha_max},
                        {"beta_min", s.beta_min},
                        {"beta_max", s.beta_max},
                        {"vocab_size", s.vocab_size},
                        {"context_length", s.context_length},
                        {"kv_group", s.kv_group},
                        {"weight_tying", s.weight_tying},
                        {"norm_epsilon", s.norm_epsilon},
                        {"rope_theta", s.rope_theta}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "model spec must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known_keys().contains(key)) fail(ErrorKind::kConfig, "unknown key '" + key + "'");
  }
  ModelSpec s;
  read_field(j, "d_model", s.d_model, true);
  read_field(j, "num_layers", s.num_layers, true);
  read_field(j, "head_dim", s.head_dim, true);
  read_field(j, "vocab_size", s.vocab_size, true);
  read_field(j, "alpha_min", s.alpha_min, false);
  read_field(j, "alpha_max", s.alpha_max, false);
  read_field(j, "beta_min", s.beta_min, false);
  read_field(j, "beta_max", s.beta_max, false);
  read_field(j, "context_length", s.context_length, false);
  read_field(j, "kv_group", s.kv_group, false);
  read_field(j, "weight_tying", s.weight_tying, false);
  read_field(j, "norm_epsilon", s.norm_epsilon, false);
  read_field(j, "rope_theta", s.rope_theta, false);
  validate(s);
  return s;
}

std::string dump_model_spec(const ModelSpec& spec) { return to_json(spec).dump(2) + "\n"; }

ModelSpec parse_model_spec(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kConfig, std::string("malformed model spec: ") + e.what());
  }
  return model_spec_from_json(j);
}

ModelSpec load_model_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot open model spec " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model_spec(buf.str());
}

}  // namespace oelm
