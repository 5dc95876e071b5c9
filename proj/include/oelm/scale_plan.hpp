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
#include <string>
#include <vector>

#include "json.hpp"

namespace oelm {

// User-facing architecture description. Layer i gets
//   alpha_i = alpha_min + (alpha_max - alpha_min) * i / (N - 1)
//   beta_i  = beta_min  + (beta_max  - beta_min)  * i / (N - 1)
// and from those its head count and FFN width (see build_plan).
struct ModelSpec {
  std::int64_t d_model = 0;
  std::int64_t num_layers = 0;
  std::int64_t head_dim = 0;
  double alpha_min = 1.0;
  double alpha_max = 1.0;
  double beta_min = 4.0;
  double beta_max = 4.0;
  std::int64_t vocab_size = 0;
  std::int64_t context_length = 2048;
  std::int64_t kv_group = 4;
  bool weight_tying = true;
  double norm_epsilon = 1e-6;
  double rope_theta = 10000.0;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct LayerPlan {
  std::int64_t index = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::int64_t n_heads = 0;
  std::int64_t n_kv_heads = 0;
  std::int64_t ffn_hidden = 0;

  std::int64_t q_width(std::int64_t head_dim) const { return n_heads * head_dim; }
  std::int64_t kv_width(std::int64_t head_dim) const { return n_kv_heads * head_dim; }

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct ScalePlan {
  ModelSpec spec;
  std::vector<LayerPlan> layers;
};

// Throws a planning error naming the first offending field.
void validate(const ModelSpec& spec);

// lo + (hi - lo) * i / (n - 1); lo when n == 1.
double interpolate(std::int64_t i, std::int64_t n, double lo, double hi);

// Nearest integer, halves rounded toward +infinity.
std::int64_t round_half_up(double x);

ScalePlan build_plan(const ModelSpec& spec);

std::int64_t count_parameters(const ScalePlan& plan);

// Four per-layer norms (pre-attention, pre-FFN, query, key) plus the final norm.
std::int64_t count_norm_invocations(const ScalePlan& plan);

// Structured-text (JSON) serialization shared by config files and the
// checkpoint header. Unknown keys are rejected.
nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
std::string dump_model_spec(const ModelSpec& spec);
ModelSpec parse_model_spec(const std::string& text);
ModelSpec load_model_spec(const std::filesystem::path& path);

}  // namespace oelm
