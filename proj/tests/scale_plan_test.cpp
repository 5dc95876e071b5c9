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
#include <random>

#include "doctest.h"
#include "oelm/scale_plan.hpp"
#include "test_util.hpp"

using namespace oelm;
using oelm::testing::thrown_kind;

namespace {

ModelSpec spec_1p1b() {
  ModelSpec s;
  s.d_model = 2048;
  s.num_layers = 28;
  s.head_dim = 64;
  s.alpha_min = 0.5;
  s.alpha_max = 1.0;
  s.beta_min = 0.5;
  s.beta_max = 4.0;
  s.vocab_size = 32000;
  s.kv_group = 4;
  return s;
}

// Independent enumeration of every tensor the model owns.
std::int64_t enumerate_parameters(const ModelSpec& s, const std::vector<LayerPlan>& layers) {
  const std::int64_t d = s.d_model, dh = s.head_dim;
  std::int64_t total = s.vocab_size * d * (s.weight_tying ? 1 : 2) + d;
  for (const LayerPlan& l : layers) {
    const std::int64_t q = l.n_heads * dh, kv = l.n_kv_heads * dh;
    total += d * q + 2 * d * kv + q * d;     // wq, wk, wv, wo
    total += 3 * d * l.ffn_hidden;           // gate, up, down
    total += 2 * d + (l.n_heads + l.n_kv_heads) * dh;  // two row norms, per-head q/k gains
  }
  return total;
}

}  // namespace

TEST_CASE("interpolate endpoints and midpoint") {
  CHECK(interpolate(0, 28, 0.5, 1.0) == 0.5);
  CHECK(interpolate(27, 28, 0.5, 1.0) == 1.0);
  CHECK(interpolate(13, 28, 0.5, 4.0) == doctest::Approx(0.5 + 3.5 * 13.0 / 27.0).epsilon(1e-15));
  CHECK(interpolate(13, 28, 0.5, 4.0) == doctest::Approx(2.185185185185).epsilon(1e-11));
  CHECK(interpolate(0, 1, 0.7, 0.9) == 0.7);
}

TEST_CASE("interpolate rejects bad ranges") {
  CHECK(thrown_kind([] { interpolate(5, 5, 0.5, 1.0); }) == ErrorKind::kPlanning);
  CHECK(thrown_kind([] { interpolate(-1, 5, 0.5, 1.0); }) == ErrorKind::kPlanning);
  CHECK(thrown_kind([] { interpolate(1, 5, 1.0, 0.5); }) == ErrorKind::kPlanning);
}

TEST_CASE("round_half_up") {
  CHECK(round_half_up(2.5) == 3);
  CHECK(round_half_up(2.4999) == 2);
  CHECK(round_half_up(3.0) == 3);
  CHECK(round_half_up(-0.5) == 0);
}

TEST_CASE("1.1B plan endpoints") {
  const ScalePlan plan = build_plan(spec_1p1b());
  REQUIRE(plan.layers.size() == 28);
  CHECK(plan.layers.front().n_heads == 16);
  CHECK(plan.layers.front().ffn_hidden == 1024);
  CHECK(plan.layers.back().n_heads == 32);
  CHECK(plan.layers.back().ffn_hidden == 8192);
  for (const LayerPlan& l : plan.layers) {
    CHECK(l.n_heads % l.n_kv_heads == 0);
    CHECK(l.n_heads / l.n_kv_heads == 4);
  }
}

TEST_CASE("endpoint exactness over random specs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    ModelSpec s = spec_1p1b();
    s.num_layers = std::uniform_int_distribution<int>(2, 40)(rng);
    s.alpha_min = u(rng);
    s.alpha_max = s.alpha_min + u(rng);
    s.beta_min = u(rng);
    s.beta_max = s.beta_min + u(rng);
    const ScalePlan plan = build_plan(s);
    CHECK(plan.layers.front().alpha == s.alpha_min);
    CHECK(plan.layers.back().alpha == s.alpha_max);
    CHECK(plan.layers.front().beta == s.beta_min);
    CHECK(plan.layers.back().beta == s.beta_max);
    for (std::size_t i = 1; i < plan.layers.size(); ++i) {
      CHECK(plan.layers[i].n_heads >= plan.layers[i - 1].n_heads);
      CHECK(plan.layers[i].ffn_hidden >= plan.layers[i - 1].ffn_hidden);
    }
  }
}

TEST_CASE("hand-enumerated tiny model") {
  ModelSpec s;
  s.d_model = 8;
  s.num_layers = 1;
  s.head_dim = 4;
  s.alpha_min = s.alpha_max = 1.0;
  s.beta_min = s.beta_max = 1.0;
  s.vocab_size = 10;
  s.kv_group = 1;
  const ScalePlan plan = build_plan(s);
  // 80 embedding + 256 attention + 192 FFN + 40 norm gains
  CHECK(count_parameters(plan) == 568);
  s.weight_tying = false;
  CHECK(count_parameters(build_plan(s)) == 568 + 80);
}

TEST_CASE("parameter count matches independent enumeration") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelSpec s = oelm::testing::random_tiny_spec(rng);
    const ScalePlan plan = build_plan(s);
    CHECK(count_parameters(plan) == enumerate_parameters(s, plan.layers));
  }
}

TEST_CASE("norm invocations") {
  ModelSpec s = spec_1p1b();
  CHECK(count_norm_invocations(build_plan(s)) == 113);
  s.num_layers = 16;
  CHECK(count_norm_invocations(build_plan(s)) == 65);
  s.num_layers = 1;
  CHECK(count_norm_invocations(build_plan(s)) == 5);
}

TEST_CASE("validation names the offending field") {
  ModelSpec s = spec_1p1b();
  s.alpha_min = 1.5;
  CHECK(thrown_kind([&] { build_plan(s); }) == ErrorKind::kPlanning);
  s = spec_1p1b();
  s.num_layers = 0;
  CHECK(thrown_kind([&] { build_plan(s); }) == ErrorKind::kPlanning);
  s = spec_1p1b();
  s.head_dim = 63;
  CHECK(thrown_kind([&] { build_plan(s); }) == ErrorKind::kPlanning);
  s = spec_1p1b();
  s.beta_max = 0.1;
  try {
    build_plan(s);
    FAIL("expected a planning error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("beta_min") != std::string::npos);
  }
}

TEST_CASE("spec json round trip and strict keys") {
  const ModelSpec s = spec_1p1b();
  CHECK(parse_model_spec(dump_model_spec(s)) == s);
  CHECK(thrown_kind([] { parse_model_spec(R"({"d_model":8,"num_layers":1,"head_dim":4})"); }) ==
        ErrorKind::kConfig);
  CHECK(thrown_kind([] {
          parse_model_spec(R"({"d_model":8,"num_layers":1,"head_dim":4,"vocab_size":10,"bogus":1})");
        }) == ErrorKind::kConfig);
  CHECK(thrown_kind([] {
          parse_model_spec(R"({"d_model":8.5,"num_layers":1,"head_dim":4,"vocab_size":10})");
        }) == ErrorKind::kConfig);
}

TEST_CASE("bundled specs load") {
  for (const char* name : {"270m", "450m", "1p1b", "3b", "tiny", "bench_n4"}) {
    const ModelSpec s =
        load_model_spec(oelm::testing::source_dir() / "specs" / (std::string(name) + ".cfg"));
    CHECK_NOTHROW(build_plan(s));
  }
  CHECK(load_model_spec(oelm::testing::source_dir() / "specs" / "1p1b.cfg") == spec_1p1b());
}
