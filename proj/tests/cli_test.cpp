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

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oelm/checkpoint.hpp"
#include "oelm/cli.hpp"
#include "oelm/model.hpp"
#include "test_util.hpp"

using namespace oelm;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "oelm");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string spec_path(const std::string& name) {
  return (oelm::testing::source_dir() / "specs" / (name + ".cfg")).string();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

}  // namespace

TEST_CASE("exit code taxonomy") {
  CHECK(cli::exit_code_for(ErrorKind::kUsage) == 1);
  CHECK(cli::exit_code_for(ErrorKind::kData) == 2);
  CHECK(cli::exit_code_for(ErrorKind::kFormat) == 2);
  CHECK(cli::exit_code_for(ErrorKind::kConfig) == 2);
  CHECK(cli::exit_code_for(ErrorKind::kNumeric) == 3);
  CHECK(cli::exit_code_for(ErrorKind::kCorrectness) == 3);
}

TEST_CASE("flags override the config file which overrides defaults") {
  const json defaults{{"a", 1}, {"b", 1}, {"c", 1}, {"nested", {{"x", 1}, {"y", 1}}}};
  const json file{{"b", 2}, {"c", 2}, {"nested", {{"x", 2}}}};
  const json flags{{"c", 3}, {"nested", {{"y", 3}}}};
  const json r = cli::resolve_config(defaults, file, flags);
  CHECK(r["a"] == 1);
  CHECK(r["b"] == 2);
  CHECK(r["c"] == 3);
  CHECK(r["nested"]["x"] == 2);
  CHECK(r["nested"]["y"] == 3);
  CHECK(cli::resolve_config(defaults, json(), json()) == defaults);
}

TEST_CASE("relative paths anchor at the config file") {
  json cfg{{"manifest", "data/m.json"}, {"abs", "/x/y"}, {"deep", {{"p", "q.txt"}}}};
  cli::anchor_paths(cfg, "/etc/run/cfg.json", {"manifest", "abs", "deep.p", "missing"});
  CHECK(cfg["manifest"] == "/etc/run/data/m.json");
  CHECK(cfg["abs"] == "/x/y");
  CHECK(cfg["deep"]["p"] == "/etc/run/q.txt");
}

TEST_CASE("usage errors exit with 1") {
  const auto dir = oelm::testing::scratch_dir("cli_usage");
  const Result none = run_cli({});
  CHECK(none.code == 1);
  CHECK(none.err.find("plan") != std::string::npos);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"plan", "--no-such-flag"}).code == 1);
  CHECK(run_cli({"plan", "--d-model", "abc"}).code == 1);
  CHECK(run_cli({"generate", "--out", (dir / "g").string()}).code == 1);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("plan prints one row per layer") {
  const auto dir = oelm::testing::scratch_dir("cli_plan");
  const Result r = run_cli({"plan", "--config", spec_path("1p1b"), "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto lines = lines_of(r.out);
  REQUIRE(lines.size() == 1 + 28 + 2);
  std::istringstream first(lines[1]);
  int layer = -1, heads = 0, kv = 0, ffn = 0;
  double alpha = 0, beta = 0;
  first >> layer >> alpha >> beta >> heads >> kv >> ffn;
  CHECK(layer == 0);
  CHECK(heads == 16);
  CHECK(ffn == 1024);
  CHECK(lines[29].find("parameters: 1078630912") != std::string::npos);

  const json manifest = json::parse(std::ifstream(dir / "manifest.json"));
  CHECK(manifest["command"] == "plan");
  CHECK(manifest["config"]["d_model"] == 2048);
  CHECK(std::filesystem::exists(dir / "run.jsonl"));
}

TEST_CASE("plan flags override the config file") {
  const auto dir = oelm::testing::scratch_dir("cli_plan_override");
  const Result r = run_cli({"plan", "--config", spec_path("1p1b"), "--num-layers", "4", "--out",
                            dir.string()});
  REQUIRE(r.code == 0);
  CHECK(lines_of(r.out).size() == 1 + 4 + 2);
  const json manifest = json::parse(std::ifstream(dir / "manifest.json"));
  CHECK(manifest["config"]["num_layers"] == 4);
  CHECK(manifest["config"]["d_model"] == 2048);
}

TEST_CASE("data and format errors exit with 2") {
  const auto dir = oelm::testing::scratch_dir("cli_errors");
  CHECK(run_cli({"plan", "--config", (dir / "absent.cfg").string(), "--out", dir.string()}).code == 2);
  CHECK(run_cli({"plan", "--config", spec_path("tiny"), "--alpha-min", "2", "--out", dir.string()})
            .code == 2);
  {
    std::ofstream junk(dir / "junk.oelm");
    junk << "not a checkpoint";
  }
  const Result r = run_cli({"generate", "--ckpt", (dir / "junk.oelm").string(), "--prompt-ids", "1",
                            "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("magic") != std::string::npos);
}

TEST_CASE("avg-ckpt of one checkpoint twice is bit-identical") {
  const auto dir = oelm::testing::scratch_dir("cli_avg");
  const Checkpoint ckpt = init_model(build_plan(load_model_spec(spec_path("tiny"))), 3);
  const auto a = (dir / "a.oelm").string(), out = (dir / "out.oelm").string();
  save_checkpoint(ckpt, a);
  const Result r = run_cli({"avg-ckpt", a, a, "-o", out, "--out", (dir / "run").string()});
  REQUIRE(r.code == 0);
  std::ifstream fa(a, std::ios::binary), fo(out, std::ios::binary);
  const std::string ba{std::istreambuf_iterator<char>(fa), {}}, bo{std::istreambuf_iterator<char>(fo), {}};
  CHECK(ba == bo);
  const json manifest = json::parse(std::ifstream(dir / "run" / "manifest.json"));
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08x", file_crc32(out));
  CHECK(manifest["artifacts"][out]["crc32"] == hex);
}

TEST_CASE("generate is reproducible from its manifest") {
  const auto dir = oelm::testing::scratch_dir("cli_generate");
  const Checkpoint ckpt = init_model(build_plan(load_model_spec(spec_path("tiny"))), 4);
  const auto path = (dir / "m.oelm").string();
  save_checkpoint(ckpt, path);
  const Result a = run_cli({"generate", "--ckpt", path, "--prompt", "hello", "-n", "5", "--temperature",
                            "0.8", "--seed", "3", "--out", (dir / "a").string()});
  const Result b = run_cli({"generate", "--ckpt", path, "--prompt", "hello", "-n", "5", "--temperature",
                            "0.8", "--seed", "3", "--out", (dir / "b").string()});
  REQUIRE(a.code == 0);
  const json ja = json::parse(lines_of(a.out).back()), jb = json::parse(lines_of(b.out).back());
  CHECK(ja["tokens"] == jb["tokens"]);
  CHECK(ja["tokens"].size() == 5);
  CHECK(run_cli({"generate", "--ckpt", path, "--prompt-ids", "1,2", "-n", "200", "--out",
                 (dir / "c").string()})
            .code == 2);
}

TEST_CASE("filter-stats and bench run end to end") {
  const auto dir = oelm::testing::scratch_dir("cli_misc");
  const Result f = run_cli({"filter-stats", "--manifest",
                            (oelm::testing::source_dir() / "data" / "manifest.json").string(), "--out",
                            (dir / "f").string()});
  REQUIRE(f.code == 0);
  CHECK(f.out.find("stories") != std::string::npos);

  const auto csv = (dir / "bench.csv").string();
  const Result b = run_cli({"bench", "--model", spec_path("tiny"), "--prompt-tokens", "8", "--gen-tokens",
                            "8", "--reps", "1", "--csv", csv, "--out", (dir / "b").string()});
  REQUIRE(b.code == 0);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "model,norm_layer,invocations,prompt_tps,generation_tps,total_tps");
  CHECK(run_cli({"bench", "--model", spec_path("tiny"), "--norm", "weird", "--out", (dir / "c").string()})
            .code == 1);
}
