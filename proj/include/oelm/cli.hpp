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

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "oelm/error.hpp"

namespace oelm::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int exit_code_for(ErrorKind kind);

// Layered configuration: defaults, then the config file, then flags; later
// layers win key by key (JSON merge patch).
nlohmann::json resolve_config(const nlohmann::json& defaults, const nlohmann::json& file,
                              const nlohmann::json& flags);

// Rewrites the listed (dotted) keys of a config loaded from `config_path` so
// relative paths are anchored at the file's directory.
void anchor_paths(nlohmann::json& cfg, const std::filesystem::path& config_path,
                  const std::vector<std::string>& keys);

nlohmann::json load_json_file(const std::filesystem::path& path);

// Entry point; argv[0] is the program name.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace oelm::cli
