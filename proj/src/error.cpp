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

#include "oelm/error.hpp"

namespace oelm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kPlanning: return "planning";
    case ErrorKind::kConfig: return "configuration";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kData: return "data";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kContext: return "context";
    case ErrorKind::kSchedule: return "schedule";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kSourceExhausted: return "source-exhausted";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kCorrectness: return "correctness";
  }
  return "unknown";
}

}  // namespace oelm
