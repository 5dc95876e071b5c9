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
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "oelm/matrix.hpp"
#include "oelm/scale_plan.hpp"

namespace oelm {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'O', 'E', 'L', 'M'};

// Canonical tensor names.
//   tok_embeddings                 vocab x d_model
//   output                         vocab x d_model (untied models only)
//   final_norm                     1 x d_model
//   layer.NN.attn_norm             1 x d_model
//   layer.NN.attn.wq               d_model x n_heads*head_dim
//   layer.NN.attn.wk / attn.wv     d_model x n_kv_heads*head_dim
//   layer.NN.attn.wo               n_heads*head_dim x d_model
//   layer.NN.attn.q_norm           n_heads x head_dim
//   layer.NN.attn.k_norm           n_kv_heads x head_dim
//   layer.NN.ffn_norm              1 x d_model
//   layer.NN.ffn.w_gate / ffn.w_up d_model x ffn_hidden
//   layer.NN.ffn.w_down            ffn_hidden x d_model
namespace tensor_names {
inline constexpr std::string_view kEmbedding = "tok_embeddings";
inline constexpr std::string_view kOutput = "output";
inline constexpr std::string_view kFinalNorm = "final_norm";
inline constexpr std::string_view kAttnNorm = "attn_norm";
inline constexpr std::string_view kWq = "attn.wq";
inline constexpr std::string_view kWk = "attn.wk";
inline constexpr std::string_view kWv = "attn.wv";
inline constexpr std::string_view kWo = "attn.wo";
inline constexpr std::string_view kQNorm = "attn.q_norm";
inline constexpr std::string_view kKNorm = "attn.k_norm";
inline constexpr std::string_view kFfnNorm = "ffn_norm";
inline constexpr std::string_view kGate = "ffn.w_gate";
inline constexpr std::string_view kUp = "ffn.w_up";
inline constexpr std::string_view kDown = "ffn.w_down";
}  // namespace tensor_names

std::string layer_tensor_name(std::int64_t layer, std::int64_t num_layers,
                              std::string_view suffix);

// True for RMSNorm gain tensors.
bool is_norm_gain(std::string_view name);

struct TensorShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

// The complete name -> shape table a checkpoint for `plan` must contain.
std::map<std::string, TensorShape> expected_tensor_shapes(const ScalePlan& plan);

struct Checkpoint {
  ModelSpec spec;
  std::map<std::string, Matrix> tensors;
  std::uint32_t format_version = kCheckpointFormatVersion;
  // Free-form provenance stored in the header (initialization scheme, seed).
  std::string init_note;

  const Matrix& tensor(std::string_view name) const;
  Matrix& tensor(std::string_view name);
  std::int64_t parameter_count() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Throws a shape error unless the tensor set and shapes match `spec` exactly.
void validate_checkpoint(const Checkpoint& ckpt);

// Rounds every value to the nearest IEEE-754 single, i.e. what a
// save/load round trip yields.
void round_to_storage_precision(Checkpoint& ckpt);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace oelm
