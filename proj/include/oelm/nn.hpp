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

#include <cstddef>
#include <span>
#include <vector>

#include "oelm/matrix.hpp"

// Forward and backward passes of the decoder building blocks. Backward
// functions write input gradients and *accumulate* parameter gradients.
namespace oelm::nn {

// ---------------------------------------------------------------------------
// RMSNorm
// ---------------------------------------------------------------------------

struct NormGain {
  std::vector<double> gain;
  double epsilon = 1e-6;
};

// kFused computes the sum of squares and writes the scaled output in one
// pass. kNaive evaluates square, mean, +eps, rsqrt, and the two products as
// separate full-vector passes, each materializing its result.
enum class NormVariant { kNaive, kFused };

const char* to_string(NormVariant v);

void rmsnorm(std::span<const double> x, std::span<const double> gain, double epsilon,
             std::span<double> out, NormVariant variant = NormVariant::kFused);
std::vector<double> rmsnorm(std::span<const double> x, const NormGain& norm);

void rmsnorm_backward(std::span<const double> x, std::span<const double> gain,
                      double epsilon, std::span<const double> d_out,
                      std::span<double> d_x, std::span<double> d_gain);

// Row-wise over a T x d matrix with a single 1 x d gain.
void rmsnorm_rows(const Matrix& x, std::span<const double> gain, double epsilon,
                  Matrix& out, NormVariant variant = NormVariant::kFused);
void rmsnorm_rows_backward(const Matrix& x, std::span<const double> gain, double epsilon,
                           const Matrix& d_out, Matrix& d_x, std::span<double> d_gain);

// Per-head variant: every row of `x` (T x heads*head_dim) is split into
// heads, each normalized over head_dim with its own gain row of `gains`
// (heads x head_dim).
void rmsnorm_heads(Matrix& x, const Matrix& gains, double epsilon,
                   NormVariant variant = NormVariant::kFused);
void rmsnorm_heads_backward(const Matrix& x, const Matrix& gains, double epsilon,
                            const Matrix& d_out, Matrix& d_x, Matrix& d_gains);

// ---------------------------------------------------------------------------
// Rotary position embedding
// ---------------------------------------------------------------------------

struct RopeConfig {
  std::size_t head_dim = 0;
  double theta = 10000.0;
};

// Rotates coordinate pair (2j, 2j+1) by position * theta^(-2j/head_dim).
std::vector<double> rope_apply(std::span<const double> v, std::size_t position,
                               const RopeConfig& cfg);

// Precomputed cos/sin for positions [0, max_positions).
class RopeTable {
 public:
  RopeTable(const RopeConfig& cfg, std::size_t max_positions);

  std::size_t head_dim() const { return head_dim_; }
  std::size_t max_positions() const { return max_positions_; }

  // inverse = true applies the transpose rotation (used by backward).
  void rotate(std::span<double> v, std::size_t position, bool inverse = false) const;
  // Rotates every head of rows [0, x.rows()) where row t is at position first_position + t.
  void rotate_rows(Matrix& x, std::size_t first_position, bool inverse = false) const;

 private:
  std::size_t head_dim_;
  std::size_t max_positions_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

// ---------------------------------------------------------------------------
// Grouped-query causal attention
// ---------------------------------------------------------------------------

struct AttentionShape {
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t head_dim = 0;
};

// Token-major layout: q is T x (n_heads*head_dim), k and v are
// S x (n_kv_heads*head_dim); head h occupies columns [h*head_dim, (h+1)*head_dim).
// Query row t sits at absolute position causal_offset + t and may attend key
// rows s <= causal_offset + t. Query head h reads KV head h / (n_heads/n_kv_heads).
// When `probs` is non-null it receives the post-softmax weights as
// (n_heads*T) x S, row h*T + t; masked entries are exactly zero.
Matrix gqa_attention(MatrixView q, MatrixView k, MatrixView v, const AttentionShape& shape,
                     std::size_t causal_offset, Matrix* probs = nullptr);

void gqa_attention_backward(MatrixView q, MatrixView k, MatrixView v,
                            const AttentionShape& shape, std::size_t causal_offset,
                            const Matrix& probs, const Matrix& d_out, Matrix& d_q,
                            Matrix& d_k, Matrix& d_v);

// ---------------------------------------------------------------------------
// SwiGLU feed-forward
// ---------------------------------------------------------------------------

double silu(double z);

// y = (silu(x W_gate) * (x W_up)) W_down, row-wise over T x d_model input.
Matrix swiglu_ffn(const Matrix& x, const Matrix& w_gate, const Matrix& w_up,
                  const Matrix& w_down);
std::vector<double> swiglu_ffn(std::span<const double> x, const Matrix& w_gate,
                               const Matrix& w_up, const Matrix& w_down);

struct SwigluGrads {
  Matrix d_x;
  Matrix d_gate;
  Matrix d_up;
  Matrix d_down;
};

// Parameter gradients are accumulated into `grads` (allocated if empty).
void swiglu_ffn_backward(const Matrix& x, const Matrix& w_gate, const Matrix& w_up,
                         const Matrix& w_down, const Matrix& d_out, SwigluGrads& grads);

// ---------------------------------------------------------------------------
// Softmax / cross-entropy
// ---------------------------------------------------------------------------

// Numerically stable (max-subtracted) in-place softmax.
void softmax(std::span<double> x);

struct CrossEntropy {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits, T x V
};

// Mean over rows of -log softmax(logits)[target].
CrossEntropy cross_entropy(const Matrix& logits, std::span<const TokenId> targets);

}  // namespace oelm::nn
