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

#include "oelm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "oelm/error.hpp"

namespace oelm::nn {

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorKind::kShape, std::string(what) + ": length " + std::to_string(a) +
                                " does not match " + std::to_string(b));
  }
}

double inv_rms_fused(std::span<const double> x, double epsilon) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + epsilon);
}

// One heap-allocated buffer per elementary step, the CPU analogue of one
// kernel launch per op. The upcast/downcast copies mirror the dtype round
// trip of the usual reference implementation.
void rmsnorm_naive(std::span<const double> x, std::span<const double> gain, double epsilon,
                   std::span<double> out) {
  const std::size_t d = x.size();
  std::vector<double> upcast(x.begin(), x.end());
  std::vector<double> squared(d);
  for (std::size_t j = 0; j < d; ++j) squared[j] = upcast[j] * upcast[j];
  std::vector<double> mean(1, 0.0);
  for (double v : squared) mean[0] += v;
  mean[0] /= static_cast<double>(d);
  std::vector<double> shifted(1, mean[0] + epsilon);
  std::vector<double> inv(1, 1.0 / std::sqrt(shifted[0]));
  std::vector<double> normed(d);
  for (std::size_t j = 0; j < d; ++j) normed[j] = upcast[j] * inv[0];
  std::vector<double> downcast(normed.begin(), normed.end());
  std::vector<double> scaled(d);
  for (std::size_t j = 0; j < d; ++j) scaled[j] = gain[j] * downcast[j];
  std::copy(scaled.begin(), scaled.end(), out.begin());
}

}  // namespace

const char* to_string(NormVariant v) {
  return v == NormVariant::kNaive ? "naive" : "fused";
}

void rmsnorm(std::span<const double> x, std::span<const double> gain, double epsilon,
             std::span<double> out, NormVariant variant) {
  require_same(x.size(), gain.size(), "rmsnorm gain");
  require_same(x.size(), out.size(), "rmsnorm output");
  if (variant == NormVariant::kNaive) {
    rmsnorm_naive(x, gain, epsilon, out);
    return;
  }
  const double inv = inv_rms_fused(x, epsilon);
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = gain[j] * x[j] * inv;
}

std::vector<double> rmsnorm(std::span<const double> x, const NormGain& norm) {
  std::vector<double> out(x.size());
  rmsnorm(x, norm.gain, norm.epsilon, out);
  return out;
}

void rmsnorm_backward(std::span<const double> x, std::span<const double> gain,
                      double epsilon, std::span<const double> d_out,
                      std::span<double> d_x, std::span<double> d_gain) {
  const std::size_t d = x.size();
  require_same(d, gain.size(), "rmsnorm_backward gain");
  require_same(d, d_out.size(), "rmsnorm_backward d_out");
  require_same(d, d_x.size(), "rmsnorm_backward d_x");
  require_same(d, d_gain.size(), "rmsnorm_backward d_gain");
  const double inv = inv_rms_fused(x, epsilon);
  double dot = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    d_gain[j] += d_out[j] * x[j] * inv;
    dot += gain[j] * d_out[j] * x[j];
  }
  const double coeff = dot * inv * inv * inv / static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) d_x[j] = gain[j] * d_out[j] * inv - x[j] * coeff;
}

void rmsnorm_rows(const Matrix& x, std::span<const double> gain, double epsilon,
                  Matrix& out, NormVariant variant) {
  if (out.rows() != x.rows() || out.cols() != x.cols()) out = Matrix(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) rmsnorm(x.row(t), gain, epsilon, out.row(t), variant);
}

void rmsnorm_rows_backward(const Matrix& x, std::span<const double> gain, double epsilon,
                           const Matrix& d_out, Matrix& d_x, std::span<double> d_gain) {
  if (d_x.rows() != x.rows() || d_x.cols() != x.cols()) d_x = Matrix(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    rmsnorm_backward(x.row(t), gain, epsilon, d_out.row(t), d_x.row(t), d_gain);
  }
}

void rmsnorm_heads(Matrix& x, const Matrix& gains, double epsilon, NormVariant variant) {
  const std::size_t hd = gains.cols();
  require_same(x.cols(), gains.rows() * hd, "rmsnorm_heads width");
  std::vector<double> tmp(hd);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.row(t);
    for (std::size_t h = 0; h < gains.rows(); ++h) {
      auto head = row.subspan(h * hd, hd);
      rmsnorm(head, gains.row(h), epsilon, tmp, variant);
      std::copy(tmp.begin(), tmp.end(), head.begin());
    }
  }
}

void rmsnorm_heads_backward(const Matrix& x, const Matrix& gains, double epsilon,
                            const Matrix& d_out, Matrix& d_x, Matrix& d_gains) {
  const std::size_t hd = gains.cols();
  require_same(x.cols(), gains.rows() * hd, "rmsnorm_heads_backward width");
  if (d_x.rows() != x.rows() || d_x.cols() != x.cols()) d_x = Matrix(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t h = 0; h < gains.rows(); ++h) {
      rmsnorm_backward(x.row(t).subspan(h * hd, hd), gains.row(h), epsilon,
                       d_out.row(t).subspan(h * hd, hd), d_x.row(t).subspan(h * hd, hd),
                       d_gains.row(h));
    }
  }
}

std::vector<double> rope_apply(std::span<const double> v, std::size_t position,
                               const RopeConfig& cfg) {
  if (cfg.head_dim == 0 || cfg.head_dim % 2 != 0) {
    fail(ErrorKind::kConfig, "rotary head_dim must be even and positive, got " +
                                 std::to_string(cfg.head_dim));
  }
  require_same(v.size(), cfg.head_dim, "rope_apply");
  std::vector<double> out(v.begin(), v.end());
  const auto hd = static_cast<double>(cfg.head_dim);
  for (std::size_t j = 0; j < cfg.head_dim / 2; ++j) {
    const double freq = std::pow(cfg.theta, -2.0 * static_cast<double>(j) / hd);
    const double angle = static_cast<double>(position) * freq;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double a = v[2 * j];
    const double b = v[2 * j + 1];
    out[2 * j] = a * c - b * s;
    out[2 * j + 1] = a * s + b * c;
  }
  return out;
}

RopeTable::RopeTable(const RopeConfig& cfg, std::size_t max_positions)
    : head_dim_(cfg.head_dim), max_positions_(max_positions) {
  if (head_dim_ == 0 || head_dim_ % 2 != 0) {
    fail(ErrorKind::kConfig, "rotary head_dim must be even and positive, got " +
                                 std::to_string(head_dim_));
  }
  const std::size_t half = head_dim_ / 2;
  cos_.resize(max_positions * half);
  sin_.resize(max_positions * half);
  const auto hd = static_cast<double>(head_dim_);
  for (std::size_t j = 0; j < half; ++j) {
    const double freq = std::pow(cfg.theta, -2.0 * static_cast<double>(j) / hd);
    for (std::size_t p = 0; p < max_positions; ++p) {
      const double angle = static_cast<double>(p) * freq;
      cos_[p * half + j] = std::cos(angle);
      sin_[p * half + j] = std::sin(angle);
    }
  }
}

void RopeTable::rotate(std::span<double> v, std::size_t position, bool inverse) const {
  if (position >= max_positions_) {
    fail(ErrorKind::kContext, "position " + std::to_string(position) +
                                  " beyond rotary table of " +
                                  std::to_string(max_positions_));
  }
  const std::size_t half = head_dim_ / 2;
  const double* c = cos_.data() + position * half;
  const double* s = sin_.data() + position * half;
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t j = 0; j < half; ++j) {
    const double a = v[2 * j];
    const double b = v[2 * j + 1];
    const double sj = sign * s[j];
    v[2 * j] = a * c[j] - b * sj;
    v[2 * j + 1] = a * sj + b * c[j];
  }
}

void RopeTable::rotate_rows(Matrix& x, std::size_t first_position, bool inverse) const {
  require_same(x.cols() % head_dim_, 0, "rope rows width modulo head_dim");
  const std::size_t heads = x.cols() / head_dim_;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.row(t);
    for (std::size_t h = 0; h < heads; ++h) {
      rotate(row.subspan(h * head_dim_, head_dim_), first_position + t, inverse);
    }
  }
}

namespace {

void check_attention(MatrixView q, MatrixView k, MatrixView v, const AttentionShape& shape,
                     std::size_t causal_offset) {
  if (shape.n_heads == 0 || shape.n_kv_heads == 0 || shape.head_dim == 0 ||
      shape.n_heads % shape.n_kv_heads != 0) {
    fail(ErrorKind::kShape, "query heads (" + std::to_string(shape.n_heads) +
                                ") must be a positive multiple of kv heads (" +
                                std::to_string(shape.n_kv_heads) + ")");
  }
  require_same(q.cols, shape.n_heads * shape.head_dim, "attention query width");
  require_same(k.cols, shape.n_kv_heads * shape.head_dim, "attention key width");
  require_same(v.cols, shape.n_kv_heads * shape.head_dim, "attention value width");
  require_same(k.rows, v.rows, "attention key/value rows");
  if (k.rows < causal_offset + q.rows) {
    fail(ErrorKind::kShape, "attention needs " + std::to_string(causal_offset + q.rows) +
                                " key rows, got " + std::to_string(k.rows));
  }
}

}  // namespace

Matrix gqa_attention(MatrixView q, MatrixView k, MatrixView v, const AttentionShape& shape,
                     std::size_t causal_offset, Matrix* probs) {
  check_attention(q, k, v, shape, causal_offset);
  const std::size_t T = q.rows;
  const std::size_t S = k.rows;
  const std::size_t hd = shape.head_dim;
  const std::size_t group = shape.n_heads / shape.n_kv_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix out(T, shape.n_heads * hd);
  if (probs != nullptr) *probs = Matrix(shape.n_heads * T, S);
  std::vector<double> w(S);
  for (std::size_t h = 0; h < shape.n_heads; ++h) {
    const std::size_t kvh = h / group;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t visible = causal_offset + t + 1;
      const double* qt = q.data + t * q.cols + h * hd;
      for (std::size_t s = 0; s < visible; ++s) {
        const double* ks = k.data + s * k.cols + kvh * hd;
        double dot = 0.0;
        for (std::size_t j = 0; j < hd; ++j) dot += qt[j] * ks[j];
        w[s] = dot * scale;
      }
      softmax(std::span<double>(w.data(), visible));
      double* ot = out.row(t).data() + h * hd;
      for (std::size_t s = 0; s < visible; ++s) {
        const double p = w[s];
        const double* vs = v.data + s * v.cols + kvh * hd;
        for (std::size_t j = 0; j < hd; ++j) ot[j] += p * vs[j];
      }
      if (probs != nullptr) {
        auto prow = probs->row(h * T + t);
        std::copy(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(visible), prow.begin());
      }
    }
  }
  return out;
}

void gqa_attention_backward(MatrixView q, MatrixView k, MatrixView v,
                            const AttentionShape& shape, std::size_t causal_offset,
                            const Matrix& probs, const Matrix& d_out, Matrix& d_q,
                            Matrix& d_k, Matrix& d_v) {
  check_attention(q, k, v, shape, causal_offset);
  const std::size_t T = q.rows;
  const std::size_t S = k.rows;
  const std::size_t hd = shape.head_dim;
  const std::size_t group = shape.n_heads / shape.n_kv_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  require_same(probs.rows(), shape.n_heads * T, "attention backward probs rows");
  require_same(probs.cols(), S, "attention backward probs cols");

  d_q = Matrix(T, q.cols);
  d_k = Matrix(S, k.cols);
  d_v = Matrix(S, v.cols);
  std::vector<double> dp(S);
  for (std::size_t h = 0; h < shape.n_heads; ++h) {
    const std::size_t kvh = h / group;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t visible = causal_offset + t + 1;
      auto p = probs.row(h * T + t);
      const double* dot_t = d_out.row(t).data() + h * hd;
      double weighted = 0.0;
      for (std::size_t s = 0; s < visible; ++s) {
        const double* vs = v.data + s * v.cols + kvh * hd;
        double acc = 0.0;
        for (std::size_t j = 0; j < hd; ++j) acc += dot_t[j] * vs[j];
        dp[s] = acc;
        weighted += p[s] * acc;
        double* dvs = d_v.row(s).data() + kvh * hd;
        for (std::size_t j = 0; j < hd; ++j) dvs[j] += p[s] * dot_t[j];
      }
      const double* qt = q.data + t * q.cols + h * hd;
      double* dqt = d_q.row(t).data() + h * hd;
      for (std::size_t s = 0; s < visible; ++s) {
        const double ds = p[s] * (dp[s] - weighted) * scale;
        if (ds == 0.0) continue;
        const double* ks = k.data + s * k.cols + kvh * hd;
        double* dks = d_k.row(s).data() + kvh * hd;
        for (std::size_t j = 0; j < hd; ++j) {
          dqt[j] += ds * ks[j];
          dks[j] += ds * qt[j];
        }
      }
    }
  }
}

double silu(double z) { return z / (1.0 + std::exp(-z)); }

namespace {

void check_ffn(std::size_t d_in, const Matrix& w_gate, const Matrix& w_up,
               const Matrix& w_down) {
  require_same(d_in, w_gate.rows(), "swiglu gate rows");
  require_same(d_in, w_up.rows(), "swiglu up rows");
  require_same(w_gate.cols(), w_up.cols(), "swiglu hidden width");
  require_same(w_down.rows(), w_gate.cols(), "swiglu down rows");
  require_same(w_down.cols(), d_in, "swiglu down cols");
}

}  // namespace

Matrix swiglu_ffn(const Matrix& x, const Matrix& w_gate, const Matrix& w_up,
                  const Matrix& w_down) {
  check_ffn(x.cols(), w_gate, w_up, w_down);
  Matrix gate = matmul(x, w_gate);
  Matrix up = matmul(x, w_up);
  auto g = gate.values();
  auto u = up.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = silu(g[i]) * u[i];
  return matmul(gate, w_down);
}

std::vector<double> swiglu_ffn(std::span<const double> x, const Matrix& w_gate,
                               const Matrix& w_up, const Matrix& w_down) {
  Matrix row(1, x.size(), std::vector<double>(x.begin(), x.end()));
  Matrix y = swiglu_ffn(row, w_gate, w_up, w_down);
  return {y.values().begin(), y.values().end()};
}

void swiglu_ffn_backward(const Matrix& x, const Matrix& w_gate, const Matrix& w_up,
                         const Matrix& w_down, const Matrix& d_out, SwigluGrads& grads) {
  check_ffn(x.cols(), w_gate, w_up, w_down);
  if (grads.d_gate.size() == 0) grads.d_gate = Matrix(w_gate.rows(), w_gate.cols());
  if (grads.d_up.size() == 0) grads.d_up = Matrix(w_up.rows(), w_up.cols());
  if (grads.d_down.size() == 0) grads.d_down = Matrix(w_down.rows(), w_down.cols());

  const Matrix a = matmul(x, w_gate);
  const Matrix b = matmul(x, w_up);
  Matrix s(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) s.values()[i] = silu(a.values()[i]) * b.values()[i];
  matmul_at_acc(s, d_out, grads.d_down);

  Matrix ds;
  matmul_bt(d_out, w_down, ds);
  Matrix da(a.rows(), a.cols());
  Matrix db(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double z = a.values()[i];
    const double sig = 1.0 / (1.0 + std::exp(-z));
    const double dsilu = sig * (1.0 + z * (1.0 - sig));
    da.values()[i] = ds.values()[i] * b.values()[i] * dsilu;
    db.values()[i] = ds.values()[i] * z * sig;
  }
  matmul_at_acc(x, da, grads.d_gate);
  matmul_at_acc(x, db, grads.d_up);
  Matrix dx_up;
  matmul_bt(da, w_gate, grads.d_x);
  matmul_bt(db, w_up, dx_up);
  for (std::size_t i = 0; i < dx_up.size(); ++i) grads.d_x.values()[i] += dx_up.values()[i];
}

void softmax(std::span<double> x) {
  if (x.empty()) return;
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
}

CrossEntropy cross_entropy(const Matrix& logits, std::span<const TokenId> targets) {
  require_same(logits.rows(), targets.size(), "cross_entropy targets");
  const std::size_t T = logits.rows();
  const std::size_t V = logits.cols();
  if (T == 0) fail(ErrorKind::kShape, "cross_entropy over zero rows");
  CrossEntropy ce{0.0, Matrix(T, V)};
  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    const TokenId target = targets[t];
    if (target < 0 || static_cast<std::size_t>(target) >= V) {
      fail(ErrorKind::kData, "target id " + std::to_string(target) + " outside [0, " +
                                 std::to_string(V) + ")");
    }
    auto row = logits.row(t);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double z : row) sum += std::exp(z - mx);
    const double log_z = mx + std::log(sum);
    ce.loss += (log_z - row[static_cast<std::size_t>(target)]) * inv_t;
    auto g = ce.grad.row(t);
    for (std::size_t j = 0; j < V; ++j) g[j] = std::exp(row[j] - log_z) * inv_t;
    g[static_cast<std::size_t>(target)] -= inv_t;
  }
  return ce;
}

}  // namespace oelm::nn
