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

#include "oelm/error.hpp"
#include "oelm/model.hpp"

namespace oelm {

namespace tn = tensor_names;

namespace {

void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

struct LayerRefs {
  std::string attn_norm, wq, wk, wv, wo, q_norm, k_norm, ffn_norm, gate, up, down;
  nn::AttentionShape shape;
};

// Activations a single row needs for its backward pass.
struct LayerTape {
  Matrix x_in;
  Matrix h_attn;
  Matrix q_pre;
  Matrix k_pre;
  Matrix q;  // normalized and rotated
  Matrix k;
  Matrix v;
  Matrix probs;
  Matrix attn;
  Matrix x_mid;
  Matrix h_ffn;
};

class Tape {
 public:
  Tape(const Checkpoint& ckpt, const ScalePlan& plan)
      : ckpt_(ckpt),
        plan_(plan),
        rope_(nn::RopeConfig{static_cast<std::size_t>(plan.spec.head_dim), plan.spec.rope_theta},
              static_cast<std::size_t>(plan.spec.context_length)) {
    const ModelSpec& s = plan.spec;
    for (const LayerPlan& l : plan.layers) {
      auto name = [&](std::string_view suffix) {
        return layer_tensor_name(l.index, s.num_layers, suffix);
      };
      refs_.push_back(LayerRefs{
          name(tn::kAttnNorm), name(tn::kWq), name(tn::kWk), name(tn::kWv), name(tn::kWo),
          name(tn::kQNorm), name(tn::kKNorm), name(tn::kFfnNorm), name(tn::kGate),
          name(tn::kUp), name(tn::kDown),
          nn::AttentionShape{static_cast<std::size_t>(l.n_heads),
                             static_cast<std::size_t>(l.n_kv_heads),
                             static_cast<std::size_t>(s.head_dim)}});
    }
  }

  // Loss of one row; when `grads` is non-null its gradient (scaled by
  // `weight`) is accumulated there.
  double row(std::span<const TokenId> inputs, std::span<const TokenId> targets, double weight,
             Gradients* grads) {
    const ModelSpec& s = plan_.spec;
    const std::size_t T = inputs.size();
    const double eps = s.norm_epsilon;
    if (T > static_cast<std::size_t>(s.context_length)) {
      fail(ErrorKind::kContext, "training row of " + std::to_string(T) +
                                    " tokens exceeds context length");
    }
    const Matrix& embedding = ckpt_.tensor(tn::kEmbedding);
    const Matrix& output = s.weight_tying ? embedding : ckpt_.tensor(tn::kOutput);

    Matrix x(T, static_cast<std::size_t>(s.d_model));
    for (std::size_t t = 0; t < T; ++t) {
      if (inputs[t] < 0 || inputs[t] >= s.vocab_size) {
        fail(ErrorKind::kData, "token id " + std::to_string(inputs[t]) + " outside vocabulary");
      }
      auto src = embedding.row(static_cast<std::size_t>(inputs[t]));
      std::copy(src.begin(), src.end(), x.row(t).begin());
    }

    std::vector<LayerTape> tape(refs_.size());
    for (std::size_t li = 0; li < refs_.size(); ++li) {
      const LayerRefs& r = refs_[li];
      LayerTape& L = tape[li];
      L.x_in = x;
      nn::rmsnorm_rows(x, ckpt_.tensor(r.attn_norm).row(0), eps, L.h_attn);
      matmul(L.h_attn, ckpt_.tensor(r.wq), L.q_pre);
      matmul(L.h_attn, ckpt_.tensor(r.wk), L.k_pre);
      matmul(L.h_attn, ckpt_.tensor(r.wv), L.v);
      L.q = L.q_pre;
      L.k = L.k_pre;
      nn::rmsnorm_heads(L.q, ckpt_.tensor(r.q_norm), eps);
      nn::rmsnorm_heads(L.k, ckpt_.tensor(r.k_norm), eps);
      rope_.rotate_rows(L.q, 0);
      rope_.rotate_rows(L.k, 0);
      L.attn = nn::gqa_attention(L.q, L.k, L.v, r.shape, 0, &L.probs);
      add_into(x, matmul(L.attn, ckpt_.tensor(r.wo)));
      L.x_mid = x;
      nn::rmsnorm_rows(x, ckpt_.tensor(r.ffn_norm).row(0), eps, L.h_ffn);
      add_into(x, nn::swiglu_ffn(L.h_ffn, ckpt_.tensor(r.gate), ckpt_.tensor(r.up),
                                 ckpt_.tensor(r.down)));
    }
    Matrix h_final;
    nn::rmsnorm_rows(x, ckpt_.tensor(tn::kFinalNorm).row(0), eps, h_final);
    Matrix logits;
    matmul_bt(h_final, output, logits);
    nn::CrossEntropy ce = nn::cross_entropy(logits, targets);
    if (grads == nullptr) return ce.loss;

    Gradients& g = *grads;
    Matrix& d_logits = ce.grad;
    for (double& v : d_logits.values()) v *= weight;
    matmul_at_acc(d_logits, h_final, g.at(s.weight_tying ? std::string(tn::kEmbedding)
                                                         : std::string(tn::kOutput)));
    Matrix d_h = matmul(d_logits, output);
    Matrix d_x;
    nn::rmsnorm_rows_backward(x, ckpt_.tensor(tn::kFinalNorm).row(0), eps, d_h, d_x,
                              g.at(std::string(tn::kFinalNorm)).row(0));

    Matrix tmp;
    for (std::size_t li = refs_.size(); li-- > 0;) {
      const LayerRefs& r = refs_[li];
      const LayerTape& L = tape[li];

      nn::SwigluGrads fg{Matrix(), std::move(g.at(r.gate)), std::move(g.at(r.up)),
                         std::move(g.at(r.down))};
      nn::swiglu_ffn_backward(L.h_ffn, ckpt_.tensor(r.gate), ckpt_.tensor(r.up),
                              ckpt_.tensor(r.down), d_x, fg);
      g.at(r.gate) = std::move(fg.d_gate);
      g.at(r.up) = std::move(fg.d_up);
      g.at(r.down) = std::move(fg.d_down);
      nn::rmsnorm_rows_backward(L.x_mid, ckpt_.tensor(r.ffn_norm).row(0), eps, fg.d_x, tmp,
                                g.at(r.ffn_norm).row(0));
      add_into(d_x, tmp);  // d_x is now d loss / d x_mid

      matmul_at_acc(L.attn, d_x, g.at(r.wo));
      Matrix d_attn;
      matmul_bt(d_x, ckpt_.tensor(r.wo), d_attn);
      Matrix d_q, d_k, d_v;
      nn::gqa_attention_backward(L.q, L.k, L.v, r.shape, 0, L.probs, d_attn, d_q, d_k, d_v);
      rope_.rotate_rows(d_q, 0, true);
      rope_.rotate_rows(d_k, 0, true);
      Matrix d_q_pre, d_k_pre;
      nn::rmsnorm_heads_backward(L.q_pre, ckpt_.tensor(r.q_norm), eps, d_q, d_q_pre,
                                 g.at(r.q_norm));
      nn::rmsnorm_heads_backward(L.k_pre, ckpt_.tensor(r.k_norm), eps, d_k, d_k_pre,
                                 g.at(r.k_norm));
      matmul_at_acc(L.h_attn, d_q_pre, g.at(r.wq));
      matmul_at_acc(L.h_attn, d_k_pre, g.at(r.wk));
      matmul_at_acc(L.h_attn, d_v, g.at(r.wv));
      Matrix d_h_attn;
      matmul_bt(d_q_pre, ckpt_.tensor(r.wq), d_h_attn);
      matmul_bt(d_k_pre, ckpt_.tensor(r.wk), tmp);
      add_into(d_h_attn, tmp);
      matmul_bt(d_v, ckpt_.tensor(r.wv), tmp);
      add_into(d_h_attn, tmp);
      nn::rmsnorm_rows_backward(L.x_in, ckpt_.tensor(r.attn_norm).row(0), eps, d_h_attn, tmp,
                                g.at(r.attn_norm).row(0));
      add_into(d_x, tmp);
    }
    Matrix& d_embed = g.at(std::string(tn::kEmbedding));
    for (std::size_t t = 0; t < T; ++t) {
      auto dst = d_embed.row(static_cast<std::size_t>(inputs[t]));
      auto src = d_x.row(t);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    return ce.loss;
  }

 private:
  const Checkpoint& ckpt_;
  const ScalePlan& plan_;
  nn::RopeTable rope_;
  std::vector<LayerRefs> refs_;
};

void check_batch(const Batch& batch) {
  if (batch.rows == 0 || batch.length == 0) fail(ErrorKind::kShape, "empty batch");
  if (batch.inputs.size() != batch.rows * batch.length ||
      batch.targets.size() != batch.rows * batch.length) {
    fail(ErrorKind::kShape, "batch buffers do not match rows x length");
  }
}

}  // namespace

Gradients zero_gradients(const Checkpoint& ckpt) {
  Gradients g;
  for (const auto& [name, m] : ckpt.tensors) g.emplace(name, Matrix(m.rows(), m.cols()));
  return g;
}

LossAndGrad loss_and_grad(const Checkpoint& ckpt, const Batch& batch) {
  check_batch(batch);
  const ScalePlan plan = build_plan(ckpt.spec);
  validate_checkpoint(ckpt);
  Tape tape(ckpt, plan);
  LossAndGrad out{0.0, zero_gradients(ckpt)};
  const double weight = 1.0 / static_cast<double>(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    out.loss += weight * tape.row(batch.input_row(r), batch.target_row(r), weight, &out.grads);
  }
  return out;
}

double evaluate_loss(const Checkpoint& ckpt, const Batch& batch) {
  check_batch(batch);
  const ScalePlan plan = build_plan(ckpt.spec);
  validate_checkpoint(ckpt);
  Tape tape(ckpt, plan);
  double loss = 0.0;
  const double weight = 1.0 / static_cast<double>(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    loss += weight * tape.row(batch.input_row(r), batch.target_row(r), weight, nullptr);
  }
  return loss;
}

}  // namespace oelm
