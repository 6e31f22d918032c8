/* Copyright 2026 The stb-asv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stbasv/tensor.hpp"

namespace stbasv {

enum class Normalizer { softmax, sparsemax };

Normalizer normalizer_from_string(const std::string& s);
std::string to_string(Normalizer n);

// Multi-head attention weights. Per head: projections [N, d_k] with biases
// [d_k]; one shared output projection [N, N]; d_k = N / heads.
struct AttentionParams {
  std::vector<Tensor> w_q, w_k, w_v;
  std::vector<Tensor> b_q, b_k, b_v;
  Tensor w_o;

  int heads() const { return static_cast<int>(w_q.size()); }
};

// Raw (pre-normalizer) attention score matrices handed from one layer to the
// next. An empty `p` means the zero state ahead of the first layer. For a
// rank-2 input each entry is [A, A]; for batched rank-3 input, [B, A, A].
// Per-head by default; a stack running in shared-score mode keeps a single
// matrix (p.size() == 1) that every head reads and that collects the mean of
// the heads' fresh scores.
struct ScoreState {
  std::vector<Tensor> p;
  int origin_layer = -1;

  bool is_zero() const { return p.empty(); }
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct MhaResult {
  Tensor y;
  ScoreState next;
};

// Scaled dot-product self-attention over the second-to-last axis of `x`
// (rank 2 [A, N] or rank 3 [batch, A, N]). Per head: S = Q K^T / sqrt(d_k)
// plus the previous layer's raw scores; the normalizer maps each score row
// to weights; Y concatenates the head outputs through the output projection.
// The returned state carries the raw S matrices, so score residuals
// accumulate across a stack of layers.
MhaResult mha_residual_scores(const Tensor& x, const AttentionParams& params,
                              const ScoreState& prev, Normalizer normalizer,
                              bool shared_scores = false);

// x + inner(layer_norm(x)). The inner function must preserve shape.
Tensor prenorm_sublayer(const Tensor& x,
                        const std::function<Tensor(const Tensor&)>& inner,
                        const LayerNormParams& norm);

// relu(x W1 + b1) W2 + b2 applied position-wise.
Tensor ffn(const Tensor& x, const FfnParams& params);

}  // namespace stbasv
