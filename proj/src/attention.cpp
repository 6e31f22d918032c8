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
#include "stbasv/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "stbasv/errors.hpp"
#include "stbasv/ops.hpp"

namespace stbasv {
namespace {

// x [.., A, d] plus a row bias [d].
Tensor add_bias(const Tensor& x, const Tensor& b) {
  return ops::add(x, ops::broadcast_to(b, x.shape()));
}

void check_params(const AttentionParams& p, int64_t n) {
  const size_t h = p.w_q.size();
  if (h == 0) throw ConfigError("attention: head count must be >= 1");
  if (p.w_k.size() != h || p.w_v.size() != h || p.b_q.size() != h ||
      p.b_k.size() != h || p.b_v.size() != h) {
    throw ConfigError("attention: per-head parameter lists have uneven lengths");
  }
  if (n % static_cast<int64_t>(h) != 0) {
    throw ConfigError("attention: model dim " + std::to_string(n) +
                      " not divisible by " + std::to_string(h) + " heads");
  }
  const int64_t dk = n / static_cast<int64_t>(h);
  for (size_t i = 0; i < h; ++i) {
    if (p.w_q[i].shape() != Shape{n, dk} || p.w_k[i].shape() != Shape{n, dk} ||
        p.w_v[i].shape() != Shape{n, dk}) {
      throw ConfigError("attention: head " + std::to_string(i) +
                        " projection must be [" + std::to_string(n) + "," +
                        std::to_string(dk) + "], got " +
                        shape_str(p.w_q[i].shape()));
    }
    if (p.b_q[i].shape() != Shape{dk} || p.b_k[i].shape() != Shape{dk} ||
        p.b_v[i].shape() != Shape{dk}) {
      throw ConfigError("attention: head " + std::to_string(i) +
                        " bias must be [" + std::to_string(dk) + "]");
    }
  }
  if (p.w_o.shape() != Shape{n, n}) {
    throw ConfigError("attention: output projection must be [" +
                      std::to_string(n) + "," + std::to_string(n) + "], got " +
                      shape_str(p.w_o.shape()));
  }
}

Tensor apply_normalizer(const Tensor& s, Normalizer n) {
  return n == Normalizer::softmax ? ops::softmax_lastdim(s)
                                  : ops::sparsemax_lastdim(s);
}

}  // namespace

Normalizer normalizer_from_string(const std::string& s) {
  if (s == "softmax") return Normalizer::softmax;
  if (s == "sparsemax") return Normalizer::sparsemax;
  throw ConfigError("normalizer must be 'softmax' or 'sparsemax', got '" + s + "'");
}

std::string to_string(Normalizer n) {
  return n == Normalizer::softmax ? "softmax" : "sparsemax";
}

MhaResult mha_residual_scores(const Tensor& x, const AttentionParams& params,
                              const ScoreState& prev, Normalizer normalizer,
                              bool shared_scores) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw std::invalid_argument("mha_residual_scores: input must be [A,N] or "
                                "[batch,A,N], got " + shape_str(x.shape()));
  }
  const int64_t n = x.dim(-1);
  check_params(params, n);
  const int h = params.heads();
  const int64_t dk = n / h;

  if (!prev.is_zero()) {
    const size_t want = shared_scores ? 1 : static_cast<size_t>(h);
    if (prev.p.size() != want) {
      throw ConfigError("mha_residual_scores: score state carries " +
                        std::to_string(prev.p.size()) + " matrices but " +
                        std::to_string(want) + " expected");
    }
  }

  Shape score_shape = x.shape();
  score_shape[score_shape.size() - 1] = x.dim(-2);  // [.., A, A]

  std::vector<Tensor> heads;
  std::vector<Tensor> raw_scores;
  heads.reserve(static_cast<size_t>(h));
  raw_scores.reserve(static_cast<size_t>(h));
  for (int i = 0; i < h; ++i) {
    const size_t ui = static_cast<size_t>(i);
    const Tensor q = add_bias(ops::matmul(x, params.w_q[ui]), params.b_q[ui]);
    const Tensor k = add_bias(ops::matmul(x, params.w_k[ui]), params.b_k[ui]);
    const Tensor v = add_bias(ops::matmul(x, params.w_v[ui]), params.b_v[ui]);
    Tensor s = ops::scale(ops::matmul(q, ops::transpose_lastdims(k)),
                          1.0 / std::sqrt(static_cast<double>(dk)));
    if (!prev.is_zero()) {
      const Tensor& carried = shared_scores ? prev.p[0] : prev.p[ui];
      if (carried.shape() != s.shape()) {
        throw ConfigError("mha_residual_scores: carried scores are " +
                          shape_str(carried.shape()) + " but this layer needs " +
                          shape_str(s.shape()));
      }
      s = ops::add(s, carried);
    }
    raw_scores.push_back(s);
    heads.push_back(ops::matmul(apply_normalizer(s, normalizer), v));
  }

  MhaResult out;
  out.y = ops::matmul(ops::concat_lastdim(heads), params.w_o);
  out.next.origin_layer = prev.origin_layer + 1;
  if (shared_scores) {
    Tensor sum = raw_scores[0];
    for (int i = 1; i < h; ++i) sum = ops::add(sum, raw_scores[static_cast<size_t>(i)]);
    out.next.p.push_back(ops::scale(sum, 1.0 / static_cast<double>(h)));
  } else {
    out.next.p = std::move(raw_scores);
  }
  return out;
}

Tensor prenorm_sublayer(const Tensor& x,
                        const std::function<Tensor(const Tensor&)>& inner,
                        const LayerNormParams& norm) {
  const Tensor inner_out = inner(ops::layer_norm(x, norm.gamma, norm.beta));
  if (inner_out.shape() != x.shape()) {
    throw std::logic_error("prenorm_sublayer: inner function changed shape " +
                           shape_str(x.shape()) + " -> " +
                           shape_str(inner_out.shape()));
  }
  return ops::add(x, inner_out);
}

Tensor ffn(const Tensor& x, const FfnParams& params) {
  const int64_t n = x.dim(-1);
  if (params.w1.rank() != 2 || params.w1.dim(0) != n) {
    throw ConfigError("ffn: first projection must be [" + std::to_string(n) +
                      ",*], got " + shape_str(params.w1.shape()));
  }
  const int64_t n_ff = params.w1.dim(1);
  if (params.w2.shape() != Shape{n_ff, n} || params.b1.shape() != Shape{n_ff} ||
      params.b2.shape() != Shape{n}) {
    throw ConfigError("ffn: inconsistent parameter shapes: w1 " +
                      shape_str(params.w1.shape()) + ", w2 " +
                      shape_str(params.w2.shape()));
  }
  const Tensor hidden = ops::relu(add_bias(ops::matmul(x, params.w1), params.b1));
  return add_bias(ops::matmul(hidden, params.w2), params.b2);
}

}  // namespace stbasv
