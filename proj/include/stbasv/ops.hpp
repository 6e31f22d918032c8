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

#include <vector>

#include "stbasv/tensor.hpp"

namespace stbasv::ops {

// Every kernel below registers itself on the tape of its tracked inputs with
// the matching gradient rule; applied to plain tensors it is a pure function.

// Batched matrix product: a [..,M,K] x b [..,K,P] -> [..,M,P]. Leading batch
// extents broadcast against each other (right-aligned, 1 expands).
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

// Normalizes the last axis to zero mean / unit variance, then applies the
// per-feature affine gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Rows (last axis) map to the probability simplex. softmax uses max-shifted
// exponentials; sparsemax is the exact Euclidean projection, so low-scoring
// entries come out exactly zero.
Tensor softmax_lastdim(const Tensor& z);
Tensor sparsemax_lastdim(const Tensor& z);

Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
// Swaps the trailing two axes.
Tensor transpose_lastdims(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor broadcast_to(const Tensor& x, const Shape& target);
Tensor mean_over_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
// x / ||x||_2 over the whole tensor (used on rank-1 embeddings).
Tensor l2_normalize(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label]. logits [B,S].
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int64_t>& labels);

// Pure helper (no gradient): stacks the selected leading-axis slices of a
// rank-3 tensor in the given order.
Tensor take_axis0(const Tensor& x, const std::vector<int64_t>& indices);

}  // namespace stbasv::ops
