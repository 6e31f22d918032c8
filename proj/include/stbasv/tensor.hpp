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

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace stbasv {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t numel_of(const Shape& s);

class Tape;

// Dense row-major float64 tensor. The value is immutable once constructed;
// "mutation" is building a new Tensor. A tensor optionally carries a handle
// to the tape node that produced it, which is how gradients are looked up
// after backward().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  // Python-style axis indexing: dim(-1) is the last extent.
  int64_t dim(int axis) const;
  int64_t numel() const;
  const std::vector<double>& data() const { return *data_; }
  double operator[](int64_t flat) const { return (*data_)[static_cast<size_t>(flat)]; }
  double scalar_value() const;
  bool all_finite() const;

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr; }
  bool requires_grad() const { return requires_grad_; }
  // Same data, no tape handle.
  Tensor detached() const;

  bool same_bits(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
  bool requires_grad_ = false;

  friend class Tape;
};

// Reverse-mode gradient tape. Kernels record one node per application, in
// topological order (inputs always precede their consumers). backward()
// walks the recorded range once in reverse, accumulating gradients with a
// fixed summation order so repeated runs are bit-identical.
class Tape {
 public:
  using ReplayFn = std::function<Tensor(const std::vector<Tensor>&)>;
  using AccumFn = std::function<void(size_t input_index, const Tensor& contribution)>;
  using BackwardFn = std::function<void(const Tensor& out_grad,
                                        const std::vector<Tensor>& inputs,
                                        const Tensor& output, const AccumFn& accum)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `t` as a leaf and returns a handle-carrying copy.
  Tensor watch(const Tensor& t, bool requires_grad = true);

  // Accumulates gradients of `loss` (a scalar recorded on this tape) into
  // every reachable node that requires them. May be called again after more
  // recording; gradients are reset each call.
  void backward(const Tensor& loss);

  // Gradient of the last backward() pass with respect to `t`. Zero tensor if
  // `t` was not reached.
  Tensor gradient(const Tensor& t) const;

  // Recomputes every non-leaf node from the recorded inputs and compares
  // against the recorded outputs bit for bit.
  bool replay_matches() const;

  size_t size() const { return nodes_.size(); }
  const char* op_name(int node) const { return nodes_[static_cast<size_t>(node)].op; }

  // Used by kernel implementations; not part of the modelling API.
  Tensor record(const char* op, const std::vector<Tensor>& inputs, Tensor out,
                ReplayFn replay, BackwardFn backward);

 private:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    Tensor value;
    ReplayFn replay;      // empty for leaves
    BackwardFn backward;  // empty for leaves
    bool needs_grad;
  };

  int ensure_on_tape(const Tensor& t);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;  // parallel to nodes_; empty = none
};

// Records `out` as the result of applying `op` to `inputs`. If no input is
// tape-tracked the output is returned untouched (pure evaluation). All
// tracked inputs must live on the same tape.
Tensor record_op(const char* op, const std::vector<Tensor>& inputs, Tensor out,
                 Tape::ReplayFn replay, Tape::BackwardFn backward);

}  // namespace stbasv
