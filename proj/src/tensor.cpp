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
#include "stbasv/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace stbasv {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d < 0) throw std::invalid_argument("Tensor: negative extent in " + shape_str(shape_));
  }
  if (numel_of(shape_) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " wants " +
                                std::to_string(numel_of(shape_)) + " values, got " +
                                std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<double>(static_cast<size_t>(numel_of(shape)), 0.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(static_cast<size_t>(numel_of(shape)), value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

int64_t Tensor::dim(int axis) const {
  int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("Tensor::dim: axis out of range for " + shape_str(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

double Tensor::scalar_value() const {
  if (numel() != 1) {
    throw std::invalid_argument("Tensor::scalar_value: tensor of shape " +
                                shape_str(shape_) + " is not a scalar");
  }
  return (*data_)[0];
}

bool Tensor::all_finite() const {
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  t.requires_grad_ = false;
  return t;
}

bool Tensor::same_bits(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  if (!data_ || !other.data_) return data_ == other.data_;
  return std::memcmp(data_->data(), other.data_->data(),
                     data_->size() * sizeof(double)) == 0;
}

Tensor Tape::watch(const Tensor& t, bool requires_grad) {
  if (!t.defined()) throw std::invalid_argument("Tape::watch: undefined tensor");
  Node node;
  node.op = "leaf";
  node.value = t.detached();
  node.needs_grad = requires_grad;
  nodes_.push_back(std::move(node));
  Tensor out = t;
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  out.requires_grad_ = requires_grad;
  return out;
}

int Tape::ensure_on_tape(const Tensor& t) {
  if (t.tape() == this) return t.node();
  if (t.tape() != nullptr) {
    throw std::invalid_argument("Tape: input recorded on a different tape");
  }
  // Constants become non-gradient leaves.
  Tensor watched = watch(t, /*requires_grad=*/false);
  return watched.node();
}

Tensor Tape::record(const char* op, const std::vector<Tensor>& inputs, Tensor out,
                    ReplayFn replay, BackwardFn backward) {
  Node node;
  node.op = op;
  node.inputs.reserve(inputs.size());
  bool needs = false;
  for (const Tensor& in : inputs) {
    int id = ensure_on_tape(in);
    node.inputs.push_back(id);
    needs = needs || nodes_[static_cast<size_t>(id)].needs_grad;
  }
  node.value = out.detached();
  node.replay = std::move(replay);
  node.backward = std::move(backward);
  node.needs_grad = needs;
  nodes_.push_back(std::move(node));
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size()) - 1;
  out.requires_grad_ = needs;
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) {
    throw std::invalid_argument("Tape::backward: loss is not recorded on this tape");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument("Tape::backward: loss of shape " +
                                shape_str(loss.shape()) + " is not scalar");
  }
  grads_.assign(nodes_.size(), {});
  int start = loss.node();
  grads_[static_cast<size_t>(start)] = {1.0};

  for (int i = start; i >= 0; --i) {
    Node& node = nodes_[static_cast<size_t>(i)];
    std::vector<double>& g = grads_[static_cast<size_t>(i)];
    if (g.empty() || !node.needs_grad || !node.backward) continue;

    Tensor out_grad(node.value.shape(), g);
    std::vector<Tensor> input_values;
    input_values.reserve(node.inputs.size());
    for (int id : node.inputs) input_values.push_back(nodes_[static_cast<size_t>(id)].value);

    AccumFn accum = [&](size_t input_index, const Tensor& contribution) {
      int id = node.inputs[input_index];
      Node& target = nodes_[static_cast<size_t>(id)];
      if (!target.needs_grad) return;
      if (contribution.shape() != target.value.shape()) {
        throw std::logic_error(std::string("Tape::backward: gradient shape ") +
                               shape_str(contribution.shape()) + " for op '" + node.op +
                               "' input of shape " + shape_str(target.value.shape()));
      }
      std::vector<double>& dst = grads_[static_cast<size_t>(id)];
      if (dst.empty()) dst.assign(static_cast<size_t>(target.value.numel()), 0.0);
      const std::vector<double>& src = contribution.data();
      for (size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    };
    node.backward(out_grad, input_values, node.value, accum);
  }
}

Tensor Tape::gradient(const Tensor& t) const {
  if (t.tape() != this) {
    throw std::invalid_argument("Tape::gradient: tensor is not recorded on this tape");
  }
  const std::vector<double>& g = grads_[static_cast<size_t>(t.node())];
  if (g.empty()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), g);
}

bool Tape::replay_matches() const {
  std::vector<Tensor> replayed(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.replay) {
      replayed[i] = node.value;
      continue;
    }
    std::vector<Tensor> inputs;
    inputs.reserve(node.inputs.size());
    for (int id : node.inputs) inputs.push_back(replayed[static_cast<size_t>(id)]);
    replayed[i] = node.replay(inputs);
    if (!replayed[i].same_bits(node.value)) return false;
  }
  return true;
}

Tensor record_op(const char* op, const std::vector<Tensor>& inputs, Tensor out,
                 Tape::ReplayFn replay, Tape::BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Tensor& in : inputs) {
    if (!in.on_tape()) continue;
    if (tape == nullptr) {
      tape = in.tape();
    } else if (tape != in.tape()) {
      throw std::invalid_argument(std::string(op) + ": inputs recorded on different tapes");
    }
  }
  if (tape == nullptr) return out;
  return tape->record(op, inputs, std::move(out), std::move(replay), std::move(backward));
}

}  // namespace stbasv
