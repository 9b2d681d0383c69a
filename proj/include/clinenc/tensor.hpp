// Copyright 2026 The clinenc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace clinenc {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major tensor with an optional gradient buffer.
///
/// A Tensor is a handle: copies alias the same storage, which is what lets the
/// tape hold references to intermediate values. Use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : s_(std::make_shared<Storage>()) {
    s_->data.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
    if (values.size() != shape_numel(shape)) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_string(shape));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(values);
  }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }

  /// Leading extent; a rank-0/1 tensor counts as one row.
  std::size_t rows() const { return rank() >= 2 ? s_->shape[0] : 1; }
  std::size_t cols() const { return rows() == 0 ? 0 : numel() / rows(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  T item() const {
    if (numel() != 1) {
      throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
    }
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  // Gradient access is a property of the shared storage, not of this handle,
  // so it is available through const handles (the tape captures them).
  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() const {
    ensure_grad();
    return s_->grad;
  }
  void ensure_grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  }
  void zero_grad() const { s_->grad.clear(); }

  Tensor clone() const {
    Tensor out;
    out.s_ = std::make_shared<Storage>();
    out.s_->shape = s_->shape;
    out.s_->data = s_->data;
    return out;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Ordered record of differentiable operations.
///
/// Nodes are appended as ops execute, so inputs always precede the node that
/// consumes them; backward() walks the list in exact reverse. A tape
/// constructed with recording=false turns every op into a plain forward
/// computation.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// True when an op over these inputs must be recorded.
  bool wants(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording_) return false;
    for (const auto* t : inputs) {
      if (t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  void record(Tensor<T> output, std::function<void()> backward_fn) {
    output.set_requires_grad(true);
    nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
  }

  /// Reverse sweep seeded with d(loss)/d(loss) = 1.
  void backward(Tensor<T>& loss);

 private:
  struct Node {
    Tensor<T> output;
    std::function<void()> backward_fn;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

template <typename T>
void Tape<T>::backward(Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_string(loss.shape()) : "[undefined]"));
  }
  bool on_tape = false;
  for (const auto& n : nodes_) {
    if (n.output.same_storage(loss)) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) throw std::invalid_argument("backward: loss was not produced on this tape");
  loss.grad()[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->backward_fn();
  }
}

template <typename T>
void backward(Tape<T>& tape, Tensor<T>& loss) {
  tape.backward(loss);
}

}  // namespace clinenc
