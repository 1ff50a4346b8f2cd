// Copyright 2026 The hacnn Authors.
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
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hacnn {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned storage. Fixed alignment keeps vectorised kernels on
/// the same code path, so results do not depend on where the heap put a
/// buffer.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(Align)); }

  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorNode {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::string name;

  Buffer<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Shared handle to a dense row-major array. Copies alias the same storage;
/// feature maps use N x H x W x C layout.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, Buffer<T> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{}, Buffer<T>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  // Writable storage; reserved for parameter updates and test setup.
  std::span<T> mutable_values() { return node_->value; }
  const T* data() const { return node_->value.data(); }

  T item() const {
    if (size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }

  T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t d = 0;
    for (auto i : index) {
      if (i >= node_->shape[d]) throw std::out_of_range("tensor index");
      flat = flat * node_->shape[d] + i;
      ++d;
    }
    return node_->value[flat];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_buffer() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  const std::string& name() const { return node_->name; }
  void set_name(std::string name) { node_->name = std::move(name); }

  bool is_same(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

  /// Value copy with no gradient history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of backward rules. Replaying in reverse accumulates
/// gradients into every input that requires them.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return rules_.size(); }

  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : "<empty>"));
    }
    if (!loss.requires_grad()) {
      throw std::invalid_argument("backward: loss does not depend on any parameter");
    }
    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    rules_.clear();
  }

  void clear() { rules_.clear(); }

  // Non-smooth decisions (relu masks, max-pool winners, sampling cells) are
  // folded into a signature so finite differences can detect kink crossings.
  void track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void mix_kink(std::uint64_t v) {
    kink_ ^= v + 0x9e3779b97f4a7c15ULL + (kink_ << 6) + (kink_ >> 2);
  }
  std::uint64_t kink_signature() const { return kink_; }

 private:
  bool recording_;
  bool track_kinks_ = false;
  std::uint64_t kink_ = 0;
  std::vector<std::function<void()>> rules_;
};

}  // namespace hacnn
