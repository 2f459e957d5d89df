// Copyright 2026 The USKT Authors. All Rights Reserved.
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
#include <new>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace uskt {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files or configuration.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a forward op.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Cache-line aligned so that vectorized kernels split work the same way
// regardless of where the heap happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorStorage {
  Shape shape;
  Buffer<T> value;
  // Empty until the first gradient contribution lands; an empty buffer means
  // "no gradient", which the optimizer treats differently from zeros.
  Buffer<T> grad;
  bool requires_grad = false;
};

/// Dense row-major tensor handle. Copies share storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer<T> values, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(values), requires_grad) {}
  Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  Index dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t rank() const { return storage_->shape.size(); }
  Index numel() const { return static_cast<Index>(storage_->value.size()); }

  std::span<const T> data() const { return storage_->value; }
  std::span<T> mutable_data() const { return storage_->value; }
  T item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool on) const { storage_->requires_grad = on; }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const T> grad() const { return storage_->grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<T> grad_buffer() const;
  void zero_grad() const { storage_->grad.clear(); }

  /// Fresh storage holding a copy of the values; never requires grad.
  Tensor detach_copy() const;

  TensorStorage<T>* storage() const { return storage_.get(); }
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  std::shared_ptr<TensorStorage<T>> storage_;
};

/// Append-only record of the operations executed in one forward pass.
/// backward() replays the entries in exact reverse order.
template <typename T>
class Tape {
 public:
  struct Node {
    std::string_view op;
    std::function<void()> backward;
  };

  void record(std::string_view op, std::function<void()> backward_fn) {
    nodes_.push_back(Node{op, std::move(backward_fn)});
  }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// Seeds d(loss)/d(loss) = 1 and runs the tape backwards. Leaves that require
/// grad end up holding their accumulated gradient.
template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape);

/// Throws NumericError naming `op` when any element is NaN or Inf.
template <typename T>
void check_finite(std::string_view op, std::span<const T> values);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace uskt
