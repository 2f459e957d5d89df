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

#include "uskt/tensor.hpp"

#include <cmath>
#include <sstream>

namespace uskt {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values, bool requires_grad)
    : storage_(std::make_shared<TensorStorage<T>>()) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (uskt::numel(shape) != static_cast<Index>(values.size())) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  storage_->shape = std::move(shape);
  storage_->value = std::move(values);
  storage_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  const Index n = uskt::numel(shape);
  return Tensor(std::move(shape), Buffer<T>(static_cast<std::size_t>(n), fill), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return Tensor(Shape{1}, Buffer<T>{v}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (storage_->value.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  }
  return storage_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->value.size(), T(0));
  return storage_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach_copy() const {
  return Tensor(storage_->shape, storage_->value, false);
}

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  Tensor<T> seed = loss;
  seed.grad_buffer()[0] += T(1);
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) it->backward();
}

template <typename T>
void check_finite(std::string_view op, std::span<const T> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " produced by " << op << " at element " << i;
      throw NumericError(os.str());
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&, Tape<float>&);
template void backward(const Tensor<double>&, Tape<double>&);
template void check_finite<float>(std::string_view, std::span<const float>);
template void check_finite<double>(std::string_view, std::span<const double>);

}  // namespace uskt
