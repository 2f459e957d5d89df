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

// Private helpers shared by the op implementations.

#include <Eigen/Core>

#include <initializer_list>
#include <string>

#include "uskt/tensor.hpp"

namespace uskt::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(T* p, Index rows, Index cols) {
  return MatMap<T>(p, rows, cols);
}
template <typename T>
ConstMatMap<T> as_mat(const T* p, Index rows, Index cols) {
  return ConstMatMap<T>(p, rows, cols);
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

template <typename T>
bool any_wants_grad(std::initializer_list<const Tensor<T>*> ts) {
  for (const Tensor<T>* t : ts) {
    if (wants_grad(*t)) return true;
  }
  return false;
}

/// Builds an op output and runs the finiteness check.
template <typename T>
Tensor<T> make_output(std::string_view op, Shape shape, Buffer<T> values, bool requires_grad) {
  check_finite<T>(op, values);
  return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

/// Unfolds a C×H×W image into (C·k·k)×(Ho·Wo) patch columns.
template <typename T>
void im2col(const T* img, Index channels, Index height, Index width, int k, int stride,
            int padding, Index out_h, Index out_w, T* cols);

/// Adjoint of im2col: scatters patch columns back, accumulating into img.
template <typename T>
void col2im(const T* cols, Index channels, Index height, Index width, int k, int stride,
            int padding, Index out_h, Index out_w, T* img);

}  // namespace uskt::detail
