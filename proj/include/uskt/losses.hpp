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

#include <span>
#include <vector>

#include "uskt/tensor.hpp"

namespace uskt {

struct FocalCfg {
  double alpha = 0.25;              // used for every class unless class_alpha is set
  std::vector<double> class_alpha;  // optional per-class alpha_t
  double gamma = 2.0;

  double alpha_for(int label) const;
  void validate(int num_classes) const;
};

/// Batch mean of -alpha_t (1 - p_t)^gamma log(p_t), with p_t the softmax
/// probability of the true class. logits is [K] (one sample) or B×K.
template <typename T>
Tensor<T> focal_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels,
                     const FocalCfg& cfg);

/// Mean cross-entropy, the gamma = 0, alpha = 1 special case.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels);

/// Mean squared error over all elements of the reconstruction.
template <typename T>
Tensor<T> rec_loss(Tape<T>& tape, const Tensor<T>& x_rec, const Tensor<T>& x_uskt);

/// lambda1 * l_cls + lambda2 * l_rec. A term with weight 0 is left out of the
/// graph entirely, so nothing upstream of it receives a gradient.
template <typename T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& l_cls, const Tensor<T>& l_rec, double lambda1,
                     double lambda2);

}  // namespace uskt
