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

#include "uskt/losses.hpp"

#include <algorithm>
#include <cmath>

#include "detail.hpp"
#include "uskt/ops.hpp"

namespace uskt {

double FocalCfg::alpha_for(int label) const {
  if (class_alpha.empty()) return alpha;
  return class_alpha.at(static_cast<std::size_t>(label));
}

void FocalCfg::validate(int num_classes) const {
  if (!(gamma >= 0.0)) throw FormatError("focal gamma must be >= 0");
  auto check = [](double a) {
    if (!(a > 0.0 && a <= 1.0)) throw FormatError("focal alpha must lie in (0, 1]");
  };
  check(alpha);
  for (double a : class_alpha) check(a);
  if (!class_alpha.empty() && static_cast<int>(class_alpha.size()) != num_classes) {
    throw FormatError("focal class_alpha needs one entry per class");
  }
}

namespace {

template <typename T>
Tensor<T> focal_impl(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels,
                     const FocalCfg& cfg, const char* op) {
  detail::require(logits.defined() && (logits.rank() == 1 || logits.rank() == 2),
                  std::string(op) + ": logits must be [K] or B×K");
  const Index batch = logits.rank() == 1 ? 1 : logits.dim(0);
  const Index classes = logits.shape().back();
  detail::require(static_cast<Index>(labels.size()) == batch,
                  std::string(op) + ": expected " + std::to_string(batch) + " labels, got " +
                      std::to_string(labels.size()));
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw ShapeError(std::string(op) + ": label " + std::to_string(y) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
  }
  const double gamma = cfg.gamma;
  const auto z = logits.data();
  // Per sample: softmax probabilities and dL/dz, both in double.
  std::vector<double> dz(static_cast<std::size_t>(batch * classes));
  double total = 0.0;
  std::vector<double> p(static_cast<std::size_t>(classes));
  for (Index b = 0; b < batch; ++b) {
    const T* row = z.data() + b * classes;
    const int y = labels[static_cast<std::size_t>(b)];
    const double zmax = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (Index j = 0; j < classes; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - zmax);
      denom += p[j];
    }
    double rest = 0.0;  // 1 - p_t without cancellation
    for (Index j = 0; j < classes; ++j) {
      p[j] /= denom;
      if (j != y) rest += p[j];
    }
    const double log_pt = static_cast<double>(row[y]) - zmax - std::log(denom);
    const double pt = p[y];
    const double alpha = cfg.alpha_for(y);
    const double mod = gamma == 0.0 ? 1.0 : std::pow(rest, gamma);
    total += -alpha * mod * log_pt;
    // dL/dp_t * p_t, then dp_t/dz_j = p_t (delta_jy - p_j).
    double dmod_term = 0.0;
    if (gamma != 0.0 && rest > 0.0) dmod_term = gamma * std::pow(rest, gamma - 1.0) * pt * log_pt;
    const double coeff = -alpha * (mod - dmod_term);
    for (Index j = 0; j < classes; ++j) {
      const double delta = j == y ? 1.0 : 0.0;
      dz[b * classes + j] = coeff * (delta - p[j]) / static_cast<double>(batch);
    }
  }
  const bool rg = detail::wants_grad(logits);
  Tensor<T> result = detail::make_output<T>(op, {1}, {static_cast<T>(total / batch)}, rg);
  if (rg) {
    tape.record(op, [logits, result, dz = std::move(dz)]() mutable {
      if (!result.has_grad()) return;
      const T g = result.grad()[0];
      auto gl = logits.grad_buffer();
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * static_cast<T>(dz[i]);
    });
  }
  return result;
}

}  // namespace

template <typename T>
Tensor<T> focal_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels,
                     const FocalCfg& cfg) {
  return focal_impl(tape, logits, labels, cfg, "focal_loss");
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels) {
  FocalCfg ce;
  ce.alpha = 1.0;
  ce.gamma = 0.0;
  return focal_impl(tape, logits, labels, ce, "cross_entropy");
}

template <typename T>
Tensor<T> rec_loss(Tape<T>& tape, const Tensor<T>& x_rec, const Tensor<T>& x_uskt) {
  return ops::mse(tape, x_rec, x_uskt);
}

template <typename T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& l_cls, const Tensor<T>& l_rec, double lambda1,
                     double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw FormatError("loss weights must be >= 0");
  Tensor<T> cls, rec;
  if (lambda1 != 0.0) cls = ops::scale(tape, l_cls, static_cast<T>(lambda1));
  if (lambda2 != 0.0) rec = ops::scale(tape, l_rec, static_cast<T>(lambda2));
  if (cls.defined() && rec.defined()) return ops::add(tape, cls, rec);
  if (cls.defined()) return cls;
  if (rec.defined()) return rec;
  return Tensor<T>::scalar(T(0));
}

#define USKT_INSTANTIATE_LOSSES(T)                                                         \
  template Tensor<T> focal_loss(Tape<T>&, const Tensor<T>&, std::span<const int>,          \
                                const FocalCfg&);                                          \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const int>);      \
  template Tensor<T> rec_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> total_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, double, double);

USKT_INSTANTIATE_LOSSES(float)
USKT_INSTANTIATE_LOSSES(double)

#undef USKT_INSTANTIATE_LOSSES

}  // namespace uskt
