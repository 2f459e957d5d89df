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

#include "uskt/optim.hpp"

#include <cmath>
#include <numbers>

namespace uskt {

template <typename T>
void adamw_step(std::span<T> theta, std::span<const T> grad, AdamWState& state, double lr,
                const AdamWConfig& cfg) {
  if (state.m.size() != theta.size()) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    double& m = state.m[i];
    double& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    const double old = theta[i];
    theta[i] = static_cast<T>(old - lr * m_hat / (std::sqrt(v_hat) + cfg.eps) -
                              lr * cfg.weight_decay * old);
  }
}

template <typename T>
void AdamW<T>::step(const ParamList<T>& params,
                    const std::function<double(const NamedParam<T>&)>& lr_for) {
  if (states_.size() < params.size()) states_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    adamw_step<T>(p.mutable_data(), p.grad(), states_[i], lr_for(params[i]), cfg_);
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_base, double lr_min) {
  if (total_steps <= 0) throw FormatError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw FormatError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_base - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

template void adamw_step<float>(std::span<float>, std::span<const float>, AdamWState&, double,
                                const AdamWConfig&);
template void adamw_step<double>(std::span<double>, std::span<const double>, AdamWState&, double,
                                 const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace uskt
