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

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "uskt/layers.hpp"

namespace uskt {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

/// One AdamW update of theta in place:
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
/// with bias-corrected moments and the decay applied to the pre-step theta.
template <typename T>
void adamw_step(std::span<T> theta, std::span<const T> grad, AdamWState& state, double lr,
                const AdamWConfig& cfg);

/// AdamW over a parameter list. Parameters that received no gradient since
/// the last zero_grad() are skipped entirely (no moment update, no decay).
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// lr_for returns the learning rate of a parameter for this step.
  void step(const ParamList<T>& params, const std::function<double(const NamedParam<T>&)>& lr_for);
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<AdamWState> states_;
};

/// lr_min + (lr_base - lr_min) (1 + cos(pi step / total_steps)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_base, double lr_min = 0.0);

}  // namespace uskt
