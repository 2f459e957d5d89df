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

#include <functional>
#include <string>
#include <vector>

#include "uskt/tensor.hpp"

namespace uskt {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  Index elements_checked = 0;
  std::string worst_leaf;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// A closure that rebuilds the scalar loss from captured leaves on a fresh tape.
using LossGraph = std::function<Tensor<double>(Tape<double>&)>;

struct NamedLeaf {
  std::string name;
  Tensor<double> tensor;
};

/// Compares tape gradients of every leaf element against the fourth-order
/// central difference
///   (8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / (12 h).
/// The relative error of one element is |a - b| / max(1e-8, |a| + |b|).
GradCheckReport grad_check(const LossGraph& graph, std::vector<NamedLeaf> leaves,
                           double eps = 1e-3, double tol = 1e-4);

double relative_error(double analytic, double numeric);

}  // namespace uskt
