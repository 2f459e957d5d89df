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

#include "uskt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace uskt {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const LossGraph& graph) {
  Tape<double> tape;
  const Tensor<double> loss = graph(tape);
  const double v = loss.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossGraph& graph, std::vector<NamedLeaf> leaves, double eps,
                           double tol) {
  for (auto& leaf : leaves) {
    leaf.tensor.set_requires_grad(true);
    leaf.tensor.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    const Tensor<double> loss = graph(tape);
    backward(loss, tape);
    for (auto& leaf : leaves) {
      if (leaf.tensor.has_grad()) {
        analytic.emplace_back(leaf.tensor.grad().begin(), leaf.tensor.grad().end());
      } else {
        analytic.emplace_back(static_cast<std::size_t>(leaf.tensor.numel()), 0.0);
      }
    }
  }

  GradCheckReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return evaluate(graph);
      };
      const double f1 = at(eps), b1 = at(-eps), f2 = at(2.0 * eps), b2 = at(-2.0 * eps);
      values[i] = saved;
      const double numeric = (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * eps);
      const double err = relative_error(analytic[li][i], numeric);
      ++report.elements_checked;
      if (err > report.max_rel_err || report.worst_index < 0) {
        report.max_rel_err = std::max(report.max_rel_err, err);
        if (err >= report.max_rel_err) {
          report.worst_leaf = leaves[li].name;
          report.worst_index = static_cast<Index>(i);
          report.worst_analytic = analytic[li][i];
          report.worst_numeric = numeric;
        }
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  for (auto& leaf : leaves) leaf.tensor.zero_grad();
  return report;
}

}  // namespace uskt
