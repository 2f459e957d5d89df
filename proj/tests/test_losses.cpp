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


#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "uskt/losses.hpp"
#include "uskt/ops.hpp"
#include "uskt/optim.hpp"
#include "uskt/train.hpp"

using namespace uskt;
using uskt::testing::random_tensor;

namespace {

FocalCfg focal(double alpha, double gamma) {
  FocalCfg c;
  c.alpha = alpha;
  c.gamma = gamma;
  return c;
}

double focal_value(const Tensor<double>& logits, const std::vector<int>& labels, const FocalCfg& c) {
  Tape<double> tape;
  return focal_loss(tape, logits, labels, c).item();
}

}  // namespace

TEST_CASE("focal: confident prediction, two-way tie, scalar oracle") {
  CHECK(focal_value(Tensor<double>({1, 3}, {40, 0, 0}), {0}, focal(0.25, 2.0)) < 1e-30);
  CHECK(focal_value(Tensor<double>({1, 2}, {0.3, 0.3}), {1}, focal(1.0, 0.0)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  // p_t = 9 / (9 + 1) = 0.9 at the true class.
  const double v = focal_value(Tensor<double>({1, 2}, {std::log(9.0), 0.0}), {0}, focal(0.25, 2.0));
  CHECK(v == doctest::Approx(0.25 * 0.01 * -std::log(0.9)).epsilon(1e-12));
  CHECK(v == doctest::Approx(2.6341e-4).epsilon(1e-4));
}

TEST_CASE("focal: label range and config validation") {
  Tape<double> tape;
  std::vector<int> bad{3};
  CHECK_THROWS_AS(focal_loss(tape, Tensor<double>::zeros({1, 3}), bad, FocalCfg{}), ShapeError);
  CHECK_THROWS_AS(focal(0.0, 2.0).validate(3), FormatError);
  CHECK_THROWS_AS(focal(0.5, -1.0).validate(3), FormatError);
  FocalCfg per;
  per.class_alpha = {0.1, 0.2};
  CHECK_THROWS_AS(per.validate(3), FormatError);
  CHECK(per.alpha_for(1) == 0.2);
}

TEST_CASE("focal with gamma 0 and alpha 1 equals cross-entropy") {
  Rng rng(1);
  double worst = 0.0;
  for (int b = 0; b < 20; ++b) {
    const Index batch = 1 + static_cast<Index>(rng.below(8)), k = 2 + static_cast<Index>(rng.below(6));
    auto logits = random_tensor<double>({batch, k}, rng, -5, 5);
    std::vector<int> labels(static_cast<std::size_t>(batch));
    for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    Tape<double> tape;
    const double ce = cross_entropy(tape, logits, labels).item();
    // Reference cross-entropy with a max-shifted log-sum-exp.
    double ref = 0.0;
    for (Index i = 0; i < batch; ++i) {
      double m = -1e300;
      for (Index j = 0; j < k; ++j) m = std::max(m, logits.data()[i * k + j]);
      double z = 0.0;
      for (Index j = 0; j < k; ++j) z += std::exp(logits.data()[i * k + j] - m);
      ref += -(logits.data()[i * k + labels[i]] - m - std::log(z));
    }
    ref /= static_cast<double>(batch);
    CHECK(ce == doctest::Approx(ref).epsilon(1e-12));
    worst = std::max(worst, std::abs(focal_value(logits, labels, focal(1.0, 0.0)) - ce));
  }
  CHECK(worst <= 1e-7);
}

TEST_CASE("focal decreases as the true-class logit grows") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto logits = random_tensor<double>({1, 4}, rng);
    double prev = focal_value(logits, {2}, FocalCfg{});
    for (int step = 0; step < 30; ++step) {
      logits.mutable_data()[2] += 0.25;
      const double cur = focal_value(logits, {2}, FocalCfg{});
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("rec_loss: identities, oracle, mismatch") {
  Tape<float> tape;
  Rng rng(3);
  auto a = random_tensor<float>({3, 8, 8}, rng);
  CHECK(rec_loss(tape, a, a).item() == 0.0f);
  CHECK(rec_loss(tape, Tensor<float>::full({3, 224, 224}, 1.0f), Tensor<float>::zeros({3, 224, 224}))
            .item() == 1.0f);
  auto b = random_tensor<float>({3, 224, 224}, rng);
  auto c = random_tensor<float>({3, 224, 224}, rng);
  double ref = 0.0;
  for (Index i = 0; i < b.numel(); ++i) {
    const double d = static_cast<double>(b.data()[i]) - c.data()[i];
    ref += d * d;
  }
  ref /= static_cast<double>(b.numel());
  CHECK(std::abs(rec_loss(tape, b, c).item() - ref) < 1e-6);
  CHECK_THROWS_AS(rec_loss(tape, b, a), ShapeError);
}

TEST_CASE("total_loss: weighting, defaults, zero weights, linear gradients") {
  TrainConfig defaults;
  CHECK(defaults.lambda1 == 1.0);
  CHECK(defaults.lambda2 == 0.05);
  CHECK(defaults.lr == 0.0025);
  CHECK(defaults.lr_finetune == 0.000025);

  Tape<double> tape;
  auto lc = Tensor<double>::scalar(0.37, true), lr = Tensor<double>::scalar(2.5, true);
  CHECK(total_loss(tape, lc, lr, 1.0, 0.0).item() == 0.37);
  CHECK(total_loss(tape, lc, lr, 1.0, 0.05).item() == doctest::Approx(0.37 + 0.125));
  auto zero = total_loss(tape, lc, lr, 0.0, 0.0);
  CHECK(zero.item() == 0.0);
  backward(zero, tape);
  for (const auto* t : {&lc, &lr})
    for (double g : t->grad()) CHECK(g == 0.0);

  // grad(total) == l1 grad(l_cls) + l2 grad(l_rec)
  Rng rng(4);
  auto x = random_tensor<double>({2, 3}, rng, -2, 2, true);
  auto target = random_tensor<double>({2, 3}, rng);
  std::vector<int> labels{0, 2};
  auto grad_of = [&](double l1, double l2) {
    x.zero_grad();
    Tape<double> t;
    backward(total_loss(t, focal_loss(t, x, labels, FocalCfg{}), rec_loss(t, x, target), l1, l2), t);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto g_cls = grad_of(1.0, 0.0), g_rec = grad_of(0.0, 1.0), g_tot = grad_of(0.7, 0.3);
  for (std::size_t i = 0; i < g_tot.size(); ++i) {
    CHECK(g_tot[i] == doctest::Approx(0.7 * g_cls[i] + 0.3 * g_rec[i]).epsilon(1e-12));
  }
}

TEST_CASE("adamw: single step, zero gradient, pure decay") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> theta{0.0};
  std::vector<double> grad{1.0};
  AdamWState st;
  adamw_step<double>(theta, grad, st, 0.0025, cfg);
  CHECK(theta[0] == doctest::Approx(-0.0025).epsilon(1e-6));

  std::vector<float> p{1.0f, -2.0f};
  std::vector<float> zero{0.0f, 0.0f};
  AdamWState s2;
  for (int i = 0; i < 3; ++i) adamw_step<float>(p, zero, s2, 0.01, cfg);
  CHECK(p == std::vector<float>{1.0f, -2.0f});

  cfg.weight_decay = 0.01;
  std::vector<double> q{3.0, -1.5};
  std::vector<double> qz{0.0, 0.0};
  AdamWState s3;
  adamw_step<double>(q, qz, s3, 0.1, cfg);
  CHECK(q[0] == doctest::Approx(3.0 * (1 - 0.1 * 0.01)).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(-1.5 * (1 - 0.1 * 0.01)).epsilon(1e-14));
}

TEST_CASE("adamw: parameters without gradient are left alone") {
  ParamList<float> ps;
  ps.push_back({"with", Tensor<float>::full({2}, 1.0f, true), false});
  ps.push_back({"without", Tensor<float>::full({2}, 1.0f, true), false});
  ps[0].tensor.grad_buffer()[0] = 1.0f;
  AdamW<float> opt;
  opt.step(ps, [](const NamedParam<float>&) { return 0.1; });
  CHECK(ps[0].tensor.data()[0] != 1.0f);
  CHECK(ps[1].tensor.data()[0] == 1.0f);
  CHECK(ps[1].tensor.data()[1] == 1.0f);
}

TEST_CASE("cosine_lr: endpoints, midpoint, errors, monotonicity") {
  CHECK(cosine_lr(0, 100, 0.0025) == 0.0025);
  CHECK(cosine_lr(100, 100, 0.0025, 1e-4) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 0.0025, 1e-4) == doctest::Approx((0.0025 + 1e-4) / 2).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.1), FormatError);
  CHECK_THROWS_AS(cosine_lr(11, 10, 0.1), FormatError);
  double prev = cosine_lr(0, 37, 0.01, 0.001);
  for (int s = 1; s <= 37; ++s) {
    const double cur = cosine_lr(s, 37, 0.01, 0.001);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("argmax breaks ties towards the lowest index") {
  std::vector<float> tie{1.0f, 3.0f, 3.0f};
  CHECK(argmax(tie) == 1);
  std::vector<float> flat{0.0f, 0.0f, 0.0f};
  CHECK(argmax(flat) == 0);
  // Ten fixed logit rows, counted by hand: rows 0, 2, 3, 6, 9 are right.
  const float rows[10][3] = {{2, 1, 0}, {0, 1, 0}, {0, 0, 5}, {1, 1, 0}, {0, 2, 2},
                             {3, 2, 1}, {0, 4, 1}, {1, 0, 0}, {2, 2, 2}, {0, 1, 9}};
  const int labels[10] = {0, 2, 2, 0, 2, 1, 1, 2, 1, 2};
  int correct = 0;
  for (int i = 0; i < 10; ++i) correct += argmax(std::span<const float>(rows[i], 3)) == labels[i];
  CHECK(correct == 5);
}
