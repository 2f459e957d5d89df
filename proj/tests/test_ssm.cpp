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
#include "uskt/ssm.hpp"
#include "uskt/verify.hpp"

using namespace uskt;
using uskt::testing::max_abs_diff;
using uskt::testing::random_tensor;

namespace {

template <typename T>
SSMParams<T> fixed_params(double a, double delta) {
  SSMParams<T> p;
  p.width = 1;
  p.state = 1;
  p.a_log = Tensor<T>({1, 1}, {static_cast<T>(std::log(-a))});
  p.b = Tensor<T>({1, 1}, {T(1)});
  p.c = Tensor<T>({1, 1}, {T(1)});
  p.d = Tensor<T>({1}, {T(0)});
  p.delta_log = Tensor<T>({1}, {static_cast<T>(std::log(delta))});
  return p;
}

template <typename T>
struct ScanInstance {
  Tensor<T> a_bar, b_bar, c, d, x;
};

template <typename T>
ScanInstance<T> random_instance(Rng& rng, Index len, Index e, Index s) {
  SSMParams<T> p(e, s, rng);
  auto disc = discretize(p);
  return {disc.a_bar, disc.b_bar, p.c, p.d, random_tensor<T>({len, e}, rng)};
}

double silu_ref(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("discretize: limits and closed form") {
  auto half = discretize(fixed_params<double>(-1.0, std::log(2.0)));
  CHECK(half.a_bar.data()[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(half.b_bar.data()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  auto tiny = discretize(fixed_params<double>(-1.0, 1e-12));
  CHECK(tiny.a_bar.data()[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(tiny.b_bar.data()[0] < 1e-11);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    SSMParams<float> p(16, 8, rng);
    const auto disc = discretize(p);
    for (float v : disc.a_bar.data()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
}

TEST_CASE("scan_sequential: pure skip, hand-unrolled recurrence, single step") {
  Rng rng(2);
  auto inst = random_instance<double>(rng, 9, 3, 4);
  auto zero_c = Tensor<double>::zeros({3, 4});
  auto ones_d = Tensor<double>::full({3}, 1.0);
  auto y = scan_sequential(inst.a_bar, inst.b_bar, zero_c, ones_d, inst.x);
  CHECK(max_abs_diff<double>(y.data(), inst.x.data()) == 0.0);

  Tensor<double> a({1, 1}, {0.5}), b({1, 1}, {1.0}), c({1, 1}, {1.0}), d({1}, {0.0});
  auto r = scan_sequential(a, b, c, d, Tensor<double>({3, 1}, {1, 0, 0}));
  CHECK(r.data()[0] == 1.0);
  CHECK(r.data()[1] == 0.5);
  CHECK(r.data()[2] == 0.25);

  auto one = random_instance<double>(rng, 1, 2, 3);
  auto y1 = scan_sequential(one.a_bar, one.b_bar, one.c, one.d, one.x);
  for (Index e = 0; e < 2; ++e) {
    double expect = one.d.data()[e] * one.x.data()[e];
    for (Index s = 0; s < 3; ++s)
      expect += one.c.data()[e * 3 + s] * one.b_bar.data()[e * 3 + s] * one.x.data()[e];
    CHECK(y1.data()[e] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("scan_parallel equals scan_sequential on random instances") {
  Rng rng(3);
  double worst32 = 0.0, worst64 = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index len = 1 + static_cast<Index>(rng.below(256));
    const Index e = 1 + static_cast<Index>(rng.below(32));
    const Index s = 1 + static_cast<Index>(rng.below(16));
    const std::uint64_t seed = rng.next();
    Rng r32(seed), r64(seed);
    auto f = random_instance<float>(r32, len, e, s);
    auto g = random_instance<double>(r64, len, e, s);
    worst32 = std::max(worst32, max_abs_diff<float>(scan_parallel(f.a_bar, f.b_bar, f.c, f.d, f.x).data(),
                                                    scan_sequential(f.a_bar, f.b_bar, f.c, f.d, f.x).data()));
    worst64 = std::max(worst64, max_abs_diff<double>(scan_parallel(g.a_bar, g.b_bar, g.c, g.d, g.x).data(),
                                                     scan_sequential(g.a_bar, g.b_bar, g.c, g.d, g.x).data()));
  }
  CHECK(worst32 <= 1e-5);
  CHECK(worst64 <= 1e-10);
}

TEST_CASE("scan_parallel: threads, single step, zero input") {
  Rng rng(4);
  auto inst = random_instance<double>(rng, 200, 8, 4);
  auto ref = scan_sequential(inst.a_bar, inst.b_bar, inst.c, inst.d, inst.x);
  for (int threads : {1, 2, 3, 8}) {
    auto y = scan_parallel(inst.a_bar, inst.b_bar, inst.c, inst.d, inst.x, threads);
    CHECK(max_abs_diff<double>(y.data(), ref.data()) <= 1e-10);
  }
  auto one = random_instance<double>(rng, 1, 4, 2);
  CHECK(max_abs_diff<double>(scan_parallel(one.a_bar, one.b_bar, one.c, one.d, one.x).data(),
                             scan_sequential(one.a_bar, one.b_bar, one.c, one.d, one.x).data()) == 0.0);
  auto zx = Tensor<double>::zeros({50, 8});
  {
    const auto held = scan_parallel(inst.a_bar, inst.b_bar, inst.c, inst.d, zx);
    for (double v : held.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("scan states respect the geometric-series bound") {
  Rng rng(5);
  const Index len = 1024, e = 16, s = 8;
  for (int trial = 0; trial < 5; ++trial) {
    SSMParams<double> p(e, s, rng);
    auto disc = discretize(p);
    const double m = 3.0;
    auto x = random_tensor<double>({len, e}, rng, -m, m);
    std::vector<double> h(static_cast<std::size_t>(len * e * s));
    scan_states_sequential<double>(disc.a_bar.data(), disc.b_bar.data(), x.data(), len, e, s, h);
    double max_a = 0.0, max_b = 0.0, max_h = 0.0;
    for (double v : disc.a_bar.data()) max_a = std::max(max_a, std::abs(v));
    for (double v : disc.b_bar.data()) max_b = std::max(max_b, std::abs(v));
    for (double v : h) {
      CHECK(std::isfinite(v));
      max_h = std::max(max_h, std::abs(v));
    }
    CHECK(max_h <= m * max_b / (1.0 - max_a) * (1.0 + 1e-12));
  }
}

TEST_CASE("parameter counts") {
  Rng rng(6);
  CHECK(SSMParams<float>(128, 16, rng).param_count() == 6400);
  for (auto [e, s] : {std::pair<Index, Index>{4, 3}, {128, 16}, {7, 1}}) {
    BiRSSMBlock<float> bir(e, s, rng);
    BiSSMBlock<float> bi(e, s, rng);
    CHECK(bir.ssm_param_count() == 3 * e * s + 2 * e);
    CHECK(bi.ssm_param_count() == 2 * bir.ssm_param_count());
    CHECK(bi.param_count() - bir.param_count() == bir.ssm_param_count());
  }
}

TEST_CASE("BiR-SSM: shape, width check, passthrough locality") {
  Rng rng(7);
  for (auto [len, e] : {std::pair<Index, Index>{1, 3}, {8, 4}, {49, 16}}) {
    BiRSSMBlock<double> blk(e, 5, rng);
    Tape<double> tape;
    CHECK(blk.forward(tape, random_tensor<double>({len, e}, rng)).shape() == Shape{len, e});
  }
  BiRSSMBlock<double> blk(6, 3, rng);
  Tape<double> tape;
  CHECK_THROWS_AS(blk.forward(tape, Tensor<double>::zeros({5, 4})), ShapeError);

  blk.set_passthrough();
  auto x = random_tensor<double>({10, 6}, rng);
  auto y = blk.forward(tape, x);
  for (Index i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(silu_ref(silu_ref(x.data()[i]))).epsilon(1e-12));
  }
  // Zeroing one position moves only that position.
  auto probe = x.detach_copy();
  for (Index j = 0; j < 6; ++j) probe.mutable_data()[4 * 6 + j] = 0.0;
  auto yp = blk.forward(tape, probe);
  for (Index t = 0; t < 10; ++t)
    for (Index j = 0; j < 6; ++j) {
      const bool same = yp.data()[t * 6 + j] == y.data()[t * 6 + j];
      CHECK(same == (t != 4));
    }
}

TEST_CASE("Bi-SSM: identical passthrough cores sum two SiLU branches") {
  Rng rng(8);
  BiSSMBlock<double> blk(5, 3, rng);
  blk.set_passthrough();
  auto x = random_tensor<double>({7, 5}, rng);
  Tape<double> tape;
  auto y = blk.forward(tape, x);
  CHECK(y.shape() == x.shape());
  for (Index i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(2.0 * silu_ref(x.data()[i])).epsilon(1e-12));
  }
}

TEST_CASE("shared core: perturbation reaches both directions only in BiR-SSM") {
  Rng rng(9);
  BiRSSMBlock<double> bir(4, 3, rng);
  auto x = random_tensor<double>({8, 4}, rng);
  for (auto* param : {&bir.ssm.a_log, &bir.ssm.b, &bir.ssm.c, &bir.ssm.d, &bir.ssm.delta_log}) {
    Tape<double> t1;
    auto before = bir.forward_trace(t1, x);
    param->mutable_data()[0] += 0.1;
    Tape<double> t2;
    auto after = bir.forward_trace(t2, x);
    param->mutable_data()[0] -= 0.1;
    CHECK(max_abs_diff<double>(before.forward_pass.data(), after.forward_pass.data()) > 0.0);
    CHECK(max_abs_diff<double>(before.reverse_pass.data(), after.reverse_pass.data()) > 0.0);
  }

  BiSSMBlock<double> bi(4, 3, rng);
  for (auto* param : {&bi.ssm_fwd.a_log, &bi.ssm_fwd.b, &bi.ssm_fwd.c, &bi.ssm_fwd.d,
                      &bi.ssm_fwd.delta_log}) {
    Tape<double> t1;
    auto before = bi.forward_trace(t1, x);
    param->mutable_data()[0] += 0.1;
    Tape<double> t2;
    auto after = bi.forward_trace(t2, x);
    param->mutable_data()[0] -= 0.1;
    CHECK(max_abs_diff<double>(before.forward_pass.data(), after.forward_pass.data()) > 0.0);
    CHECK(max_abs_diff<double>(before.reverse_pass.data(), after.reverse_pass.data()) == 0.0);
  }
}

TEST_CASE("block gradients match finite differences") {
  for (const auto& row : gradcheck_suite("birssm")) {
    INFO(row.name << " err " << row.report.max_rel_err);
    CHECK(row.report.pass);
    CHECK(row.report.max_rel_err < 1e-4);
  }
}
