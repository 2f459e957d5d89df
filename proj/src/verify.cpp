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


#include "uskt/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "uskt/layers.hpp"
#include "uskt/losses.hpp"
#include "uskt/net.hpp"
#include "uskt/ops.hpp"
#include "uskt/ssm.hpp"

namespace uskt {

namespace {

using D = double;
using Graph = std::function<Tensor<D>(Tape<D>&)>;

Tensor<D> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<D> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<D>(std::move(shape), std::move(v), true);
}

class Suite {
 public:
  Suite(std::string scope, std::uint64_t seed, std::vector<GradCheckRow>& out)
      : scope_(std::move(scope)), rng_(seed), out_(out) {}

  Rng& rng() { return rng_; }
  Tensor<D> leaf(Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(s), rng_, lo, hi); }

  // Reduces the output with fixed random weights so every element matters.
  void check(const std::string& name, std::vector<NamedLeaf> leaves, const Graph& op) {
    Tape<D> probe;
    const Shape out_shape = op(probe).shape();
    // Signed weights scaled so the loss stays O(1) whatever the output size.
    const double scale = 1.0 / std::sqrt(static_cast<double>(numel(out_shape)));
    Tensor<D> w = random_tensor(out_shape, rng_, -scale, scale);
    w.set_requires_grad(false);
    const LossGraph graph = [op, w](Tape<D>& tape) { return ops::weighted_sum(tape, op(tape), w); };
    out_.push_back({scope_, name, grad_check(graph, std::move(leaves))});
  }

  static std::vector<NamedLeaf> leaves_of(const ParamList<D>& params) {
    std::vector<NamedLeaf> out;
    for (const auto& p : params) out.push_back({p.name, p.tensor});
    return out;
  }

 private:
  std::string scope_;
  Rng rng_;
  std::vector<GradCheckRow>& out_;
};

void ops_suite(std::uint64_t seed, std::vector<GradCheckRow>& rows) {
  Suite s("ops", seed, rows);
  {
    auto x = s.leaf({2, 5, 5}), w = s.leaf({3, 2, 3, 3}), b = s.leaf({3});
    s.check("conv2d_s1", {{"x", x}, {"w", w}, {"b", b}},
            [=](Tape<D>& t) { return ops::conv2d(t, x, w, b, 1, 1); });
  }
  {
    auto x = s.leaf({2, 6, 6}), w = s.leaf({3, 2, 3, 3}), b = s.leaf({3});
    s.check("conv2d_s2", {{"x", x}, {"w", w}, {"b", b}},
            [=](Tape<D>& t) { return ops::conv2d(t, x, w, b, 2, 1); });
  }
  {
    auto x = s.leaf({3, 4, 4}), w = s.leaf({2, 3, 1, 1}), b = s.leaf({2});
    s.check("conv2d_1x1", {{"x", x}, {"w", w}, {"b", b}},
            [=](Tape<D>& t) { return ops::conv2d(t, x, w, b, 1, 0); });
  }
  {
    auto x = s.leaf({2, 3, 3}), w = s.leaf({2, 3, 4, 4}), b = s.leaf({3});
    s.check("conv_transpose2d", {{"x", x}, {"w", w}, {"b", b}},
            [=](Tape<D>& t) { return ops::conv_transpose2d(t, x, w, b, 2, 1); });
  }
  {
    auto x = s.leaf({4, 5}), w = s.leaf({3, 5}), b = s.leaf({3});
    s.check("linear", {{"x", x}, {"w", w}, {"b", b}},
            [=](Tape<D>& t) { return ops::linear(t, x, w, b); });
  }
  {
    auto x = s.leaf({3, 4}, -3.0, 3.0);
    s.check("silu", {{"x", x}}, [=](Tape<D>& t) { return ops::silu(t, x); });
  }
  {
    auto a = s.leaf({3, 4}), b = s.leaf({3, 4});
    s.check("add", {{"a", a}, {"b", b}}, [=](Tape<D>& t) { return ops::add(t, a, b); });
    s.check("mul", {{"a", a}, {"b", b}}, [=](Tape<D>& t) { return ops::mul(t, a, b); });
    s.check("scale", {{"a", a}}, [=](Tape<D>& t) { return ops::scale(t, a, -1.7); });
    s.check("sum", {{"a", a}}, [=](Tape<D>& t) { return ops::sum(t, a); });
    s.check("mean", {{"a", a}}, [=](Tape<D>& t) { return ops::mean(t, a); });
  }
  {
    auto x = s.leaf({2, 3, 4});
    s.check("bilinear_upsample2x", {{"x", x}},
            [=](Tape<D>& t) { return ops::bilinear_upsample2x(t, x); });
  }
  {
    auto x = s.leaf({2, 4, 6});
    s.check("avg_pool2d", {{"x", x}}, [=](Tape<D>& t) { return ops::avg_pool2d(t, x, 2); });
  }
  {
    auto x = s.leaf({3, 2, 3});
    s.check("global_avg_pool", {{"x", x}}, [=](Tape<D>& t) { return ops::global_avg_pool(t, x); });
  }
  {
    auto a = s.leaf({2, 3, 3}), b = s.leaf({1, 3, 3});
    s.check("concat_channels", {{"a", a}, {"b", b}},
            [=](Tape<D>& t) { return ops::concat_channels(t, a, b); });
  }
  {
    auto x = s.leaf({5, 3});
    s.check("reverse_seq", {{"x", x}}, [=](Tape<D>& t) { return ops::reverse_seq(t, x); });
  }
  {
    auto x = s.leaf({3, 2, 2});
    s.check("flatten_spatial", {{"x", x}}, [=](Tape<D>& t) { return ops::flatten_spatial(t, x); });
    auto y = s.leaf({4, 3});
    s.check("unflatten_spatial", {{"x", y}},
            [=](Tape<D>& t) { return ops::unflatten_spatial(t, y, 2, 2); });
  }
  {
    auto x = s.leaf({6, 3}), w = s.leaf({3, 3}), b = s.leaf({3});
    s.check("depthwise_conv1d", {{"x", x}, {"w", w}, {"b", b}},
            [=](Tape<D>& t) { return ops::depthwise_conv1d(t, x, w, b); });
  }
  {
    auto x = s.leaf({4, 3, 2}, -2.0, 2.0), g = s.leaf({4}, 0.5, 1.5), b = s.leaf({4});
    s.check("group_norm", {{"x", x}, {"gamma", g}, {"beta", b}},
            [=](Tape<D>& t) { return ops::group_norm(t, x, g, b, 2); });
  }
  {
    auto a = s.leaf({2, 3, 3}), b = s.leaf({2, 3, 3});
    s.check("mse", {{"a", a}, {"b", b}}, [=](Tape<D>& t) { return ops::mse(t, a, b); });
  }
  {
    auto z = s.leaf({4, 3}, -2.0, 2.0);
    const std::vector<int> labels{0, 2, 1, 2};
    s.check("focal_loss", {{"logits", z}}, [=](Tape<D>& t) {
      return focal_loss(t, z, std::span<const int>(labels), FocalCfg{});
    });
    FocalCfg per_class;
    per_class.class_alpha = {0.25, 0.5, 0.75};
    per_class.gamma = 1.5;
    s.check("focal_loss_class_alpha", {{"logits", z}}, [=](Tape<D>& t) {
      return focal_loss(t, z, std::span<const int>(labels), per_class);
    });
    s.check("cross_entropy", {{"logits", z}},
            [=](Tape<D>& t) { return cross_entropy(t, z, std::span<const int>(labels)); });
  }
  {
    auto a = s.leaf({3}), b = s.leaf({2, 2});
    s.check("total_loss", {{"l_cls_src", a}, {"l_rec_src", b}}, [=](Tape<D>& t) {
      return total_loss(t, ops::mean(t, a), ops::mean(t, b), 1.0, 0.05);
    });
  }
  {
    SSMParams<D> p(3, 2, s.rng());
    for (auto* leaf : {&p.a_log, &p.b, &p.delta_log}) leaf->set_requires_grad(true);
    s.check("discretize", {{"a_log", p.a_log}, {"b", p.b}, {"delta_log", p.delta_log}},
            [=](Tape<D>& t) {
              auto d = discretize(t, p);
              return ops::add(t, ops::mul(t, d.a_bar, d.a_bar), d.b_bar);
            });
  }
  for (ScanKernel k : {ScanKernel::sequential, ScanKernel::parallel}) {
    auto a = s.leaf({3, 2}, 0.3, 0.95), b = s.leaf({3, 2}), c = s.leaf({3, 2}), d = s.leaf({3}),
         x = s.leaf({7, 3});
    s.check(k == ScanKernel::sequential ? "ssm_scan_sequential" : "ssm_scan_parallel",
            {{"a_bar", a}, {"b_bar", b}, {"c", c}, {"d", d}, {"x", x}},
            [=](Tape<D>& t) { return ssm_scan(t, a, b, c, d, x, k); });
  }
  {
    Decoder<D> dec(4, s.rng(), {3, 2});
    ParamList<D> params;
    dec.collect("decoder", params);
    auto x = s.leaf({4, 7, 7});
    auto leaves = Suite::leaves_of(params);
    leaves.push_back({"x", x});
    s.check("decoder_mini", leaves, [=](Tape<D>& t) { return dec.forward(t, x); });
  }
}

void birssm_suite(std::uint64_t seed, std::vector<GradCheckRow>& rows) {
  Suite s("birssm", seed, rows);
  for (ScanKernel k : {ScanKernel::sequential, ScanKernel::parallel}) {
    BiRSSMBlock<D> blk(4, 3, s.rng());
    blk.kernel = k;
    ParamList<D> params;
    blk.collect("bir", params);
    auto x = s.leaf({8, 4});
    auto leaves = Suite::leaves_of(params);
    leaves.push_back({"x", x});
    s.check(k == ScanKernel::sequential ? "bir_ssm_block" : "bir_ssm_block_parallel", leaves,
            [=](Tape<D>& t) { return blk.forward(t, x); });
  }
  {
    BiSSMBlock<D> blk(4, 3, s.rng());
    ParamList<D> params;
    blk.collect("bi", params);
    auto x = s.leaf({8, 4});
    auto leaves = Suite::leaves_of(params);
    leaves.push_back({"x", x});
    s.check("bi_ssm_block", leaves, [=](Tape<D>& t) { return blk.forward(t, x); });
  }
}

void uskt_mini_suite(std::uint64_t seed, std::vector<GradCheckRow>& rows) {
  Suite s("uskt-mini", seed, rows);
  USKTConfig cfg;
  cfg.in_bins = 2;
  cfg.proj_channels = 4;
  cfg.down_channels = {4, 8, 8, 8};
  cfg.ssm_layers = 1;
  cfg.state_size = 2;
  cfg.input_hw = 32;
  USKT<D> net(cfg, s.rng());
  ParamList<D> params;
  net.collect("uskt", params);
  auto x = s.leaf({2, 32, 32});
  auto leaves = Suite::leaves_of(params);
  leaves.push_back({"x", x});
  s.check("uskt_end_to_end", leaves, [=](Tape<D>& t) { return net.forward(t, x); });
}

template <typename F>
double median_ns(const F& fn, int warmups, int repeats) {
  for (int i = 0; i < warmups; ++i) fn();
  std::vector<double> times;
  for (int i = 0; i < std::max(1, repeats); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace

std::vector<GradCheckRow> gradcheck_suite(std::string_view scope, std::uint64_t seed) {
  const bool all = scope == "all";
  if (!all && scope != "ops" && scope != "birssm" && scope != "uskt-mini") {
    throw FormatError("unknown gradcheck scope '" + std::string(scope) +
                      "' (expected ops, birssm, uskt-mini or all)");
  }
  std::vector<GradCheckRow> rows;
  if (all || scope == "ops") ops_suite(seed, rows);
  if (all || scope == "birssm") birssm_suite(seed + 1, rows);
  if (all || scope == "uskt-mini") uskt_mini_suite(seed + 2, rows);
  return rows;
}

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  if (cfg.width < 1 || cfg.state < 1) throw FormatError("bench width and state must be >= 1");
  Rng rng(cfg.seed);
  BiRSSMBlock<float> bir(cfg.width, cfg.state, rng);
  BiSSMBlock<float> bi(cfg.width, cfg.state, rng);
  if (bi.ssm_param_count() != 2 * bir.ssm_param_count()) {
    throw VerificationError("Bi-SSM core holds " + std::to_string(bi.ssm_param_count()) +
                            " parameters, expected twice " + std::to_string(bir.ssm_param_count()));
  }
  const auto core = discretize(bir.ssm);
  std::vector<BenchRow> rows;
  for (Index len : cfg.seq_lens) {
    if (len < 1) throw FormatError("sequence lengths must be >= 1");
    std::vector<float> xv(static_cast<std::size_t>(len * cfg.width));
    for (auto& v : xv) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor<float> x({len, cfg.width}, std::move(xv));
    const auto ref = scan_sequential(core.a_bar, core.b_bar, bir.ssm.c, bir.ssm.d, x);
    const auto par = scan_parallel(core.a_bar, core.b_bar, bir.ssm.c, bir.ssm.d, x, 1);
    double worst = 0.0;
    for (Index i = 0; i < ref.numel(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(ref.data()[i] - par.data()[i])));
    }
    if (!(worst <= 1e-5)) {
      throw VerificationError("scan_parallel differs from scan_sequential by " +
                              std::to_string(worst) + " at L=" + std::to_string(len));
    }
    const Index core_params = bir.ssm_param_count();
    rows.push_back({"scan_sequential", len, median_ns([&] {
                      (void)scan_sequential(core.a_bar, core.b_bar, bir.ssm.c, bir.ssm.d, x);
                    }, cfg.warmups, cfg.repeats), core_params});
    rows.push_back({"scan_parallel", len, median_ns([&] {
                      (void)scan_parallel(core.a_bar, core.b_bar, bir.ssm.c, bir.ssm.d, x, 1);
                    }, cfg.warmups, cfg.repeats), core_params});
    rows.push_back({"bir_ssm", len, median_ns([&] {
                      Tape<float> tape;
                      (void)bir.forward(tape, x);
                    }, cfg.warmups, cfg.repeats), bir.ssm_param_count()});
    rows.push_back({"bi_ssm", len, median_ns([&] {
                      Tape<float> tape;
                      (void)bi.forward(tape, x);
                    }, cfg.warmups, cfg.repeats), bi.ssm_param_count()});
  }
  return rows;
}

}  // namespace uskt
