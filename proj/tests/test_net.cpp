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


#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "uskt/net.hpp"
#include "uskt/ops.hpp"
#include "uskt/verify.hpp"

using namespace uskt;
using uskt::testing::max_abs_diff;
using uskt::testing::random_tensor;

namespace {

template <typename T>
void fill(const Tensor<T>& t, T v) {
  for (auto& x : t.mutable_data()) x = v;
}

// Keeps only the centre tap of every 3x3 kernel so that constants stay constant.
template <typename T>
void centre_only(const Conv2d<T>& conv) {
  const Index k = conv.weight.dim(2);
  auto w = conv.weight.mutable_data();
  for (Index i = 0; i < conv.weight.numel(); ++i) {
    const Index tap = i % (k * k);
    if (tap != (k / 2) * k + k / 2) w[i] = 0;
  }
}

bool plane_constant(const Tensor<double>& t, Index c) {
  const Index plane = t.dim(1) * t.dim(2);
  const double v0 = t.data()[c * plane];
  for (Index i = 0; i < plane; ++i)
    if (std::abs(t.data()[c * plane + i] - v0) > 1e-12) return false;
  return true;
}

}  // namespace

TEST_CASE("projection: shape, linearity, impulse construction") {
  Rng rng(1);
  USKTConfig cfg;
  cfg.in_bins = 2;
  USKT<float> net(cfg, rng);
  Tape<float> tape;
  CHECK(net.project(tape, Tensor<float>::zeros({2, 224, 224})).shape() == Shape{12, 224, 224});
  fill(net.proj.bias, 0.0f);
  {
    const auto held = net.project(tape, Tensor<float>::zeros({2, 224, 224}));
    for (float v : held.data()) CHECK(v == 0.0f);
  }
  CHECK_THROWS_AS(net.project(tape, Tensor<float>::zeros({2, 112, 112})), ShapeError);

  cfg.in_bins = 12;
  USKT<double> id(cfg, rng);
  fill(id.proj.weight, 0.0);
  fill(id.proj.bias, 0.0);
  for (Index c = 0; c < 12; ++c) id.proj.weight.mutable_data()[((c * 12 + c) * 3 + 1) * 3 + 1] = 1.0;
  auto x = random_tensor<double>({12, 224, 224}, rng);
  Tape<double> t2;
  CHECK(max_abs_diff<double>(id.project(t2, x).data(), x.data()) == 0.0);
}

TEST_CASE("down block: halving, zero map, residual isolation, odd extent") {
  Rng rng(2);
  DownBlock<double> blk(12, 32, rng);
  Tape<double> tape;
  CHECK(blk.forward(tape, random_tensor<double>({12, 16, 16}, rng)).shape() == Shape{32, 8, 8});
  for (Index n : {2, 4, 6, 10}) {
    CHECK(blk.forward(tape, random_tensor<double>({12, n, n}, rng)).shape() == Shape{32, n / 2, n / 2});
  }
  for (auto* b : {&blk.conv1.bias, &blk.conv2.bias, &blk.residual.bias}) fill(*b, 0.0);
  {
    const auto held = blk.forward(tape, Tensor<double>::zeros({12, 8, 8}));
    for (double v : held.data()) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(blk.forward(tape, Tensor<double>::zeros({12, 7, 7})), ShapeError);

  DownBlock<double> iso(3, 4, rng);
  fill(iso.conv2.weight, 0.0);
  fill(iso.conv2.bias, 0.0);
  auto x = random_tensor<double>({3, 10, 10}, rng);
  auto y = iso.forward(tape, x);
  auto ref = ops::silu(tape, iso.residual.forward(tape, x));
  CHECK(max_abs_diff<double>(y.data(), ref.data()) < 1e-12);
}

TEST_CASE("up block: doubling, constants, skip isolation, mismatch") {
  Rng rng(3);
  UpBlock<double> blk(128, 128, 64, rng);
  Tape<double> tape;
  auto y = blk.forward(tape, random_tensor<double>({128, 7, 7}, rng),
                       random_tensor<double>({128, 14, 14}, rng));
  CHECK(y.shape() == Shape{64, 14, 14});
  CHECK_THROWS_AS(blk.forward(tape, random_tensor<double>({128, 7, 7}, rng),
                              random_tensor<double>({128, 12, 12}, rng)),
                  ShapeError);

  UpBlock<double> c(4, 3, 5, rng);
  centre_only(c.conv3);
  auto yc = c.forward(tape, Tensor<double>::full({4, 5, 5}, 0.7), Tensor<double>::full({3, 10, 10}, -0.2));
  for (Index ch = 0; ch < 5; ++ch) CHECK(plane_constant(yc, ch));

  UpBlock<double> s(4, 3, 5, rng);
  const Index fused_in = s.fusion.weight.dim(1);
  const Index up_ch = fused_in - 3;
  for (Index o = 0; o < s.fusion.weight.dim(0); ++o)
    for (Index i = up_ch; i < fused_in; ++i) s.fusion.weight.mutable_data()[o * fused_in + i] = 0.0;
  auto x = random_tensor<double>({4, 6, 6}, rng);
  auto a = s.forward(tape, x, random_tensor<double>({3, 12, 12}, rng));
  auto b = s.forward(tape, x, Tensor<double>::zeros({3, 12, 12}));
  CHECK(max_abs_diff<double>(a.data(), b.data()) == 0.0);
}

TEST_CASE("USKT: the reference shape chain for several bin counts") {
  for (Index bins : {2, 5, 12}) {
    Rng rng(4);
    USKTConfig cfg;
    cfg.in_bins = bins;
    USKT<float> net(cfg, rng);
    Tape<float> tape;
    ShapeTrace trace;
    auto out = net.forward(tape, Tensor<float>::zeros({bins, 224, 224}), &trace);
    CHECK(out.shape() == Shape{3, 224, 224});
    std::vector<std::pair<std::string, Shape>> expect{
        {"input", {bins, 224, 224}}, {"proj", {12, 224, 224}},   {"down1", {32, 112, 112}},
        {"down2", {64, 56, 56}},     {"down3", {128, 28, 28}},   {"down4", {128, 14, 14}},
        {"pool", {128, 7, 7}},       {"sequence", {49, 128}},    {"bir_ssm", {49, 128}},
        {"ssm_out", {128, 7, 7}}};
    REQUIRE(trace.stages.size() >= expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(trace.stages[i].first == expect[i].first);
      CHECK(trace.stages[i].second == expect[i].second);
    }
    CHECK(trace.stages.back().second == Shape{3, 224, 224});
    const Index sizes[5] = {14, 28, 56, 112, 224};
    for (std::size_t u = 0; u < 5; ++u) {
      const auto& st = trace.stages[expect.size() + u];
      CHECK(st.first == "up" + std::to_string(u + 1));
      CHECK(st.second[1] == sizes[u]);
    }
  }
}

TEST_CASE("USKT: no BiR-SSM layers keeps the output shape") {
  Rng rng(5);
  USKTConfig cfg;
  cfg.ssm_layers = 0;
  cfg.input_hw = 64;
  USKT<float> net(cfg, rng);
  CHECK(net.ssm_blocks.empty());
  Tape<float> tape;
  CHECK(net.forward(tape, Tensor<float>::zeros({5, 64, 64})).shape() == Shape{3, 64, 64});
}

TEST_CASE("USKT: miniature end-to-end gradients match finite differences") {
  for (const auto& row : gradcheck_suite("uskt-mini")) {
    INFO(row.name << " err " << row.report.max_rel_err);
    CHECK(row.report.pass);
  }
}

TEST_CASE("encoder: 7x7 output, input check, seeded determinism") {
  Rng r1(6), r2(6);
  TinyConvEncoder<float> a(EncoderConfig{}, r1), b(EncoderConfig{}, r2);
  Rng rng(7);
  auto x = random_tensor<float>({3, 224, 224}, rng);
  Tape<float> tape;
  auto ya = a.forward(tape, x);
  CHECK(ya.shape() == Shape{128, 7, 7});
  CHECK(max_abs_diff<float>(ya.data(), b.forward(tape, x).data()) == 0.0);
  CHECK_THROWS_AS(a.forward(tape, Tensor<float>::zeros({3, 112, 112})), ShapeError);
}

TEST_CASE("encoder: freezing keeps only biases trainable") {
  Rng rng(8);
  TinyConvEncoder<float> enc(EncoderConfig{}, rng);
  enc.set_frozen(true);
  ParamList<float> ps;
  enc.collect("encoder", ps);
  for (const auto& p : ps) CHECK(p.tensor.requires_grad() == p.is_bias);
  enc.set_frozen(false);
  for (const auto& p : ps) CHECK(p.tensor.requires_grad());
}

TEST_CASE("decoder: shapes and zero map") {
  Rng rng(9);
  Decoder<float> dec(128, rng);
  Tape<float> tape;
  CHECK(dec.forward(tape, random_tensor<float>({128, 7, 7}, rng)).shape() == Shape{3, 224, 224});
  for (auto& st : dec.stages) fill(st.bias, 0.0f);
  {
    const auto held = dec.forward(tape, Tensor<float>::zeros({128, 7, 7}));
    for (float v : held.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("adapter variants") {
  Rng rng(10);
  USKTConfig cfg;
  cfg.in_bins = 5;
  Adapter<float> c1(AdapterKind::conv1, cfg, rng);
  Tape<float> tape;
  CHECK(c1.forward(tape, Tensor<float>::zeros({5, 224, 224})).shape() == Shape{3, 224, 224});

  Adapter<float> c2(AdapterKind::conv2, cfg, rng);
  ParamList<float> ps;
  c2.collect("a", ps);
  CHECK(count_params(ps) == (5 * 9 + 1) * 12 + (12 * 9 + 1) * 3);

  CHECK_THROWS_AS(Adapter<float>(AdapterKind::none, cfg, rng), ShapeError);
  cfg.in_bins = 3;
  Adapter<float> none(AdapterKind::none, cfg, rng);
  auto x = random_tensor<float>({3, 224, 224}, rng);
  CHECK(max_abs_diff<float>(none.forward(tape, x).data(), x.data()) == 0.0);

  CHECK(parse_adapter("conv2") == AdapterKind::conv2);
  CHECK(adapter_name(AdapterKind::uskt) == "uskt");
  CHECK_THROWS_AS(parse_adapter("resnet"), FormatError);
}

TEST_CASE("model: every adapter, decoder and head parameter receives gradient") {
  ModelConfig cfg;
  cfg.uskt.input_hw = cfg.encoder.input_hw = 64;
  Model<double> model(cfg, 11);
  Rng rng(12);
  Tape<double> tape;
  auto out = model.forward(tape, random_tensor<double>({5, 64, 64}, rng));
  auto w = random_tensor<double>(out.logits.shape(), rng);
  auto wr = random_tensor<double>(out.x_rec.shape(), rng);
  auto loss = ops::add(tape, ops::weighted_sum(tape, out.logits, w),
                       ops::weighted_sum(tape, out.x_rec, wr));
  backward(loss, tape);
  for (const auto& p : model.parameters()) {
    const std::string group = param_group(p.name);
    if (group == "encoder") continue;
    INFO(p.name);
    REQUIRE(p.tensor.has_grad());
    double norm = 0.0;
    for (double g : p.tensor.grad()) norm += std::abs(g);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("model: forward is deterministic and seeds separate components") {
  ModelConfig cfg;
  cfg.uskt.input_hw = cfg.encoder.input_hw = 64;
  Model<float> a(cfg, 3), b(cfg, 3), c(cfg, 4);
  Rng rng(13);
  auto x = random_tensor<float>({5, 64, 64}, rng);
  Tape<float> tape;
  auto ya = a.forward(tape, x), yb = b.forward(tape, x), yc = c.forward(tape, x);
  CHECK(max_abs_diff<float>(ya.logits.data(), yb.logits.data()) == 0.0);
  CHECK(max_abs_diff<float>(ya.x_rec.data(), yb.x_rec.data()) == 0.0);
  CHECK(max_abs_diff<float>(ya.logits.data(), yc.logits.data()) > 0.0);
  CHECK(param_group("adapter.uskt.proj.weight") == "adapter");
  CHECK_THROWS_AS(Model<float>(ModelConfig{.num_classes = 1}, 1), FormatError);
}
