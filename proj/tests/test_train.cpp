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


#include <fstream>
#include <map>
#include <string>

#include "doctest.h"
#include "test_util.hpp"
#include "uskt/bundle.hpp"
#include "uskt/run_config.hpp"
#include "uskt/train.hpp"

using namespace uskt;
using uskt::testing::TempDir;

namespace {

ModelConfig mini_config(AdapterKind kind = AdapterKind::uskt) {
  ModelConfig cfg;
  cfg.adapter = kind;
  cfg.uskt.input_hw = cfg.encoder.input_hw = 32;
  cfg.uskt.down_channels = {8, 8, 16, 16};
  cfg.uskt.state_size = 4;
  cfg.encoder.channels = {4, 8, 8, 16, 16};
  return cfg;
}

std::vector<Sample> mini_data(int per_class = 2) {
  SynthConfig sc;
  sc.height = sc.width = 32;
  sc.samples_per_class = per_class;
  return to_samples(gen_synthetic_dataset(sc));
}

std::map<std::string, std::uint64_t> sums(const Model<float>& m) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& p : m.parameters()) out[p.name] = checksum(p.tensor.data());
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST_CASE("frozen encoder: one step changes exactly adapter, decoder, head and encoder biases") {
  Model<float> model(mini_config(), 5);
  auto data = mini_data();
  TrainConfig tc;
  Trainer tr(model, tc, data.size());
  const auto before = sums(model);
  std::vector<const Sample*> batch{&data[0], &data[3]};
  tr.train_batch(batch);
  const auto after = sums(model);
  for (const auto& p : model.parameters()) {
    INFO(p.name);
    const bool changed = before.at(p.name) != after.at(p.name);
    const bool expected = param_group(p.name) != "encoder" || p.is_bias;
    CHECK(changed == expected);
  }
  for (int i = 0; i < 49; ++i) tr.train_batch(batch);
  for (const auto& p : model.parameters()) {
    if (param_group(p.name) == "encoder" && !p.is_bias) CHECK(checksum(p.tensor.data()) == before.at(p.name));
  }
}

TEST_CASE("lambda2 = 0 leaves the decoder untouched") {
  Model<float> model(mini_config(), 6);
  auto data = mini_data();
  TrainConfig tc;
  tc.lambda2 = 0.0;
  Trainer tr(model, tc, data.size());
  ParamList<float> dec;
  model.decoder.collect("decoder", dec);
  const auto before = checksum(dec);
  for (int i = 0; i < 10; ++i) {
    std::vector<const Sample*> batch{&data[static_cast<std::size_t>(i % 6)]};
    auto stats = tr.train_batch(batch);
    CHECK(stats.l_rec > 0.0);
  }
  CHECK(checksum(dec) == before);
}

TEST_CASE("learning-rate groups follow the cosine schedule") {
  Model<float> model(mini_config(), 7);
  auto data = mini_data();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  Trainer tr(model, tc, data.size());
  CHECK(tr.total_steps() == 4);
  CHECK(tr.lr_for_group("adapter") == 0.0025);
  CHECK(tr.lr_for_group("encoder") == 0.000025);
  tr.train_epoch(data);
  CHECK(tr.steps_taken() == 2);
  CHECK(tr.current_lr() == doctest::Approx(cosine_lr(2, 4, 0.0025)));
  CHECK(tr.lr_for_group("encoder") == doctest::Approx(cosine_lr(2, 4, 0.000025)));
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [] {
    Model<float> model(mini_config(), 8);
    TrainConfig tc;
    tc.epochs = 2;
    std::string lines;
    fit(model, tc, mini_data(), nullptr, [&](const EpochMetrics& m) { lines += metrics_line(m) + "\n"; });
    return std::make_pair(lines, checksum(model.parameters()));
  };
  auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("non-finite values abort with a named diagnostic") {
  Model<float> model(mini_config(), 9);
  auto data = mini_data();
  model.head.fc.weight.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer tr(model, TrainConfig{}, data.size());
  std::vector<const Sample*> batch{&data[0]};
  try {
    tr.train_batch(batch);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("linear") != std::string::npos);
  }
}

TEST_CASE("evaluate: tie-break towards class 0 and an all-correct head") {
  Model<float> model(mini_config(), 10);
  auto data = mini_data(3);
  for (auto& w : model.head.fc.weight.mutable_data()) w = 0.0f;
  for (auto& b : model.head.fc.bias.mutable_data()) b = 0.0f;
  int zeros = 0;
  for (const auto& s : data) zeros += s.label == 0;
  CHECK(evaluate(model, data) == doctest::Approx(static_cast<double>(zeros) / data.size()));
  model.head.fc.bias.mutable_data()[1] = 1.0f;
  std::vector<Sample> ones;
  for (const auto& s : data)
    if (s.label == 1) ones.push_back(s);
  CHECK(evaluate(model, ones) == 1.0);
  CHECK_THROWS_AS(evaluate(model, {}), FormatError);
}

TEST_CASE("metrics lines carry the documented fields") {
  EpochMetrics m;
  m.epoch = 3;
  m.lr = 0.5;
  m.wall_ms = 12.0;
  auto j = nlohmann::json::parse(metrics_line(m));
  for (const char* key : {"epoch", "lr", "loss", "l_cls", "l_rec", "train_acc"}) CHECK(j.contains(key));
  CHECK_FALSE(j.contains("eval_acc"));
  CHECK_FALSE(j.contains("wall_ms"));
  m.eval_acc = 0.75;
  CHECK(nlohmann::json::parse(metrics_line(m))["eval_acc"] == 0.75);
  CHECK(nlohmann::json::parse(timing_line(m))["wall_ms"] == 12.0);
}

TEST_CASE("bundle: round trip is bit-identical and re-saving reproduces the bytes") {
  Model<float> model(mini_config(), 11);
  auto data = mini_data();
  Trainer tr(model, TrainConfig{}, data.size());
  std::vector<const Sample*> batch{&data[0], &data[1]};
  tr.train_batch(batch);
  TempDir dir("bundle");
  save_bundle(dir / "m.json", model_to_bundle(model, {{"note", "mini"}}));
  auto loaded = load_bundle(dir / "m.json");
  CHECK(loaded.config["note"] == "mini");
  Model<float> fresh(mini_config(), 99);
  load_model_weights(fresh, loaded);
  CHECK(checksum(fresh.parameters()) == checksum(model.parameters()));
  save_bundle(dir / "again.json", loaded);
  CHECK(slurp(dir / "m.bin") == slurp(dir / "again.bin"));

  const auto layout = loaded.layout();
  std::uint64_t offset = 0;
  for (const auto& e : layout) {
    CHECK(e.byte_offset == offset);
    CHECK(e.byte_len == 4 * static_cast<std::uint64_t>(numel(e.shape)));
    offset += e.byte_len;
  }
  CHECK(std::filesystem::file_size(dir / "m.bin") == offset);
}

TEST_CASE("bundle: corruption and shape errors") {
  TempDir dir("bundle_bad");
  WeightBundle b;
  b.add("a", Tensor<float>::full({2, 3}, 1.5f));
  b.add("b", Tensor<float>::full({4}, -1.0f));
  CHECK_THROWS_AS(b.add("a", Tensor<float>::zeros({1})), FormatError);
  save_bundle(dir / "x.json", b);

  std::filesystem::resize_file(dir / "x.bin", 20);
  const std::string trunc = error_of([&] { load_bundle(dir / "x.json"); });
  CHECK(trunc.find("corrupt") != std::string::npos);
  CHECK(trunc.find("40") != std::string::npos);
  CHECK(trunc.find("20") != std::string::npos);

  save_bundle(dir / "x.json", b);
  auto manifest = nlohmann::json::parse(slurp(dir / "x.json"));
  manifest["entries"][1]["shape"] = {5};
  std::ofstream(dir / "bad_shape.json") << manifest.dump();
  std::filesystem::copy_file(dir / "x.bin", dir / "bad_shape.bin");
  CHECK(error_of([&] { load_bundle(dir / "bad_shape.json"); }).find("'b'") != std::string::npos);

  manifest = nlohmann::json::parse(slurp(dir / "x.json"));
  manifest["entries"][1]["byte_offset"] = 8;
  std::ofstream(dir / "overlap.json") << manifest.dump();
  std::filesystem::copy_file(dir / "x.bin", dir / "overlap.bin");
  CHECK_THROWS_AS(load_bundle(dir / "overlap.json"), FormatError);

  manifest = nlohmann::json::parse(slurp(dir / "x.json"));
  manifest["format_version"] = 7;
  std::ofstream(dir / "version.json") << manifest.dump();
  std::filesystem::copy_file(dir / "x.bin", dir / "version.bin");
  CHECK_THROWS_AS(load_bundle(dir / "version.json"), FormatError);

  Model<float> model(mini_config(), 12);
  auto mb = model_to_bundle(model, {});
  ModelConfig wider = mini_config();
  wider.num_classes = 4;
  Model<float> other(wider, 12);
  const std::string mismatch = error_of([&] { load_model_weights(other, mb); });
  CHECK(mismatch.find("head.fc") != std::string::npos);
}

TEST_CASE("dataset directories round-trip") {
  TempDir dir("dataset");
  SynthConfig sc;
  sc.height = sc.width = 16;
  sc.samples_per_class = 2;
  auto grids = gen_synthetic_dataset(sc);
  write_dataset_dir(dir.path(), grids, 3);
  CHECK(dataset_num_classes(dir.path()) == 3);
  auto back = load_dataset_dir(dir.path());
  REQUIRE(back.size() == grids.size());
  for (std::size_t i = 0; i < grids.size(); ++i) {
    CHECK(back[i].label == grids[i].label);
    auto expect = grids[i].grid.to_tensor<float>();
    CHECK(std::equal(expect.data().begin(), expect.data().end(), back[i].voxels.data().begin()));
  }
}

TEST_CASE("run config: defaults, round trip, strict keys and types") {
  RunConfig def;
  auto j = to_json(def);
  auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(j["train"]["lr"] == 0.0025);
  CHECK(j["train"]["lambda2"] == 0.05);
  CHECK(j["model"]["adapter"] == "uskt");
  CHECK(j["model"]["ssm_layers"] == 1);
  CHECK(j["model"]["frozen"] == true);

  auto patched = run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": 3}})"));
  CHECK(patched.train.epochs == 3);
  CHECK(patched.train.lr == 0.0025);

  const std::string unknown =
      error_of([] { run_config_from_json(nlohmann::json::parse(R"({"train": {"epoks": 3}})")); });
  CHECK(unknown.find("train.epoks") != std::string::npos);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"bogus": 1})")), FormatError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": "x"}})")),
                  FormatError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"model": {"adapter": "vit"}})")),
                  FormatError);
}

TEST_CASE("run_training writes the documented artifacts") {
  TempDir dir("run");
  RunConfig cfg;
  cfg.model = mini_config();
  cfg.model.num_classes = 0;
  cfg.train.epochs = 2;
  cfg.data.synthetic.per_class = 2;
  cfg.output_dir = dir.path().string();
  auto res = run_training(cfg);
  CHECK(res.history.size() == 2);
  for (const char* f : {"run_config.json", "metrics.jsonl", "timing.jsonl", "model.json", "model.bin"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  auto echoed = load_run_config(dir / "run_config.json");
  CHECK(echoed.model.num_classes == 3);
  CHECK(echoed.train.epochs == 2);
  auto model = load_model(dir / "model.json");
  CHECK(model.config.num_classes == 3);
  CHECK(model.config.uskt.input_hw == 32);
  CHECK(checksum(model.parameters()) == checksum(load_model(res.model_manifest).parameters()));
}
