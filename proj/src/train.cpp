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


#include "uskt/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "uskt/bundle.hpp"
#include "uskt/ops.hpp"

namespace uskt {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw FormatError("lr must be > 0");
  if (!(lr_finetune >= 0.0)) throw FormatError("lr_finetune must be >= 0");
  if (!(lr_min >= 0.0 && lr_min <= lr)) throw FormatError("lr_min must lie in [0, lr]");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw FormatError("lambda1 and lambda2 must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw FormatError("betas must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw FormatError("weight_decay must be >= 0");
  if (!(eps > 0.0)) throw FormatError("eps must be > 0");
  if (epochs < 1) throw FormatError("epochs must be >= 1");
  if (batch_size < 1) throw FormatError("batch_size must be >= 1");
}

std::vector<Sample> to_samples(const std::vector<LabeledGrid>& grids) {
  std::vector<Sample> out;
  out.reserve(grids.size());
  for (const auto& g : grids) out.push_back({g.grid.to_tensor<float>(), g.label});
  return out;
}

std::string metrics_line(const EpochMetrics& m) {
  json j = {{"epoch", m.epoch},   {"lr", m.lr},       {"loss", m.loss},
            {"l_cls", m.l_cls},   {"l_rec", m.l_rec}, {"train_acc", m.train_acc}};
  if (m.eval_acc) j["eval_acc"] = *m.eval_acc;
  return j.dump();
}

std::string timing_line(const EpochMetrics& m) {
  return json{{"epoch", m.epoch}, {"wall_ms", m.wall_ms}}.dump();
}

Trainer::Trainer(Model<float>& model, const TrainConfig& cfg, std::size_t dataset_size)
    : model_(model), cfg_(cfg), params_(model.parameters()), opt_(cfg.adamw()) {
  cfg_.validate();
  if (dataset_size == 0) throw FormatError("training data is empty");
  model_.encoder.set_frozen(cfg_.frozen);
  const auto batches = static_cast<std::int64_t>((dataset_size + cfg_.batch_size - 1) /
                                                 static_cast<std::size_t>(cfg_.batch_size));
  total_steps_ = batches * cfg_.epochs;
  for (const auto& p : params_) p.tensor.zero_grad();
}

double Trainer::lr_for_group(const std::string& group) const {
  const double factor =
      cosine_lr(std::min(step_, total_steps_), total_steps_, 1.0, cfg_.lr_min / cfg_.lr);
  return (group == "encoder" ? cfg_.lr_finetune : cfg_.lr) * factor;
}

double Trainer::current_lr() const { return lr_for_group("adapter"); }

BatchStats Trainer::train_batch(std::span<const Sample* const> batch) {
  if (batch.empty()) throw FormatError("empty batch");
  BatchStats stats;
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (const Sample* s : batch) {
    Tape<float> tape;
    const ModelOutput<float> out = model_.forward(tape, s->voxels, true);
    const int label = s->label;
    const auto l_cls = focal_loss(tape, out.logits, std::span<const int>(&label, 1), cfg_.focal);
    // The adapter output is the reconstruction target, not a second path into the adapter.
    const auto l_rec = rec_loss(tape, out.x_rec, out.x_uskt.detach_copy());
    const auto total = total_loss(tape, l_cls, l_rec, cfg_.lambda1, cfg_.lambda2);
    stats.loss += total.item();
    stats.l_cls += l_cls.item();
    stats.l_rec += l_rec.item();
    stats.correct += argmax(out.logits.data()) == label ? 1 : 0;
    ++stats.count;
    if (total.requires_grad()) backward(ops::scale(tape, total, inv), tape);
  }
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
    }
  }
  opt_.step(params_, [this](const NamedParam<float>& p) { return lr_for_group(param_group(p.name)); });
  for (const auto& p : params_) p.tensor.zero_grad();
  ++step_;
  return stats;
}

EpochMetrics Trainer::train_epoch(const std::vector<Sample>& data) {
  if (data.empty()) throw FormatError("training data is empty");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<const Sample*> order;
  order.reserve(data.size());
  for (const auto& s : data) order.push_back(&s);
  Rng rng(component_seed(cfg_.seed, 1000 + static_cast<std::uint64_t>(epoch_)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  EpochMetrics m;
  m.epoch = epoch_ + 1;
  m.lr = current_lr();
  BatchStats sum;
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t n = std::min(bs, order.size() - start);
    const BatchStats b = train_batch(std::span<const Sample* const>(order.data() + start, n));
    sum.loss += b.loss;
    sum.l_cls += b.l_cls;
    sum.l_rec += b.l_rec;
    sum.correct += b.correct;
    sum.count += b.count;
  }
  m.loss = sum.loss / sum.count;
  m.l_cls = sum.l_cls / sum.count;
  m.l_rec = sum.l_rec / sum.count;
  m.train_acc = static_cast<double>(sum.correct) / sum.count;
  ++epoch_;
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

int argmax(std::span<const float> logits) {
  if (logits.empty()) throw ShapeError("argmax of an empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

int predict(const Model<float>& model, const Tensor<float>& voxels) {
  Tape<float> tape;
  return argmax(model.forward(tape, voxels, false).logits.data());
}

double evaluate(const Model<float>& model, const std::vector<Sample>& data) {
  if (data.empty()) throw FormatError("evaluation data is empty");
  int correct = 0;
  for (const auto& s : data) correct += predict(model, s.voxels) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochMetrics> fit(Model<float>& model, const TrainConfig& cfg,
                              const std::vector<Sample>& train, const std::vector<Sample>* eval,
                              const EpochCallback& on_epoch) {
  Trainer trainer(model, cfg, train.size());
  std::vector<EpochMetrics> history;
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochMetrics m = trainer.train_epoch(train);
    if (eval != nullptr && !eval->empty()) m.eval_acc = evaluate(model, *eval);
    if (on_epoch) on_epoch(m);
    history.push_back(m);
  }
  return history;
}

namespace {

std::string sample_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05zu.json", i);
  return buf;
}

json read_labels(const std::filesystem::path& dir) {
  const auto path = dir / "labels.json";
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_dataset_dir(const std::filesystem::path& dir, const std::vector<LabeledGrid>& data,
                       int num_classes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
  json samples = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& g = data[i].grid;
    WeightBundle b;
    b.add("voxel", g.to_tensor<float>());
    b.config = {{"bins", g.bins},
                {"height", g.height},
                {"width", g.width},
                {"aggregation", g.aggregation == Aggregation::sum ? "sum" : "avg"},
                {"label", data[i].label}};
    save_bundle(dir / sample_file(i), b);
    samples.push_back({{"file", sample_file(i)}, {"label", data[i].label}});
  }
  std::ofstream out(dir / "labels.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "labels.json").string());
  out << json{{"num_classes", num_classes}, {"samples", samples}}.dump(2) << '\n';
}

std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir) {
  const json labels = read_labels(dir);
  std::vector<Sample> out;
  try {
    const int classes = labels.at("num_classes").get<int>();
    for (const auto& s : labels.at("samples")) {
      const int label = s.at("label").get<int>();
      if (label < 0 || label >= classes) {
        throw FormatError(dir.string() + ": label " + std::to_string(label) + " out of range");
      }
      const WeightBundle b = load_bundle(dir / s.at("file").get<std::string>());
      out.push_back({b.get("voxel"), label});
    }
  } catch (const json::exception& e) {
    throw FormatError((dir / "labels.json").string() + ": " + e.what());
  }
  return out;
}

int dataset_num_classes(const std::filesystem::path& dir) {
  try {
    return read_labels(dir).at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw FormatError((dir / "labels.json").string() + ": " + e.what());
  }
}

}  // namespace uskt
