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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uskt/events.hpp"
#include "uskt/losses.hpp"
#include "uskt/net.hpp"
#include "uskt/optim.hpp"

namespace uskt {

struct TrainConfig {
  double lr = 0.0025;
  double lr_finetune = 0.000025;  // encoder parameters
  double lr_min = 0.0;            // floor of the cosine schedule for the main group
  double lambda1 = 1.0;
  double lambda2 = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  int epochs = 15;
  int batch_size = 2;
  std::uint64_t seed = 42;
  bool frozen = true;
  FocalCfg focal;

  void validate() const;
  AdamWConfig adamw() const { return {beta1, beta2, eps, weight_decay}; }
};

struct Sample {
  Tensor<float> voxels;  // T×H×W
  int label = 0;
};

std::vector<Sample> to_samples(const std::vector<LabeledGrid>& grids);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;  // main-group rate at the first step of the epoch
  double loss = 0.0;
  double l_cls = 0.0;
  double l_rec = 0.0;
  double train_acc = 0.0;
  std::optional<double> eval_acc;
  double wall_ms = 0.0;
};

/// One JSON object per line. The metrics line carries no timing so that
/// repeated runs produce identical files; timing goes to a separate line.
std::string metrics_line(const EpochMetrics& m);
std::string timing_line(const EpochMetrics& m);

struct BatchStats {
  double loss = 0.0;  // sums over the batch, not means
  double l_cls = 0.0;
  double l_rec = 0.0;
  int correct = 0;
  int count = 0;
};

/// Owns the optimizer state and the learning-rate schedule for one run.
class Trainer {
 public:
  Trainer(Model<float>& model, const TrainConfig& cfg, std::size_t dataset_size);

  /// Shuffles with the epoch's own stream, then steps once per batch.
  EpochMetrics train_epoch(const std::vector<Sample>& data);

  /// Forward, backward and one AdamW step over the given samples.
  BatchStats train_batch(std::span<const Sample* const> batch);

  std::int64_t steps_taken() const { return step_; }
  std::int64_t total_steps() const { return total_steps_; }
  /// Learning rate of the main group at the next step.
  double current_lr() const;
  double lr_for_group(const std::string& group) const;
  int epochs_done() const { return epoch_; }

 private:
  Model<float>& model_;
  TrainConfig cfg_;
  ParamList<float> params_;
  AdamW<float> opt_;
  std::int64_t step_ = 0;
  std::int64_t total_steps_ = 1;
  int epoch_ = 0;
};

/// Index of the largest logit; ties go to the lowest index.
int argmax(std::span<const float> logits);
int predict(const Model<float>& model, const Tensor<float>& voxels);
/// Top-1 accuracy. Throws FormatError on an empty dataset.
double evaluate(const Model<float>& model, const std::vector<Sample>& data);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Runs cfg.epochs epochs, evaluating on `eval` after each when given.
std::vector<EpochMetrics> fit(Model<float>& model, const TrainConfig& cfg,
                              const std::vector<Sample>& train,
                              const std::vector<Sample>* eval = nullptr,
                              const EpochCallback& on_epoch = {});

/// Dataset directory: one voxel bundle per sample plus labels.json.
void write_dataset_dir(const std::filesystem::path& dir, const std::vector<LabeledGrid>& data,
                       int num_classes);
std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir);
/// Class count recorded in labels.json.
int dataset_num_classes(const std::filesystem::path& dir);

}  // namespace uskt
