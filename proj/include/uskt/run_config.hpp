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

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "uskt/net.hpp"
#include "uskt/train.hpp"

namespace uskt {

/// Synthetic data used when no train_dir is given. Bins and resolution
/// follow the model config.
struct SyntheticDataConfig {
  int classes = 3;
  int per_class = 10;
  std::uint64_t seed = 42;
  double noise = 0.0005;
};

struct DataConfig {
  std::string train_dir;  // empty: synthetic
  std::string eval_dir;   // empty: no evaluation
  SyntheticDataConfig synthetic;
};

/// Everything that determines a training run, given the dataset files.
/// model.num_classes == 0 means "take it from the data".
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "run";

  RunConfig() { model.num_classes = 0; }
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);

/// Overlays `doc` on `base`. Unknown keys and wrong types raise FormatError.
RunConfig run_config_from_json(const nlohmann::json& doc, RunConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

struct LoadedData {
  std::vector<Sample> train;
  std::vector<Sample> eval;
  int num_classes = 0;
};

/// Loads or synthesises the data and checks it against the model input.
LoadedData load_run_data(const RunConfig& cfg);

struct RunResult {
  RunConfig effective;
  std::vector<EpochMetrics> history;
  std::filesystem::path model_manifest;
};

/// Full training run: writes run_config.json, metrics.jsonl, timing.jsonl and
/// model.json/model.bin under cfg.output_dir.
RunResult run_training(const RunConfig& cfg, const EpochCallback& on_epoch = {});

/// Rebuilds the model described by a bundle's config echo and loads its weights.
Model<float> load_model(const std::filesystem::path& manifest);

}  // namespace uskt
