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
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "uskt/tensor.hpp"

namespace uskt::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kInputError = 2,
  kNumericAbort = 3,
  kVerificationFailed = 4,
};

/// Runs fn, mapping library exceptions to exit codes and printing them to err.
int guarded(const std::function<int()>& fn, std::ostream& err);

struct VoxelizeArgs {
  std::string input;
  std::string format = "csv";  // csv | evt1
  Index bins = 5;
  Index hw = 224;
  std::string agg = "sum";
  std::string out;
  std::optional<int> sensor_width;  // csv only; default hw
  std::optional<int> sensor_height;
  bool zero_is_negative = false;
  std::optional<double> t_start;
  std::optional<double> t_end;
};
int cmd_voxelize(const VoxelizeArgs& a, std::ostream& out);

struct SynthArgs {
  int classes = 3;
  int per_class = 10;
  std::uint64_t seed = 42;
  Index bins = 5;
  Index hw = 224;
  double noise = 0.0005;
  std::string out_dir;
};
int cmd_synth(const SynthArgs& a, std::ostream& out);

/// Flags override the config file, which overrides built-in defaults.
struct TrainArgs {
  std::optional<std::string> config;
  std::optional<std::string> out_dir;
  std::optional<bool> frozen;
  std::optional<std::string> adapter;
  std::optional<int> ssm_layers;
  std::optional<double> lambda2;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::string> train_dir;
  std::optional<std::string> eval_dir;
  bool quiet = false;
};
int cmd_train(const TrainArgs& a, std::ostream& out);

struct EvalArgs {
  std::string model;
  std::string data;
};
int cmd_eval(const EvalArgs& a, std::ostream& out);

int cmd_gradcheck(const std::string& scope, std::ostream& out);

struct BenchArgs {
  std::vector<Index> seq_lens{64, 256, 1024};
  Index width = 128;
  Index state = 16;
  int repeats = 5;
};
int cmd_bench(const BenchArgs& a, std::ostream& out);

}  // namespace uskt::cli
