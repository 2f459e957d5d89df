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


#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "test_util.hpp"
#include "uskt/bundle.hpp"
#include "uskt/events.hpp"
#include "uskt/train.hpp"

using namespace uskt;
using uskt::testing::TempDir;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(USKT_CLI_PATH) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kMiniModel = R"({
  "model": {"input_hw": 32, "down_channels": [8, 8, 16, 16], "state_size": 4,
            "encoder_channels": [4, 8, 8, 16, 16]},
  "train": {"epochs": 1, "lambda2": 0.1},
  "data": {"synthetic": {"per_class": 2}}
})";

}  // namespace

TEST_CASE("cli voxelize: csv example, empty input, bad magic") {
  TempDir dir("cli_vox");
  std::ofstream(dir / "two.csv") << "1,0,0.25,1\n1,0,0.75,-1\n";
  auto r = run_cli("voxelize --input " + q(dir / "two.csv") + " --bins 2 --hw 2 --out " +
                   q(dir / "v.json"));
  CHECK(r.code == 0);
  auto info = nlohmann::json::parse(r.out);
  CHECK(info["nonzero"] == 2);
  auto b = load_bundle(dir / "v.json");
  const auto& v = b.get("voxel");
  CHECK(v.shape() == Shape{2, 2, 2});
  EventStream s = parse_csv_events(dir / "two.csv", 2, 2);
  auto g = voxelize(s, 2, 2, 2);
  for (std::size_t i = 0; i < g.data.size(); ++i) CHECK(v.data()[i] == static_cast<float>(g.data[i]));

  std::ofstream(dir / "empty.csv").close();
  r = run_cli("voxelize --input " + q(dir / "empty.csv") + " --bins 3 --hw 4 --out " +
              q(dir / "e.json"));
  CHECK(r.code == 0);
  {
    const auto held = load_bundle(dir / "e.json").get("voxel");
    for (float x : held.data()) CHECK(x == 0.0f);
  }

  std::ofstream(dir / "bad.evt", std::ios::binary) << "NOPE0000000000000000";
  r = run_cli("voxelize --input " + q(dir / "bad.evt") + " --format evt1 --out " + q(dir / "b.json"));
  CHECK(r.code == 2);
  std::ofstream(dir / "badline.csv") << "1,0,0.25,1\n1,zero,0.75,-1\n";
  CHECK(run_cli("voxelize --input " + q(dir / "badline.csv") + " --hw 2 --out " + q(dir / "c.json"))
            .code == 2);
}

TEST_CASE("cli synth: deterministic output and unwritable destinations") {
  TempDir dir("cli_synth");
  const std::string common = "synth --classes 3 --per-class 2 --seed 5 --bins 3 --hw 16 --out-dir ";
  REQUIRE(run_cli(common + q(dir / "a")).code == 0);
  REQUIRE(run_cli(common + q(dir / "b")).code == 0);
  CHECK(slurp(dir / "a" / "labels.json") == slurp(dir / "b" / "labels.json"));
  CHECK(slurp(dir / "a" / "sample_00000.bin") == slurp(dir / "b" / "sample_00000.bin"));
  auto labels = nlohmann::json::parse(slurp(dir / "a" / "labels.json"));
  CHECK(labels["samples"].size() == 6);
  std::ofstream(dir / "file").close();
  CHECK(run_cli("synth --out-dir " + q(dir / "file" / "sub")).code == 2);
}

TEST_CASE("cli train and eval: artifacts, determinism, flag precedence, errors") {
  TempDir dir("cli_train");
  std::ofstream(dir / "cfg.json") << kMiniModel;
  auto r = run_cli("train --quiet --config " + q(dir / "cfg.json") + " --out-dir " + q(dir / "r1") +
                   " --epochs 2 --lambda2 0");
  REQUIRE(r.code == 0);
  auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["epochs"] == 2);
  auto echoed = nlohmann::json::parse(slurp(dir / "r1" / "run_config.json"));
  CHECK(echoed["train"]["epochs"] == 2);
  CHECK(echoed["train"]["lambda2"] == 0.0);
  CHECK(echoed["model"]["input_hw"] == 32);
  CHECK(echoed["train"]["lr"] == 0.0025);

  REQUIRE(run_cli("train --quiet --config " + q(dir / "cfg.json") + " --out-dir " + q(dir / "r2") +
                  " --epochs 2 --lambda2 0")
              .code == 0);
  CHECK(slurp(dir / "r1" / "metrics.jsonl") == slurp(dir / "r2" / "metrics.jsonl"));
  CHECK(slurp(dir / "r1" / "model.bin") == slurp(dir / "r2" / "model.bin"));
  CHECK(slurp(dir / "r1" / "model.json") == slurp(dir / "r2" / "model.json"));

  REQUIRE(run_cli("synth --per-class 2 --bins 5 --hw 32 --out-dir " + q(dir / "data")).code == 0);
  r = run_cli("eval --model " + q(dir / "r1" / "model.json") + " --data " + q(dir / "data"));
  CHECK(r.code == 0);
  auto acc = nlohmann::json::parse(r.out);
  CHECK(acc["samples"] == 6);
  CHECK(acc["accuracy"].get<double>() >= 0.0);
  CHECK(acc["accuracy"].get<double>() <= 1.0);

  REQUIRE(run_cli("synth --per-class 1 --bins 5 --hw 16 --out-dir " + q(dir / "small")).code == 0);
  CHECK(run_cli("eval --model " + q(dir / "r1" / "model.json") + " --data " + q(dir / "small")).code == 2);

  std::ofstream(dir / "unknown.json") << R"({"train": {"learning_rate": 1}})";
  CHECK(run_cli("train --config " + q(dir / "unknown.json") + " --out-dir " + q(dir / "r3")).code == 2);
  CHECK(run_cli("train --adapter vit --out-dir " + q(dir / "r4")).code == 2);
  CHECK(run_cli("train --no-such-flag").code == 2);
}

TEST_CASE("cli train: non-finite input aborts with exit code 3") {
  TempDir dir("cli_nan");
  SynthConfig sc;
  sc.height = sc.width = 32;
  sc.samples_per_class = 1;
  auto grids = gen_synthetic_dataset(sc);
  grids[0].grid.data[0] = std::numeric_limits<double>::quiet_NaN();
  write_dataset_dir(dir / "data", grids, 3);
  std::ofstream(dir / "cfg.json") << kMiniModel;
  CHECK(run_cli("train --quiet --config " + q(dir / "cfg.json") + " --train-dir " + q(dir / "data") +
                " --out-dir " + q(dir / "out"))
            .code == 3);
}

TEST_CASE("cli gradcheck and bench") {
  auto r = run_cli("gradcheck --scope birssm");
  CHECK(r.code == 0);
  CHECK(r.out.find("passed") != std::string::npos);
  CHECK(run_cli("gradcheck --scope nonsense").code == 2);

  r = run_cli("bench --seq-lens 16,32 --width 128 --state 16 --repeats 2");
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("variant,L,wall_ns_median,param_count\n", 0) == 0);
  CHECK(r.out.find("bir_ssm,16,") != std::string::npos);
  CHECK(r.out.find(",6400\n") != std::string::npos);
  CHECK(r.out.find(",12800\n") != std::string::npos);
  CHECK(r.out.find("param_ratio,0,0,2.0") != std::string::npos);
}
