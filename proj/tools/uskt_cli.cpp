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


#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

std::vector<uskt::Index> parse_lens(const std::string& csv) {
  std::vector<uskt::Index> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw uskt::FormatError("invalid sequence length '" + item + "'");
    }
  }
  if (out.empty()) throw uskt::FormatError("--seq-lens needs at least one length");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace uskt::cli;
  CLI::App app{"USKT: event-to-RGB adapter toolkit"};
  app.require_subcommand(1);

  VoxelizeArgs vox;
  auto* v = app.add_subcommand("voxelize", "Voxelize an event file into a weight bundle");
  v->add_option("--input", vox.input, "Event file")->required();
  v->add_option("--format", vox.format, "csv or evt1")->check(CLI::IsMember({"csv", "evt1"}));
  v->add_option("--bins", vox.bins, "Time bins T")->check(CLI::PositiveNumber);
  v->add_option("--hw", vox.hw, "Output height and width")->check(CLI::PositiveNumber);
  v->add_option("--agg", vox.agg, "sum or avg")->check(CLI::IsMember({"sum", "avg", "average"}));
  v->add_option("--out", vox.out, "Output manifest path (.json)")->required();
  v->add_option("--sensor-width", vox.sensor_width, "CSV sensor width (default: hw)");
  v->add_option("--sensor-height", vox.sensor_height, "CSV sensor height (default: hw)");
  v->add_flag("--zero-is-negative", vox.zero_is_negative, "Read polarity 0 as -1");
  v->add_option("--t-start", vox.t_start, "Window start (seconds)");
  v->add_option("--t-end", vox.t_end, "Window end (seconds)");

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "Write a synthetic labelled dataset");
  s->add_option("--classes", syn.classes, "Number of classes (2..8)");
  s->add_option("--per-class", syn.per_class, "Samples per class");
  s->add_option("--seed", syn.seed, "Seed");
  s->add_option("--bins", syn.bins, "Time bins T");
  s->add_option("--hw", syn.hw, "Height and width");
  s->add_option("--noise", syn.noise, "Noise events per pixel per bin");
  s->add_option("--out-dir", syn.out_dir, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; flags override the config file");
  t->add_option("--config", tr.config, "RunConfig JSON");
  t->add_option("--out-dir", tr.out_dir, "Output directory");
  t->add_option("--frozen", tr.frozen, "Freeze encoder weights (true/false)");
  t->add_option("--adapter", tr.adapter, "uskt, conv1, conv2 or none");
  t->add_option("--ssm-layers", tr.ssm_layers, "BiR-SSM layers in the bottleneck");
  t->add_option("--lambda2", tr.lambda2, "Reconstruction loss weight");
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--batch-size", tr.batch_size, "Batch size");
  t->add_option("--seed", tr.seed, "Seed");
  t->add_option("--lr", tr.lr, "Base learning rate");
  t->add_option("--train-dir", tr.train_dir, "Dataset directory (default: synthetic)");
  t->add_option("--eval-dir", tr.eval_dir, "Evaluation dataset directory");
  t->add_flag("--quiet", tr.quiet, "Print only the final summary");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Top-1 accuracy of a model bundle on a dataset");
  e->add_option("--model", ev.model, "Model manifest (.json)")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();

  std::string scope = "all";
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  g->add_option("--scope", scope, "ops, birssm, uskt-mini or all")
      ->check(CLI::IsMember({"ops", "birssm", "uskt-mini", "all"}));

  BenchArgs be;
  std::string lens = "64,256,1024";
  auto* b = app.add_subcommand("bench", "Time scan kernels and bidirectional blocks (CSV)");
  b->add_option("--seq-lens", lens, "Comma-separated sequence lengths");
  b->add_option("--width", be.width, "Channel width E")->check(CLI::PositiveNumber);
  b->add_option("--state", be.state, "State size S")->check(CLI::PositiveNumber);
  b->add_option("--repeats", be.repeats, "Timed repeats")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kInputError;
  }

  return guarded(
      [&]() -> int {
        if (*v) return cmd_voxelize(vox, std::cout);
        if (*s) return cmd_synth(syn, std::cout);
        if (*t) return cmd_train(tr, std::cout);
        if (*e) return cmd_eval(ev, std::cout);
        if (*g) return cmd_gradcheck(scope, std::cout);
        be.seq_lens = parse_lens(lens);
        return cmd_bench(be, std::cout);
      },
      std::cerr);
}
