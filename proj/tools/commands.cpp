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


#include "commands.hpp"

#include <cstdio>
#include <iostream>

#include "json.hpp"
#include "uskt/bundle.hpp"
#include "uskt/events.hpp"
#include "uskt/run_config.hpp"
#include "uskt/train.hpp"
#include "uskt/verify.hpp"

namespace uskt::cli {

using nlohmann::json;

int guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const VerificationError& e) {
    err << "verification failed: " << e.what() << '\n';
    return kVerificationFailed;
  } catch (const NumericError& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

int cmd_voxelize(const VoxelizeArgs& a, std::ostream& out) {
  if (a.out.empty()) throw FormatError("--out is required");
  ParseOptions opts;
  opts.zero_is_negative = a.zero_is_negative;
  opts.t_start = a.t_start;
  opts.t_end = a.t_end;
  EventStream stream;
  try {
    if (a.format == "csv") {
      stream = parse_csv_events(a.input, a.sensor_width.value_or(static_cast<int>(a.hw)),
                                a.sensor_height.value_or(static_cast<int>(a.hw)), opts);
    } else if (a.format == "evt1") {
      stream = parse_evt_binary(a.input, opts);
    } else {
      throw FormatError("unknown format '" + a.format + "' (expected csv or evt1)");
    }
  } catch (const FormatError& e) {
    throw FormatError(a.input + ": " + e.what());
  }
  const VoxelGrid grid = voxelize(stream, a.bins, a.hw, a.hw, parse_aggregation(a.agg));
  WeightBundle b;
  b.add("voxel", grid.to_tensor<float>());
  b.config = {{"bins", grid.bins},
              {"height", grid.height},
              {"width", grid.width},
              {"aggregation", a.agg},
              {"events", stream.events.size()}};
  save_bundle(a.out, b);
  out << json{{"shape", Shape{grid.bins, grid.height, grid.width}},
              {"nonzero", grid.nonzero_count()},
              {"events", stream.events.size()},
              {"out", a.out}}
             .dump()
      << '\n';
  return kOk;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.out_dir.empty()) throw FormatError("--out-dir is required");
  SynthConfig sc;
  sc.classes = a.classes;
  sc.samples_per_class = a.per_class;
  sc.seed = a.seed;
  sc.bins = a.bins;
  sc.height = sc.width = a.hw;
  sc.noise_rate = a.noise;
  const auto data = gen_synthetic_dataset(sc);
  write_dataset_dir(a.out_dir, data, a.classes);
  out << json{{"samples", data.size()}, {"classes", a.classes}, {"out_dir", a.out_dir}}.dump()
      << '\n';
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = a.config ? load_run_config(*a.config) : RunConfig{};
  if (a.out_dir) cfg.output_dir = *a.out_dir;
  if (a.frozen) cfg.train.frozen = *a.frozen;
  if (a.adapter) cfg.model.adapter = parse_adapter(*a.adapter);
  if (a.ssm_layers) cfg.model.uskt.ssm_layers = *a.ssm_layers;
  if (a.lambda2) cfg.train.lambda2 = *a.lambda2;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.lr) cfg.train.lr = *a.lr;
  if (a.train_dir) cfg.data.train_dir = *a.train_dir;
  if (a.eval_dir) cfg.data.eval_dir = *a.eval_dir;
  const RunResult r = run_training(cfg, [&](const EpochMetrics& m) {
    if (!a.quiet) out << metrics_line(m) << '\n' << std::flush;
  });
  const auto& last = r.history.back();
  json summary = {{"epochs", r.history.size()},
                  {"final_train_acc", last.train_acc},
                  {"final_loss", last.loss},
                  {"model", r.model_manifest.string()},
                  {"output_dir", r.effective.output_dir}};
  if (last.eval_acc) summary["final_eval_acc"] = *last.eval_acc;
  out << summary.dump() << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.model.empty() || a.data.empty()) throw FormatError("--model and --data are required");
  const Model<float> model = load_model(a.model);
  const auto samples = load_dataset_dir(a.data);
  const Shape want{model.config.uskt.in_bins, model.config.uskt.input_hw,
                   model.config.uskt.input_hw};
  for (const auto& s : samples) {
    if (s.voxels.shape() != want) {
      throw FormatError("sample shape " + shape_str(s.voxels.shape()) +
                        " does not match the model input " + shape_str(want));
    }
    if (s.label >= model.config.num_classes) {
      throw FormatError("label " + std::to_string(s.label) + " exceeds the model's classes");
    }
  }
  const double acc = evaluate(model, samples);
  out << json{{"accuracy", acc}, {"samples", samples.size()}}.dump() << '\n';
  return kOk;
}

int cmd_gradcheck(const std::string& scope, std::ostream& out) {
  const auto rows = gradcheck_suite(scope);
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %-24s %14s %9s  %s\n", "scope", "check", "max_rel_err",
                "elements", "status");
  out << line;
  int failed = 0;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-10s %-24s %14.3e %9lld  %s\n", r.scope.c_str(),
                  r.name.c_str(), r.report.max_rel_err,
                  static_cast<long long>(r.report.elements_checked), r.report.pass ? "ok" : "FAIL");
    out << line;
    if (!r.report.pass) {
      ++failed;
      out << "    worst: " << r.report.worst_leaf << "[" << r.report.worst_index
          << "] analytic=" << r.report.worst_analytic << " numeric=" << r.report.worst_numeric
          << '\n';
    }
  }
  out << "gradcheck: " << rows.size() - failed << "/" << rows.size() << " passed\n";
  return failed == 0 ? kOk : kVerificationFailed;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  BenchConfig cfg;
  cfg.seq_lens = a.seq_lens;
  cfg.width = a.width;
  cfg.state = a.state;
  cfg.repeats = a.repeats;
  const auto rows = run_bench(cfg);
  out << "variant,L,wall_ns_median,param_count\n";
  Index bir = 0, bi = 0;
  for (const auto& r : rows) {
    out << r.variant << ',' << r.length << ',' << static_cast<long long>(r.wall_ns_median) << ','
        << r.param_count << '\n';
    if (r.variant == "bir_ssm") bir = r.param_count;
    if (r.variant == "bi_ssm") bi = r.param_count;
  }
  if (bir > 0) {
    char ratio[64];
    std::snprintf(ratio, sizeof(ratio), "param_ratio,0,0,%.1f\n",
                  static_cast<double>(bi) / static_cast<double>(bir));
    out << ratio;
  }
  return kOk;
}

}  // namespace uskt::cli
