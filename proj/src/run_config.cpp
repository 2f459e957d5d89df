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


#include "uskt/run_config.hpp"

#include <fstream>
#include <set>

#include "uskt/bundle.hpp"

namespace uskt {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object and rejects any it was not asked about.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw FormatError(label() + " must be a JSON object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw FormatError(label(key) + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string label(const std::string& key = "") const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return "config key '" + (p.empty() ? std::string("<root>") : p) + "'";
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw FormatError("unknown " + label(k));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(const json& j, ModelConfig& m) {
  StrictObject o(j, "model");
  std::string adapter(adapter_name(m.adapter));
  o.read("adapter", adapter);
  m.adapter = parse_adapter(adapter);
  o.read("in_bins", m.uskt.in_bins);
  o.read("proj_channels", m.uskt.proj_channels);
  o.read("down_channels", m.uskt.down_channels);
  o.read("ssm_layers", m.uskt.ssm_layers);
  o.read("state_size", m.uskt.state_size);
  o.read("out_channels", m.uskt.out_channels);
  o.read("input_hw", m.uskt.input_hw);
  o.read("encoder_channels", m.encoder.channels);
  o.read("num_classes", m.num_classes);
  o.read("frozen", m.frozen);
  m.encoder.input_hw = m.uskt.input_hw;
  o.finish();
}

void read_train(const json& j, TrainConfig& t) {
  StrictObject o(j, "train");
  o.read("lr", t.lr);
  o.read("lr_finetune", t.lr_finetune);
  o.read("lr_min", t.lr_min);
  o.read("lambda1", t.lambda1);
  o.read("lambda2", t.lambda2);
  o.read("beta1", t.beta1);
  o.read("beta2", t.beta2);
  o.read("weight_decay", t.weight_decay);
  o.read("eps", t.eps);
  o.read("epochs", t.epochs);
  o.read("batch_size", t.batch_size);
  o.read("seed", t.seed);
  o.read("frozen", t.frozen);
  if (const json* f = o.child("focal")) {
    StrictObject fo(*f, "train.focal");
    fo.read("alpha", t.focal.alpha);
    fo.read("class_alpha", t.focal.class_alpha);
    fo.read("gamma", t.focal.gamma);
    fo.finish();
  }
  o.finish();
}

void read_data(const json& j, DataConfig& d) {
  StrictObject o(j, "data");
  o.read("train_dir", d.train_dir);
  o.read("eval_dir", d.eval_dir);
  if (const json* s = o.child("synthetic")) {
    StrictObject so(*s, "data.synthetic");
    so.read("classes", d.synthetic.classes);
    so.read("per_class", d.synthetic.per_class);
    so.read("seed", d.synthetic.seed);
    so.read("noise", d.synthetic.noise);
    so.finish();
  }
  o.finish();
}

std::vector<Sample> load_checked(const std::filesystem::path& dir, const USKTConfig& u) {
  auto samples = load_dataset_dir(dir);
  if (samples.empty()) throw FormatError(dir.string() + ": dataset is empty");
  const Shape want{u.in_bins, u.input_hw, u.input_hw};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].voxels.shape() != want) {
      throw FormatError(dir.string() + ": sample " + std::to_string(i) + " has shape " +
                        shape_str(samples[i].voxels.shape()) + ", model expects " +
                        shape_str(want));
    }
  }
  return samples;
}

}  // namespace

void RunConfig::validate() const {
  model.uskt.validate();
  train.validate();
  train.focal.validate(model.num_classes > 0 ? model.num_classes
                                             : static_cast<int>(train.focal.class_alpha.size()));
  if (output_dir.empty()) throw FormatError("output_dir must not be empty");
  if (data.train_dir.empty()) {
    const auto& s = data.synthetic;
    if (s.classes < 2 || s.classes > kPatternCount) {
      throw FormatError("data.synthetic.classes must lie in [2, " + std::to_string(kPatternCount) +
                        "]");
    }
    if (s.per_class < 1) throw FormatError("data.synthetic.per_class must be >= 1");
    if (!(s.noise >= 0.0)) throw FormatError("data.synthetic.noise must be >= 0");
  }
}

json to_json(const ModelConfig& m) {
  return {{"adapter", std::string(adapter_name(m.adapter))},
          {"in_bins", m.uskt.in_bins},
          {"proj_channels", m.uskt.proj_channels},
          {"down_channels", m.uskt.down_channels},
          {"ssm_layers", m.uskt.ssm_layers},
          {"state_size", m.uskt.state_size},
          {"out_channels", m.uskt.out_channels},
          {"input_hw", m.uskt.input_hw},
          {"encoder_channels", m.encoder.channels},
          {"num_classes", m.num_classes},
          {"frozen", m.frozen}};
}

namespace {

json to_json(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"lr_finetune", t.lr_finetune},
          {"lr_min", t.lr_min},
          {"lambda1", t.lambda1},
          {"lambda2", t.lambda2},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"weight_decay", t.weight_decay},
          {"eps", t.eps},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"frozen", t.frozen},
          {"focal", {{"alpha", t.focal.alpha}, {"class_alpha", t.focal.class_alpha},
                     {"gamma", t.focal.gamma}}}};
}

}  // namespace

json to_json(const RunConfig& cfg) {
  const auto& s = cfg.data.synthetic;
  return {{"model", to_json(cfg.model)},
          {"train", to_json(cfg.train)},
          {"data",
           {{"train_dir", cfg.data.train_dir},
            {"eval_dir", cfg.data.eval_dir},
            {"synthetic",
             {{"classes", s.classes}, {"per_class", s.per_class}, {"seed", s.seed},
              {"noise", s.noise}}}}},
          {"output_dir", cfg.output_dir}};
}

RunConfig run_config_from_json(const json& doc, RunConfig base) {
  StrictObject o(doc, "");
  if (const json* m = o.child("model")) read_model(*m, base.model);
  if (const json* t = o.child("train")) read_train(*t, base.train);
  if (const json* d = o.child("data")) read_data(*d, base.data);
  o.read("output_dir", base.output_dir);
  o.finish();
  return base;
}

ModelConfig model_config_from_json(const json& doc) {
  ModelConfig m;
  read_model(doc, m);
  return m;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

LoadedData load_run_data(const RunConfig& cfg) {
  LoadedData out;
  const auto& u = cfg.model.uskt;
  if (cfg.data.train_dir.empty()) {
    SynthConfig sc;
    sc.classes = cfg.data.synthetic.classes;
    sc.samples_per_class = cfg.data.synthetic.per_class;
    sc.seed = cfg.data.synthetic.seed;
    sc.noise_rate = cfg.data.synthetic.noise;
    sc.bins = u.in_bins;
    sc.height = sc.width = u.input_hw;
    out.train = to_samples(gen_synthetic_dataset(sc));
    out.num_classes = sc.classes;
  } else {
    out.train = load_checked(cfg.data.train_dir, u);
    out.num_classes = dataset_num_classes(cfg.data.train_dir);
  }
  if (!cfg.data.eval_dir.empty()) {
    out.eval = load_checked(cfg.data.eval_dir, u);
    if (dataset_num_classes(cfg.data.eval_dir) != out.num_classes) {
      throw FormatError("eval_dir and train data disagree on num_classes");
    }
  }
  if (cfg.model.num_classes != 0 && cfg.model.num_classes != out.num_classes) {
    throw FormatError("model.num_classes is " + std::to_string(cfg.model.num_classes) +
                      " but the data has " + std::to_string(out.num_classes) + " classes");
  }
  return out;
}

RunResult run_training(const RunConfig& cfg, const EpochCallback& on_epoch) {
  RunResult result;
  RunConfig eff = cfg;
  eff.validate();
  const LoadedData data = load_run_data(eff);
  eff.model.num_classes = data.num_classes;
  eff.model.frozen = eff.train.frozen;
  eff.model.encoder.input_hw = eff.model.uskt.input_hw;
  eff.validate();

  const std::filesystem::path out_dir(eff.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw FormatError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream rc(out_dir / "run_config.json", std::ios::trunc);
    if (!rc) throw FormatError("cannot write " + (out_dir / "run_config.json").string());
    rc << to_json(eff).dump(2) << '\n';
  }
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  std::ofstream timing(out_dir / "timing.jsonl", std::ios::trunc);
  if (!metrics || !timing) throw FormatError("cannot write metrics under " + out_dir.string());

  Model<float> model(eff.model, eff.train.seed);
  result.history = fit(model, eff.train, data.train, data.eval.empty() ? nullptr : &data.eval,
                       [&](const EpochMetrics& m) {
                         metrics << metrics_line(m) << '\n' << std::flush;
                         timing << timing_line(m) << '\n' << std::flush;
                         if (on_epoch) on_epoch(m);
                       });
  result.model_manifest = out_dir / "model.json";
  save_bundle(result.model_manifest,
              model_to_bundle(model, {{"model", to_json(eff.model)}, {"train", to_json(eff.train)}}));
  result.effective = eff;
  return result;
}

Model<float> load_model(const std::filesystem::path& manifest) {
  const WeightBundle bundle = load_bundle(manifest);
  if (!bundle.config.contains("model")) {
    throw FormatError(manifest.string() + ": bundle carries no model config");
  }
  ModelConfig mc = model_config_from_json(bundle.config.at("model"));
  if (mc.num_classes < 2) throw FormatError(manifest.string() + ": invalid num_classes");
  Model<float> model(mc, 0);
  load_model_weights(model, bundle);
  return model;
}

}  // namespace uskt
