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


#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <optional>
#include <string>

#include "uskt/bundle.hpp"
#include "uskt/events.hpp"
#include "uskt/losses.hpp"
#include "uskt/run_config.hpp"
#include "uskt/ssm.hpp"
#include "uskt/verify.hpp"

namespace py = pybind11;
using namespace uskt;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Shape shape_of(const Array<T>& a) {
  Shape s;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) s.push_back(static_cast<Index>(a.shape(i)));
  return s;
}

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  const T* p = a.data();
  return Tensor<T>(shape_of(a), Buffer<T>(p, p + a.size()));
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array<T> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array<double> grid_array(const VoxelGrid& g) {
  Array<double> out({g.bins, g.height, g.width});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

// Rows of (x, y, t, p).
Array<double> events_array(const EventStream& s) {
  Array<double> out({static_cast<py::ssize_t>(s.events.size()), py::ssize_t{4}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    m(i, 0) = e.x;
    m(i, 1) = e.y;
    m(i, 2) = e.t;
    m(i, 3) = e.p;
  }
  return out;
}

EventStream stream_from_array(const Array<double>& events, std::int32_t sensor_width,
                              std::int32_t sensor_height, std::optional<double> t_start,
                              std::optional<double> t_end) {
  if (events.ndim() != 2 || (events.shape(0) > 0 && events.shape(1) != 4))
    throw FormatError("events must be an N x 4 array of (x, y, t, p)");
  EventStream s;
  s.sensor_width = sensor_width;
  s.sensor_height = sensor_height;
  auto r = events.unchecked<2>();
  for (py::ssize_t i = 0; i < events.shape(0); ++i) {
    EventRecord e;
    e.x = static_cast<std::int32_t>(r(i, 0));
    e.y = static_cast<std::int32_t>(r(i, 1));
    e.t = r(i, 2);
    e.p = r(i, 3) > 0 ? 1 : -1;
    if (e.x < 0 || e.x >= sensor_width || e.y < 0 || e.y >= sensor_height)
      throw FormatError("event " + std::to_string(i) + " lies outside the sensor");
    s.events.push_back(e);
  }
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
  const bool empty = s.events.empty();
  s.t_start = t_start.value_or(empty ? 0.0 : s.events.front().t);
  s.t_end = t_end.value_or(empty ? 0.0 : s.events.back().t);
  if (s.t_end < s.t_start) throw FormatError("time window ends before it starts");
  return s;
}

nlohmann::json parse_json(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["lr"] = m.lr;
  d["loss"] = m.loss;
  d["l_cls"] = m.l_cls;
  d["l_rec"] = m.l_rec;
  d["train_acc"] = m.train_acc;
  if (m.eval_acc) d["eval_acc"] = *m.eval_acc;
  return d;
}

class PyModel {
 public:
  explicit PyModel(Model<float> m) : model_(std::move(m)) {}

  static PyModel load(const std::filesystem::path& manifest) { return PyModel(load_model(manifest)); }
  static PyModel create(const std::string& config_json, std::uint64_t seed) {
    return PyModel(Model<float>(model_config_from_json(parse_json(config_json)), seed));
  }

  int predict(const Array<float>& voxels) const { return uskt::predict(model_, to_tensor(voxels)); }

  py::dict forward(const Array<float>& voxels) const {
    Tape<float> tape;
    auto out = model_.forward(tape, to_tensor(voxels), true);
    py::dict d;
    d["x_uskt"] = to_array(out.x_uskt);
    d["x_enc"] = to_array(out.x_enc);
    d["logits"] = to_array(out.logits);
    if (out.x_rec.defined()) d["x_rec"] = to_array(out.x_rec);
    return d;
  }

  py::list shape_trace(const Array<float>& voxels) const {
    Tape<float> tape;
    ShapeTrace trace;
    model_.forward(tape, to_tensor(voxels), false, &trace);
    py::list out;
    for (const auto& [name, shape] : trace.stages) out.append(py::make_tuple(name, py::tuple(py::cast(shape))));
    return out;
  }

  py::dict parameter_counts() const {
    py::dict d;
    for (const auto& p : model_.parameters()) {
      const auto g = py::str(param_group(p.name));
      const Index prev = d.contains(g) ? d[g].cast<Index>() : 0;
      d[g] = prev + p.tensor.numel();
    }
    return d;
  }

  std::uint64_t checksum() const { return uskt::checksum(model_.parameters()); }

 private:
  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_uskt, m) {
  m.doc() = "Event-camera voxelization, selective state-space scans and the USKT adapter";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def(
      "read_events",
      [](const std::filesystem::path& path, const std::string& format, std::int32_t sensor_width,
         std::int32_t sensor_height, bool zero_is_negative) {
        ParseOptions opts;
        opts.zero_is_negative = zero_is_negative;
        EventStream s = format == "evt1" ? parse_evt_binary(path, opts)
                        : format == "csv"
                            ? parse_csv_events(path, sensor_width, sensor_height, opts)
                            : throw FormatError("unknown event format '" + format + "'");
        py::dict meta;
        meta["sensor_width"] = s.sensor_width;
        meta["sensor_height"] = s.sensor_height;
        meta["t_start"] = s.t_start;
        meta["t_end"] = s.t_end;
        return py::make_tuple(events_array(s), meta);
      },
      py::arg("path"), py::arg("format") = "csv", py::arg("sensor_width") = 0,
      py::arg("sensor_height") = 0, py::arg("zero_is_negative") = false,
      "Reads an event file into an N x 4 array of (x, y, t, p) plus stream metadata.");

  m.def(
      "write_events",
      [](const std::filesystem::path& path, const Array<double>& events, std::int32_t sensor_width,
         std::int32_t sensor_height, const std::string& format) {
        auto s = stream_from_array(events, sensor_width, sensor_height, std::nullopt, std::nullopt);
        if (format == "evt1")
          write_evt_binary(path, s);
        else if (format == "csv")
          write_csv_events(path, s);
        else
          throw FormatError("unknown event format '" + format + "'");
      },
      py::arg("path"), py::arg("events"), py::arg("sensor_width"), py::arg("sensor_height"),
      py::arg("format") = "csv");

  m.def(
      "voxelize",
      [](const Array<double>& events, std::int32_t sensor_width, std::int32_t sensor_height, Index bins,
         Index height, Index width, const std::string& aggregation, std::optional<double> t_start,
         std::optional<double> t_end) {
        auto s = stream_from_array(events, sensor_width, sensor_height, t_start, t_end);
        return grid_array(voxelize(s, bins, height, width, parse_aggregation(aggregation)));
      },
      py::arg("events"), py::arg("sensor_width"), py::arg("sensor_height"), py::arg("bins") = 5,
      py::arg("height") = 224, py::arg("width") = 224, py::arg("aggregation") = "sum",
      py::arg("t_start") = py::none(), py::arg("t_end") = py::none(),
      "Bins events into a bins x height x width voxel grid.");

  m.def(
      "synthetic_dataset",
      [](int classes, int per_class, std::uint64_t seed, Index bins, Index hw, double noise) {
        SynthConfig sc;
        sc.classes = classes;
        sc.samples_per_class = per_class;
        sc.seed = seed;
        sc.bins = bins;
        sc.height = sc.width = hw;
        sc.noise_rate = noise;
        auto data = gen_synthetic_dataset(sc);
        const auto n = static_cast<py::ssize_t>(data.size());
        Array<float> voxels({n, bins, hw, hw});
        Array<int> labels({n});
        float* v = voxels.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
          v = std::copy(data[i].grid.data.begin(), data[i].grid.data.end(), v);
          labels.mutable_data()[i] = data[i].label;
        }
        return py::make_tuple(voxels, labels);
      },
      py::arg("classes") = 3, py::arg("per_class") = 10, py::arg("seed") = 42, py::arg("bins") = 5,
      py::arg("hw") = 224, py::arg("noise") = 0.0005,
      "Deterministic moving-pattern dataset: (voxels [N, T, H, W], labels [N]).");

  m.def(
      "ssm_params",
      [](Index width, Index state, std::uint64_t seed) {
        Rng rng(seed);
        SSMParams<double> p(width, state, rng);
        auto disc = discretize(p);
        py::dict d;
        d["a_log"] = to_array(p.a_log);
        d["b"] = to_array(p.b);
        d["c"] = to_array(p.c);
        d["d"] = to_array(p.d);
        d["delta_log"] = to_array(p.delta_log);
        d["a_bar"] = to_array(disc.a_bar);
        d["b_bar"] = to_array(disc.b_bar);
        return d;
      },
      py::arg("width"), py::arg("state"), py::arg("seed") = 0,
      "Freshly initialised SSM core parameters and their discretisation.");

  m.def(
      "scan",
      [](const Array<double>& a_bar, const Array<double>& b_bar, const Array<double>& c,
         const Array<double>& d, const Array<double>& x, bool parallel, int threads) {
        auto ab = to_tensor(a_bar), bb = to_tensor(b_bar), ct = to_tensor(c), dt = to_tensor(d),
             xt = to_tensor(x);
        py::gil_scoped_release release;
        auto y = parallel ? scan_parallel(ab, bb, ct, dt, xt, threads) : scan_sequential(ab, bb, ct, dt, xt);
        py::gil_scoped_acquire acquire;
        return to_array(y);
      },
      py::arg("a_bar"), py::arg("b_bar"), py::arg("c"), py::arg("d"), py::arg("x"),
      py::arg("parallel") = false, py::arg("threads") = 1,
      "Diagonal selective scan y = C h + D x over an L x E input.");

  m.def(
      "focal_loss",
      [](const Array<double>& logits, const std::vector<int>& labels, double alpha, double gamma) {
        FocalCfg cfg;
        cfg.alpha = alpha;
        cfg.gamma = gamma;
        Tape<double> tape;
        return focal_loss(tape, to_tensor(logits), labels, cfg).item();
      },
      py::arg("logits"), py::arg("labels"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);

  m.def(
      "cross_entropy",
      [](const Array<double>& logits, const std::vector<int>& labels) {
        Tape<double> tape;
        return cross_entropy(tape, to_tensor(logits), labels).item();
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "train",
      [](const std::string& config_json) {
        RunConfig cfg = run_config_from_json(parse_json(config_json));
        RunResult res;
        {
          py::gil_scoped_release release;
          res = run_training(cfg);
        }
        py::list history;
        for (const auto& e : res.history) history.append(metrics_dict(e));
        py::dict out;
        out["history"] = history;
        out["model"] = res.model_manifest;
        out["config"] = to_json(res.effective).dump();
        return out;
      },
      py::arg("config_json"),
      "Runs a training job from a JSON run configuration and writes its artifacts.");

  m.def(
      "gradcheck",
      [](const std::string& scope, std::uint64_t seed) {
        py::list rows;
        for (const auto& r : gradcheck_suite(scope, seed)) {
          py::dict d;
          d["scope"] = r.scope;
          d["name"] = r.name;
          d["max_rel_err"] = r.report.max_rel_err;
          d["pass"] = r.report.pass;
          rows.append(d);
        }
        return rows;
      },
      py::arg("scope") = "ops", py::arg("seed") = 7);

  py::class_<PyModel>(m, "Model")
      .def_static("load", &PyModel::load, py::arg("manifest"))
      .def_static("create", &PyModel::create, py::arg("config_json") = "{}", py::arg("seed") = 42)
      .def("predict", &PyModel::predict, py::arg("voxels"))
      .def("forward", &PyModel::forward, py::arg("voxels"))
      .def("shape_trace", &PyModel::shape_trace, py::arg("voxels"))
      .def("parameter_counts", &PyModel::parameter_counts)
      .def("checksum", &PyModel::checksum);
}
