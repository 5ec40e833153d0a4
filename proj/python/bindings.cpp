// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/checkpoint.hpp"
#include "cgdrcn/cli.hpp"
#include "cgdrcn/dataset_io.hpp"
#include "cgdrcn/densitygen.hpp"
#include "cgdrcn/image_io.hpp"
#include "cgdrcn/metrics.hpp"
#include "cgdrcn/synthdata.hpp"
#include "cgdrcn/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace cgdrcn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// 1 x rows x cols (or channels x rows x cols) tensor to a numpy array; single channels drop the axis.
Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  if (t.channels() != 1) shape.push_back(t.channels());
  shape.push_back(t.rows());
  shape.push_back(t.cols());
  Array out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

// H x W x 3 array in [0, 1] to a 3 x H x W tensor.
Tensor image_from_numpy(const Array& img) {
  if (img.ndim() != 3 || img.shape(2) != 3) throw std::invalid_argument("image must have shape (H, W, 3)");
  const auto h = static_cast<int>(img.shape(0));
  const auto w = static_cast<int>(img.shape(1));
  Tensor t(3, h, w);
  auto v = img.unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) t.at(c, r, col) = v(r, col, c);
  return t;
}

Array image_to_numpy(const Tensor& t) {
  Array out({t.rows(), t.cols(), t.channels()});
  auto v = out.mutable_unchecked<3>();
  for (int c = 0; c < t.channels(); ++c)
    for (int r = 0; r < t.rows(); ++r)
      for (int col = 0; col < t.cols(); ++col) v(r, col, c) = t.at(c, r, col);
  return out;
}

// Rows of (x, y) or (x, y, width, height).
std::vector<HeadAnnotation> heads_from_numpy(const Array& a) {
  if (a.size() == 0) return {};
  if (a.ndim() != 2 || (a.shape(1) != 2 && a.shape(1) != 4))
    throw std::invalid_argument("heads must have shape (N, 2) or (N, 4)");
  auto v = a.unchecked<2>();
  std::vector<HeadAnnotation> heads(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    HeadAnnotation& h = heads[static_cast<std::size_t>(i)];
    h.x = v(i, 0);
    h.y = v(i, 1);
    if (a.shape(1) == 4) {
      h.width = v(i, 2);
      h.height = v(i, 3);
    }
  }
  return heads;
}

Array heads_to_numpy(const std::vector<HeadAnnotation>& heads) {
  Array out({static_cast<py::ssize_t>(heads.size()), py::ssize_t{4}});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto k = static_cast<py::ssize_t>(i);
    v(k, 0) = heads[i].x;
    v(k, 1) = heads[i].y;
    v(k, 2) = heads[i].width;
    v(k, 3) = heads[i].height;
  }
  return out;
}

Weather parse_weather(const std::string& s) {
  for (Weather w : {Weather::normal, Weather::fog_haze, Weather::rain, Weather::snow})
    if (to_string(w) == s) return w;
  throw std::invalid_argument("unknown weather '" + s + "'");
}

std::optional<Split> parse_split(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  const auto split = split_from_string(*s);
  if (!split) throw std::invalid_argument("unknown split '" + *s + "'");
  return split;
}

DensityConfig density_config(double sigma, bool adaptive) {
  return {sigma, adaptive ? SigmaMode::adaptive : SigmaMode::fixed};
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::vector<Sample> samples(const fs::path& root, std::optional<Split> split) {
  std::vector<Sample> out;
  for (DatasetEntry& e : load_dataset(root, split)) {
    Sample s;
    s.annotation = std::move(e.annotation);
    s.image_path = std::move(e.image_path);
    out.push_back(std::move(s));
  }
  return out;
}

RunSettings settings_of(const KeyValues& kv) {
  try {
    return resolve_settings({}, kv);
  } catch (const UsageError& e) {
    throw std::invalid_argument(e.what());
  }
}

py::dict pyramid_to_dict(const PredictionPyramid& p) {
  py::dict density, confidence;
  for (int level = 3; level <= 6; ++level) density[py::int_(level)] = to_numpy(p.density(level));
  for (int level = 3; level <= 5; ++level) confidence[py::int_(level)] = to_numpy(p.confidence(level));
  if (p.cm6) confidence[py::int_(6)] = to_numpy(*p.cm6);
  py::dict out;
  out["density"] = density;
  out["confidence"] = confidence;
  out["output_level"] = p.output_level;
  out["count"] = p.output().sum();
  if (p.weather_logits) out["weather_logits"] = std::vector<double>(p.weather_logits->begin(), p.weather_logits->end());
  return out;
}

}  // namespace

PYBIND11_MODULE(_cgdrcn, m) {
  m.doc() = "Confidence-guided deep residual crowd counting.";
  m.attr("__version__") = std::string(kLibraryVersion);

  py::register_exception<AnnotationError>(m, "AnnotationError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<TrainError>(m, "TrainError", PyExc_RuntimeError);

  // ---- density maps ----
  m.def(
      "density_map",
      [](const Array& heads, int width, int height, double sigma, int scale, bool adaptive) {
        const auto h = heads_from_numpy(heads);
        return to_numpy(generate_density_map(h, width, height, density_config(sigma, adaptive), scale).values);
      },
      py::arg("heads"), py::arg("width"), py::arg("height"), py::arg("sigma") = 4.0, py::arg("scale") = 1,
      py::arg("adaptive") = false,
      "Ground-truth density at a downsampling scale in {1, 4, 8, 16, 32}; sums to the head count.");
  m.def(
      "pyramid_targets",
      [](const Array& heads, int width, int height, double sigma, bool adaptive) {
        const auto h = heads_from_numpy(heads);
        py::dict out;
        for (const auto& [level, map] : pyramid_targets(h, width, height, density_config(sigma, adaptive)))
          out[py::int_(level)] = to_numpy(map.values);
        return out;
      },
      py::arg("heads"), py::arg("width"), py::arg("height"), py::arg("sigma") = 4.0, py::arg("adaptive") = false,
      "Targets for levels 3..6.");
  m.def("level_scale", &level_scale, py::arg("level"));

  // ---- metrics ----
  m.def(
      "mae_mse",
      [](const std::vector<double>& gt, const std::vector<double>& pred) {
        const ErrorMetrics e = mae_mse(gt, pred);
        return py::make_tuple(e.mae, e.mse);
      },
      py::arg("gt"), py::arg("pred"), "Mean absolute error and root mean squared error.");
  m.def(
      "density_band", [](double count) { return std::string(to_string(density_band(count))); }, py::arg("count"));

  // ---- annotations ----
  m.def(
      "dataset_stats",
      [](const fs::path& root, std::optional<std::string> split) {
        return parse_json(stats_to_json(compute_stats(annotations_of(load_dataset(root, parse_split(split))))));
      },
      py::arg("root"), py::arg("split") = py::none(), "Image and annotation tabulation of a dataset directory.");

  // ---- synthetic data ----
  m.def(
      "synth_scene",
      [](int n_heads, int width, int height, std::uint64_t seed, const std::string& weather,
         const std::string& placement, double radius_min, double radius_max) {
        SceneSpec s;
        s.n_heads = n_heads;
        s.width = width;
        s.height = height;
        s.seed = seed;
        s.weather = parse_weather(weather);
        if (placement == "clustered") {
          s.placement = Placement::clustered;
        } else if (placement != "uniform") {
          throw std::invalid_argument("placement must be 'uniform' or 'clustered'");
        }
        s.radius_min = radius_min;
        s.radius_max = radius_max;
        Scene scene = generate_scene(s);
        return py::make_tuple(image_to_numpy(scene.image), heads_to_numpy(scene.annotation.heads));
      },
      py::arg("n_heads"), py::arg("width") = 128, py::arg("height") = 128, py::arg("seed") = 0,
      py::arg("weather") = "normal", py::arg("placement") = "uniform", py::arg("radius_min") = 2.0,
      py::arg("radius_max") = 4.0, "Returns (image (H, W, 3) in [0, 1], heads (N, 4) as x, y, width, height).");

  // ---- model ----
  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& backbone, const std::string& variant, std::uint64_t seed,
                       bool confidence_at_level6) {
             ModelConfig c;
             const auto kind = backbone_from_string(backbone);
             if (!kind) throw std::invalid_argument("unknown backbone '" + backbone + "'");
             const auto v = variant_from_string(variant);
             if (!v) throw std::invalid_argument("unknown variant '" + variant + "'");
             c.backbone.kind = *kind;
             c.variant = *v;
             c.seed = seed;
             c.confidence_at_level6 = confidence_at_level6;
             return create_model(c);
           }),
           py::arg("backbone") = "tiny", py::arg("variant") = "ureb", py::arg("seed") = 0,
           py::arg("confidence_at_level6") = false)
      .def_static(
          "load", [](const fs::path& path) { return load_checkpoint(path).model; }, py::arg("path"))
      .def(
          "save", [](Model& self, const fs::path& path) { save_checkpoint(path, self); }, py::arg("path"))
      .def_property_readonly("backbone", [](const Model& self) { return std::string(to_string(self.config().backbone.kind)); })
      .def_property_readonly("variant", [](const Model& self) { return std::string(to_string(self.config().variant)); })
      .def_property_readonly("num_parameters",
                             [](const Model& self) {
                               std::size_t n = 0;
                               for (const Tensor& w : self.weights()) n += w.size();
                               return n;
                             })
      .def(
          "forward",
          [](const Model& self, const Array& image) {
            const Tensor t = normalize_for_network(image_from_numpy(image));
            PredictionPyramid p;
            {
              py::gil_scoped_release release;
              p = self.forward(t);
            }
            return pyramid_to_dict(p);
          },
          py::arg("image"), "Pyramid outputs for an (H, W, 3) image in [0, 1]; H and W must be multiples of 32.")
      .def(
          "count",
          [](const Model& self, const Array& image, int resize_min, int resize_max) {
            TrainConfig c;
            c.resize_min = resize_min;
            c.resize_max = resize_max;
            const Tensor t = image_from_numpy(image);
            py::gil_scoped_release release;
            return count_image(self, t, c);
          },
          py::arg("image"), py::arg("resize_min") = 512, py::arg("resize_max") = 2048,
          "Full-image count with resizing, padding and tiling.");

  m.def(
      "train",
      [](Model& model, const fs::path& data, const KeyValues& settings) {
        const RunSettings s = settings_of(settings);
        const std::vector<Sample> all = samples(data, std::nullopt);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(model, all, s.train, s.loss);
        }
        py::list trace;
        for (const StepRecord& step : r.trace) {
          py::dict d;
          d["step"] = step.step;
          d["total"] = step.loss.total;
          d["density"] = step.loss.density;
          d["confidence"] = step.loss.confidence;
          d["weather"] = step.loss.weather;
          trace.append(d);
        }
        py::list vals;
        for (const ValPoint& v : r.validations) vals.append(py::make_tuple(v.step, v.mae));
        py::dict out;
        out["trace"] = trace;
        out["validations"] = vals;
        out["best_step"] = r.best_step;
        out["best_val_mae"] = r.best_val_mae;
        return out;
      },
      py::arg("model"), py::arg("data"), py::arg("settings") = KeyValues{},
      "Trains in place on a dataset directory. `settings` uses the config-file keys.");
  m.def(
      "evaluate",
      [](const Model& model, const fs::path& data, const std::string& split, const KeyValues& settings) {
        const RunSettings s = settings_of(settings);
        const std::vector<Sample> part = samples(data, parse_split(split));
        EvalReport report;
        {
          py::gil_scoped_release release;
          report = evaluate(model, part, s.train);
        }
        return parse_json(report_to_json(report));
      },
      py::arg("model"), py::arg("data"), py::arg("split") = "test", py::arg("settings") = KeyValues{},
      "Per-category MAE/MSE report as a dict.");

  // ---- command line ----
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"cgdrcn"};
        for (const std::string& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI invocation in-process; returns (exit code, stdout, stderr).");
}
