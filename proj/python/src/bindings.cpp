// SPDX-License-Identifier: Apache-2.0
//
// Python module `fod._core`: numpy-facing wrappers over the library.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "fod/config.hpp"
#include "fod/errors.hpp"
#include "fod/pipeline.hpp"
#include "fod/reference_bank.hpp"
#include "fod/scoring.hpp"
#include "fod/synthetic.hpp"
#include "fod/tensor_io.hpp"

namespace py = pybind11;
using namespace fod;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::list to_list(const std::vector<Tensor>& ts) {
  py::list out;
  for (const auto& t : ts) out.append(to_numpy(t));
  return out;
}

CorrelationMatrix constant_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("correlation matrices must be 2-D");
  return constant(from_numpy(a));
}

py::dict dataset_dict(const Dataset& ds) {
  py::dict d;
  d["train"] = to_list(ds.train);
  d["test"] = to_list(ds.test);
  d["masks"] = to_list(ds.masks);
  d["labels"] = ds.labels;
  std::vector<std::string> kinds;
  for (AnomalyKind k : ds.kinds) kinds.emplace_back(to_string(k));
  d["kinds"] = kinds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Correlation-supervised transformer anomaly detection";

  auto base = py::register_exception<Error>(m, "FodError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<MetricError>(m, "MetricError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<EmptyBankError>(m, "EmptyBankError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &RunConfig::parse, py::arg("text"))
      .def_static("load", [](const std::string& path) { return RunConfig::load(path); }, py::arg("path"))
      .def_static("keys", &RunConfig::keys)
      .def("set", [](RunConfig& c, const std::string& k, const std::string& v) { c.set(k, v); }, py::arg("key"),
           py::arg("value"))
      .def("validate", &RunConfig::validate)
      .def("to_text", &RunConfig::to_text)
      .def_readwrite("seed", &RunConfig::seed)
      .def("__repr__", [](const RunConfig& c) { return "<fod.Config seed=" + std::to_string(c.seed) + ">"; });

  m.def("generate_dataset", [](const RunConfig& c) { return dataset_dict(generate_dataset(c.data_spec())); },
        py::arg("config"), "Synthetic train/test images, masks, labels and anomaly kinds.");

  m.def(
      "extract_features",
      [](const Array& image, std::uint64_t seed, std::size_t proj_dim, bool context) {
        const auto levels = extract_features(from_numpy(image), seed, proj_dim, context);
        return py::make_tuple(to_numpy(levels[0].features), to_numpy(levels[1].features));
      },
      py::arg("image"), py::arg("seed") = 0, py::arg("proj_dim") = 32, py::arg("context") = true,
      "Patch features [N, d] of a [C, H, W] image at strides 8 and 16.");

  m.def(
      "run",
      [](const RunConfig& c, const std::function<void(int, std::size_t, double)>& on_epoch) {
        EpochCallback cb;
        if (on_epoch)
          cb = [&](int level, const EpochRecord& r) {
            py::gil_scoped_acquire gil;
            on_epoch(level, r.epoch, r.mean.l_rec);
          };
        EvalResult r;
        {
          py::gil_scoped_release nogil;
          r = run_pipeline(c, cb);
        }
        py::dict d;
        d["image_auroc"] = r.image_auroc;
        d["pixel_auroc"] = r.pixel_auroc;
        d["image_scores"] = r.image_scores;
        py::list maps;
        for (const auto& mp : r.maps) maps.append(to_numpy(mp.values));
        d["maps"] = maps;
        return d;
      },
      py::arg("config"), py::arg("on_epoch") = nullptr,
      "Generate, extract, build banks, train, score and evaluate in memory.");

  m.def(
      "auroc",
      [](const std::vector<double>& s, const std::vector<int>& y) { return auroc(s, y); }, py::arg("scores"),
      py::arg("labels"));

  m.def(
      "combine_rec_div", [](const Array& rec, const Array& div) {
        return to_numpy(combine_rec_div(from_numpy(rec), from_numpy(div)));
      },
      py::arg("rec"), py::arg("div"));

  m.def(
      "symmetric_kl",
      [](const Array& t, const Array& s) {
        return to_numpy(symmetric_kl(constant_matrix(t), constant_matrix(s)).value());
      },
      py::arg("t"), py::arg("s"), "Per-row symmetric KL of two row-stochastic matrices.");

  m.def(
      "correlation_entropy",
      [](const Array& s) { return correlation_entropy(constant_matrix(s)).item(); }, py::arg("s"));

  m.def(
      "target_correlation",
      [](std::size_t height, std::size_t width) {
        return to_numpy(target_correlation({height, width}, KernelVariance::unit("kernel")).value());
      },
      py::arg("height"), py::arg("width"), "Row-normalized RBF prior over a grid at unit kernel width.");

  m.def(
      "coreset_indices",
      [](const Array& pool, std::size_t budget, std::size_t start) {
        return coreset_indices(from_numpy(pool), budget, start);
      },
      py::arg("pool"), py::arg("budget"), py::arg("start") = 0);

  m.def("encode_tensor", [](const Array& a) { return py::bytes(encode_tensor(from_numpy(a))); }, py::arg("array"));
  m.def(
      "decode_tensor", [](const py::bytes& b) { return to_numpy(decode_tensor(std::string(b))); }, py::arg("data"));
  m.def(
      "write_tensor", [](const std::string& path, const Array& a) { write_tensor(path, from_numpy(a)); },
      py::arg("path"), py::arg("array"));
  m.def("read_tensor", [](const std::string& path) { return to_numpy(read_tensor(path)); }, py::arg("path"));
}
