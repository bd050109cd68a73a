#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "sliceforge/cli.hpp"
#include "sliceforge/dataset.hpp"
#include "sliceforge/error.hpp"
#include "sliceforge/experiment.hpp"
#include "sliceforge/layers.hpp"
#include "sliceforge/model.hpp"
#include "sliceforge/tensor.hpp"
#include "sliceforge/training.hpp"
#include "sliceforge/validation.hpp"

namespace py = pybind11;
using namespace sliceforge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  if (dims.empty()) dims.push_back(1);
  return Tensor(Shape(dims), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  py::array_t<float> out(t.shape().dims());
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

Granularity granularity_of(const std::string& s) { return parse_granularity(s); }

}  // namespace

PYBIND11_MODULE(_sliceforge, m) {
  m.doc() = "Separable-CNN slice classifier, k-fold validation and metrics";
  m.attr("__version__") = "0.1.0";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<LeakageError>(m, "LeakageError", base.ptr());

  // tensors
  m.def("tensor_read", [](const std::filesystem::path& p) { return to_array(tensor_read(p)); });
  m.def("tensor_write", [](const std::filesystem::path& p, const FloatArray& a) { tensor_write(p, to_tensor(a)); });
  m.def("matmul", [](const FloatArray& a, const FloatArray& b) { return to_array(matmul(to_tensor(a), to_tensor(b))); });
  m.def(
      "sepconv2d",
      [](const FloatArray& x, const FloatArray& depthwise, const FloatArray& pointwise, const FloatArray& bias,
         int stride, const std::string& padding) {
        if (padding != "same" && padding != "valid") throw InvalidArgument("padding must be same or valid");
        SepConvParams<float> p{to_tensor(depthwise), to_tensor(pointwise), to_tensor(bias), stride,
                               padding == "valid" ? Padding::kValid : Padding::kSame};
        return to_array(sepconv2d(to_tensor(x), p).output);
      },
      py::arg("x"), py::arg("depthwise"), py::arg("pointwise"), py::arg("bias"), py::arg("stride") = 1,
      py::arg("padding") = "same");

  // model
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_height", &ModelConfig::input_height)
      .def_readwrite("input_width", &ModelConfig::input_width)
      .def_readwrite("input_channels", &ModelConfig::input_channels)
      .def_readwrite("channel_plan", &ModelConfig::channel_plan)
      .def_readwrite("stride_plan", &ModelConfig::stride_plan)
      .def_readwrite("kernel", &ModelConfig::kernel)
      .def_readwrite("hidden_units", &ModelConfig::hidden_units)
      .def_readwrite("dropout_rate", &ModelConfig::dropout_rate)
      .def_readwrite("threshold", &ModelConfig::threshold)
      .def("validate", &ModelConfig::validate)
      .def("block_output_size", &ModelConfig::block_output_size)
      .def("to_dict", [](const ModelConfig& c) { return to_python(nlohmann::json(c)); });

  py::class_<Model>(m, "Model")
      .def_readonly("config", &Model::config)
      .def("parameter_count", [](const Model& md) { return parameter_count(md.config); })
      .def(
          "forward",
          [](const Model& md, const FloatArray& batch) {
            return to_array(forward(md, to_tensor(batch), Mode::kInfer).probs);
          },
          py::arg("batch"), "Inference-mode probabilities, one per sample.")
      .def(
          "predict",
          [](const Model& md, const FloatArray& batch, double threshold) {
            return predict_labels(forward(md, to_tensor(batch), Mode::kInfer).probs, threshold);
          },
          py::arg("batch"), py::arg("threshold") = 0.5)
      .def("activation",
           [](const Model& md, const FloatArray& input, std::size_t block, std::size_t channel) {
             return to_array(extract_activation(md, to_tensor(input), block, channel));
           })
      .def(
          "maximize",
          [](const Model& md, std::size_t block, std::size_t channel, int steps, double step_size,
             std::uint64_t seed) {
            const MaximizeResult r = maximize_activation(md, block, channel, steps, step_size, seed);
            return py::make_tuple(to_array(r.image), r.objective_trace);
          },
          py::arg("block"), py::arg("channel"), py::arg("steps") = 20, py::arg("step_size") = 0.1,
          py::arg("seed") = 0)
      .def("save", [](const Model& md, const std::filesystem::path& p) { save_model(p, md); });

  m.def("build_model", &build_model, py::arg("config") = ModelConfig{}, py::arg("seed") = 0);
  m.def("load_model", &load_model);
  m.def("parameter_count", &parameter_count);

  // data and splits
  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def_readonly("name", &DatasetManifest::name)
      .def_readonly("slice_height", &DatasetManifest::slice_height)
      .def_readonly("slice_width", &DatasetManifest::slice_width)
      .def_property_readonly("subject_ids",
                             [](const DatasetManifest& d) {
                               std::vector<std::string> ids;
                               for (const auto& s : d.subjects) ids.push_back(s.subject_id);
                               return ids;
                             })
      .def("label", [](const DatasetManifest& d, const std::string& id) { return d.subject(id).label; })
      .def("total_slices", &DatasetManifest::total_slices);
  m.def("load_manifest", &load_manifest);
  m.def("generate_synthetic", &generate_synthetic, py::arg("n_per_class"), py::arg("slices_per_subject"),
        py::arg("height"), py::arg("width"), py::arg("seed"), py::arg("out_dir"));

  py::class_<Fold>(m, "Fold").def_readonly("train_ids", &Fold::train_ids).def_readonly("val_ids", &Fold::val_ids);
  py::class_<SplitPlan>(m, "SplitPlan")
      .def_readonly("folds", &SplitPlan::folds)
      .def_readonly("stratified", &SplitPlan::stratified)
      .def("to_dict", [](const SplitPlan& p) { return to_python(nlohmann::json(p)); });
  m.def(
      "kfold_split",
      [](const DatasetManifest& d, std::size_t k, std::uint64_t seed, bool stratified, const std::string& g) {
        return kfold_split(d, k, seed, stratified, granularity_of(g));
      },
      py::arg("manifest"), py::arg("k"), py::arg("seed") = 0, py::arg("stratified") = false,
      py::arg("granularity") = "subject");
  m.def("audit_split", [](const SplitPlan& p, const DatasetManifest& d) {
    return to_python(audit_to_json(audit_split(p, d)));
  });

  // metrics
  m.def(
      "compute_metrics",
      [](std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
        return to_python(metrics_to_json(compute_metrics({tp, fp, tn, fn})));
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));
  m.def("confusion", [](const std::vector<int>& labels, const std::vector<int>& preds) {
    const ConfusionCounts c = count_confusion(labels, preds);
    return py::dict(py::arg("tp") = c.tp, py::arg("fp") = c.fp, py::arg("tn") = c.tn, py::arg("fn") = c.fn);
  });
  m.def("format_mean_std", [](double mean, double std) { return format_mean_std({mean, std}); });
  m.def("format_percent", &format_percent);

  // training utilities
  m.def(
      "clip_gradients",
      [](const std::vector<FloatArray>& grads, double clip_value, double clip_norm) {
        std::vector<Tensor> g;
        for (const auto& a : grads) g.push_back(to_tensor(a));
        clip_gradients(g, clip_value, clip_norm);
        std::vector<py::array_t<float>> out;
        for (const auto& t : g) out.push_back(to_array(t));
        return out;
      },
      py::arg("grads"), py::arg("clip_value") = 0.5, py::arg("clip_norm") = 1.0);
  m.def("bce_loss", [](const FloatArray& logits, const std::vector<int>& labels) {
    const auto r = bce_loss(to_tensor(logits), labels);
    return py::make_tuple(r.loss, to_array(r.grad_logits));
  });

  // command line, returns (exit_code, stdout, stderr)
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "sliceforge");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
