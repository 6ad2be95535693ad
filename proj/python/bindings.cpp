#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "layerfuse/composer.hpp"
#include "layerfuse/error.hpp"
#include "layerfuse/npy.hpp"
#include "layerfuse/ops.hpp"
#include "layerfuse/probe.hpp"
#include "layerfuse/scan.hpp"

namespace py = pybind11;
using namespace layerfuse;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  FloatArray out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_layerfuse, m) {
  m.doc() = "Time-aligned multi-layer feature fusion and linear-probe layer scans.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<IncompleteError>(m, "IncompleteError", PyExc_RuntimeError);

  py::class_<PoolGeometry>(m, "PoolGeometry")
      .def_readonly("input_frames", &PoolGeometry::input_frames)
      .def_readonly("output_frames", &PoolGeometry::output_frames)
      .def_readonly("kernel", &PoolGeometry::kernel)
      .def_readonly("stride", &PoolGeometry::stride)
      .def("__repr__", [](const PoolGeometry& g) {
        return "PoolGeometry(kernel=" + std::to_string(g.kernel) + ", stride=" + std::to_string(g.stride) + ")";
      });

  m.def("plan_pool", &plan_pool, py::arg("input_frames"), py::arg("output_frames"),
        "Kernel/stride reducing input_frames to output_frames; None when input_frames < output_frames.");
  m.def(
      "maxpool_time",
      [](const FloatArray& z, std::size_t output_frames) {
        const Tensor t = to_tensor(z);
        if (t.rank() != 4) throw std::invalid_argument("maxpool_time expects [B, C, F, T]");
        const auto g = plan_pool(t.extent(3), output_frames);
        if (!g) throw std::invalid_argument("output_frames exceeds the input length");
        return to_array(maxpool_time(t, *g));
      },
      py::arg("z"), py::arg("output_frames"));
  m.def("flatten_cf", [](const FloatArray& z) { return to_array(flatten_cf(to_tensor(z))); });
  m.def("concat_features", [](const FloatArray& a, const FloatArray& b) {
    return to_array(concat_features(to_tensor(a), to_tensor(b)));
  });
  m.def("mean_plus_max_time", [](const FloatArray& z) { return to_array(mean_plus_max_time(to_tensor(z))); });

  m.def("load_tensor", [](const std::filesystem::path& p) { return to_array(load_tensor(p)); }, py::arg("path"));
  m.def("write_tensor", [](const std::filesystem::path& p, const FloatArray& a) { write_tensor(p, to_tensor(a)); },
        py::arg("path"), py::arg("array"));

  m.def(
      "load_manifest",
      [](const std::filesystem::path& p) { return manifest_to_json(load_manifest(p)).dump(); }, py::arg("path"),
      "Parse and validate a task manifest; returns its normalized JSON text.");
  m.def(
      "check_manifest",
      [](const std::filesystem::path& p) {
        const auto manifest = load_manifest(p);
        check_manifest_files(manifest);
        std::size_t files = 0;
        for (const auto& s : manifest.samples) {
          for (const auto& [layer, paths] : s.tensors) {
            const auto& record = manifest.model.layer(layer);
            for (const auto& path : paths) {
              const Tensor t = load_tensor(path);
              if (!shape_matches(record.shape, t.shape())) {
                throw DataError(path.string() + ": shape " + shape_string(t.shape()) + " does not match declared " +
                                shape_string(record.shape));
              }
              ++files;
            }
          }
        }
        return files;
      },
      py::arg("path"),
      "Validate a manifest and load every tensor it references against the declared layer shapes; "
      "returns the number of files checked.");

  m.def(
      "time_align",
      [](const FloatArray& z, std::size_t output_frames) {
        const Tensor t = to_tensor(z);
        ModelLayout layout;
        layout.name = "adhoc";
        layout.policy = {TimePolicy::Kind::fixed, output_frames};
        LayerRecord record{"x", t.rank() == 2 ? LayerKind::timeless : LayerKind::conv4d, {}};
        record.shape.assign(t.rank(), std::nullopt);
        return to_array(time_align(record, layout, t).tensor);
      },
      py::arg("z"), py::arg("output_frames"),
      "Align one activation ([B,C,F,T] or time-less [B,D]) to output_frames frames.");

  m.def(
      "compose",
      [](const std::filesystem::path& manifest, const std::vector<std::string>& layers, std::size_t workers) {
        const auto set = compose_embeddings(load_manifest(manifest), layers, workers);
        FloatArray values(std::vector<py::ssize_t>{static_cast<py::ssize_t>(set.rows()), static_cast<py::ssize_t>(set.dims)});
        std::copy(set.values.begin(), set.values.end(), values.mutable_data());
        std::vector<std::string> splits;
        for (auto s : set.splits) splits.push_back(to_string(s));
        py::dict out;
        out["embeddings"] = values;
        out["ids"] = set.ids;
        out["labels"] = set.labels;
        out["splits"] = splits;
        out["provenance"] = set.provenance;
        return out;
      },
      py::arg("manifest"), py::arg("layers"), py::arg("workers") = 1,
      "Embed every sample of a manifest from one layer or a fused (mid, late) pair.");

  m.def(
      "evaluate",
      [](const FloatArray& features, const std::vector<std::string>& labels, const std::vector<std::string>& splits,
         const std::string& config_json) {
        if (features.ndim() != 2) throw std::invalid_argument("features must be [N, D]");
        EmbeddingSet set;
        set.task = "python";
        set.dims = static_cast<std::size_t>(features.shape(1));
        set.values.assign(features.data(), features.data() + features.size());
        set.labels = labels;
        for (std::size_t i = 0; i < labels.size(); ++i) set.ids.push_back(std::to_string(i));
        for (const auto& s : splits) set.splits.push_back(parse_split(s));
        if (set.ids.size() != static_cast<std::size_t>(features.shape(0)) || set.splits.size() != set.ids.size()) {
          throw std::invalid_argument("features, labels and splits must have the same length");
        }
        const auto config = ProbeConfig::from_json(nlohmann::json::parse(config_json));
        return evaluate(set, config).to_json().dump();
      },
      py::arg("features"), py::arg("labels"), py::arg("splits"), py::arg("config_json") = "{}",
      "Linear-probe evaluation; returns the outcome as JSON text.");

  m.def(
      "select_layers",
      [](const std::string& matrix_csv, const std::vector<std::string>& late_tasks) {
        const auto matrix = AccuracyMatrix::from_csv(matrix_csv);
        TaskGroups groups;
        groups.late.insert(late_tasks.begin(), late_tasks.end());
        for (const auto& t : matrix.tasks()) {
          if (!groups.late.contains(t)) groups.mid.insert(t);
        }
        const auto s = select_layers(matrix, groups);
        return py::make_tuple(s.mid, s.late);
      },
      py::arg("matrix_csv"), py::arg("late_tasks"));
}
