#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cpift/coreid.hpp"
#include "cpift/error.hpp"
#include "cpift/fusion.hpp"
#include "cpift/grouping.hpp"
#include "cpift/pipeline.hpp"
#include "cpift/tensorstore.hpp"

namespace py = pybind11;
using namespace cpift;

namespace {

CoreRegion region_of(const std::vector<std::size_t>& indices, std::size_t dim) {
  CoreRegion r;
  r.total_dim = dim;
  r.indices = indices;
  return r;
}

}  // namespace

PYBIND11_MODULE(_cpift, m) {
  m.doc() = "Core parameter isolation fine-tuning";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<TensorMeta>(m, "TensorMeta")
      .def_readonly("name", &TensorMeta::name)
      .def_readonly("shape", &TensorMeta::shape)
      .def_readonly("offset_elems", &TensorMeta::offset_elems)
      .def_readonly("len_elems", &TensorMeta::len_elems);

  py::class_<ParameterSnapshot>(m, "ParameterSnapshot")
      .def_static(
          "from_tensors",
          [](const std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>>&
                 tensors,
             const SnapshotMeta& meta) {
            std::vector<TensorSpec> specs;
            for (const auto& [name, t] : tensors) specs.push_back({name, t.first, t.second});
            return ParameterSnapshot::from_tensors(std::move(specs), meta);
          },
          py::arg("tensors"), py::arg("meta") = SnapshotMeta{})
      .def_property_readonly("tensors", &ParameterSnapshot::tensors)
      .def_property_readonly("dim", &ParameterSnapshot::dim)
      .def_property_readonly("meta", &ParameterSnapshot::meta)
      .def_property_readonly(
          "data",
          [](const ParameterSnapshot& s) {
            return std::vector<double>(s.data().begin(), s.data().end());
          })
      .def("values",
           [](const ParameterSnapshot& s, const std::string& name) {
             auto v = s.values(name);
             return std::vector<double>(v.begin(), v.end());
           })
      .def("global_index", &ParameterSnapshot::global_index)
      .def("bit_identical", &ParameterSnapshot::bit_identical)
      .def("__len__", &ParameterSnapshot::dim);

  m.def("read_snapshot", &read_snapshot, py::arg("path"));
  m.def("write_snapshot", &write_snapshot, py::arg("snapshot"), py::arg("path"));

  m.def("core_size", &core_size, py::arg("p_percent"), py::arg("total_dim"));
  m.def(
      "select_core",
      [](const std::vector<double>& magnitudes, double p_percent) {
        return select_core({"", magnitudes}, {p_percent, 1}).indices;
      },
      py::arg("magnitudes"), py::arg("p_percent"));

  m.def(
      "jaccard",
      [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t dim) {
        return jaccard(region_of(a, dim), region_of(b, dim));
      },
      py::arg("a"), py::arg("b"), py::arg("dim"));

  m.def(
      "group_tasks",
      [](const std::map<std::string, std::vector<std::size_t>>& cores, std::size_t dim,
         double tau, const std::string& order, std::uint64_t seed) {
        std::vector<std::string> ids;
        std::vector<CoreRegion> regions;
        for (const auto& [id, idx] : cores) {
          ids.push_back(id);
          regions.push_back(region_of(idx, dim));
        }
        GroupingConfig cfg{tau, parse_order_strategy(order), seed};
        return connected_components(similarity_matrix(regions), ids, cfg).groups;
      },
      py::arg("cores"), py::arg("dim"), py::arg("tau") = 0.1, py::arg("order") = "random",
      py::arg("seed") = 0);

  m.def(
      "slerp",
      [](const std::vector<double>& a, const std::vector<double>& b, double omega,
         double epsilon_rad) {
        SlerpResult r = slerp_vec(a, b, omega, epsilon_rad);
        return py::make_tuple(r.values, r.slerp, r.angle_rad);
      },
      py::arg("a"), py::arg("b"), py::arg("omega") = 0.5, py::arg("epsilon_rad") = 1e-4);

  // Configs and records cross the boundary as JSON text.
  m.def(
      "resolve_config",
      [](const std::string& text) { return config_to_json(config_from_json(json::parse(text))).dump(); },
      py::arg("config_json"));
  m.def(
      "run_pipeline",
      [](const std::string& text) {
        PipelineConfig cfg = config_from_json(json::parse(text));
        py::gil_scoped_release release;
        return run_pipeline(cfg).to_json().dump();
      },
      py::arg("config_json"));
  m.def(
      "run_phase",
      [](const std::string& text, const std::string& phase) {
        PipelineConfig cfg = config_from_json(json::parse(text));
        py::gil_scoped_release release;
        return run_phase(cfg, phase).to_json().dump();
      },
      py::arg("config_json"), py::arg("phase"));
  m.def(
      "render_report",
      [](const std::filesystem::path& output_dir, const std::string& format) {
        return render_report(load_record(output_dir), parse_report_format(format));
      },
      py::arg("output_dir"), py::arg("format") = "json");
}
