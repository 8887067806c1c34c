#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <optional>
#include <sstream>

#include "hafl/aggregation.hpp"
#include "hafl/config.hpp"
#include "hafl/federation.hpp"
#include "hafl/importance.hpp"
#include "hafl/lora.hpp"
#include "hafl/runner.hpp"
#include "hafl/schemes.hpp"

namespace py = pybind11;
using namespace hafl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Matrix from_numpy(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

py::dict report_to_dict(const RoundReport& r) {
  py::dict d;
  d["round"] = r.round;
  d["sampled"] = r.sampled;
  d["scores"] = r.broadcast_scores;
  d["failed"] = r.failed;
  d["stale_indices"] = r.stale_indices;
  d["no_update"] = r.no_update;
  d["global_acc"] = r.global_acc;
  d["global_loss"] = r.global_loss;
  d["mean_client_acc"] = r.mean_client_acc;
  py::dict classes;
  for (const auto& c : r.client_acc) classes[py::str(c.label)] = c.accuracy;
  d["client_acc"] = classes;
  d["uploaded_params"] = r.uploaded_params;
  d["uploaded_bytes"] = r.uploaded_bytes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hafl, m) {
  m.doc() = "Heterogeneous federated LoRA simulator";

  py::class_<LoraAdapter>(m, "LoraAdapter")
      .def(py::init([](const Array& b, const Array& a, double scale) {
             return LoraAdapter(from_numpy(b), from_numpy(a), scale);
           }),
           py::arg("B"), py::arg("A"), py::arg("scale") = 1.0)
      .def_property_readonly("B", [](const LoraAdapter& x) { return to_numpy(x.B()); })
      .def_property_readonly("A", [](const LoraAdapter& x) { return to_numpy(x.A()); })
      .def_property_readonly("rank", &LoraAdapter::rank)
      .def_property_readonly("scale", &LoraAdapter::scale)
      .def("delta", [](const LoraAdapter& x) { return to_numpy(effective_delta(x)); })
      .def("__eq__", [](const LoraAdapter& x, const LoraAdapter& y) { return x == y; });

  m.def("init_adapter", &init_adapter, py::arg("d"), py::arg("l"), py::arg("rank"),
        py::arg("scale") = 1.0, py::arg("seed") = 0, py::arg("init_std") = kDefaultInitStd);
  m.def("rank1_component", [](const LoraAdapter& a, std::size_t i) {
    auto c = rank1_component(a, i);
    return py::make_tuple(c.b, c.a);
  });
  m.def("upload_size", &upload_size, py::arg("selected"), py::arg("d"), py::arg("l"),
        py::arg("bytes_per_param") = 1);

  py::class_<ImportanceTracker>(m, "ImportanceTracker")
      .def(py::init([](const LoraAdapter& initial, double beta1, double beta2, double eta) {
             return ImportanceTracker(initial, {beta1, beta2, eta});
           }),
           py::arg("initial"), py::arg("beta1") = 0.85, py::arg("beta2") = 0.85, py::arg("eta") = 0.001)
      .def("update", [](ImportanceTracker& t, const Array& b, const Array& a) {
        t.update(from_numpy(b), from_numpy(a));
      })
      .def("scores", [](const ImportanceTracker& t) { return rank1_scores(t); })
      .def_property_readonly("smoothed_B", [](const ImportanceTracker& t) { return to_numpy(t.smoothed_B()); })
      .def_property_readonly("smoothed_A", [](const ImportanceTracker& t) { return to_numpy(t.smoothed_A()); })
      .def_property_readonly("rounds_seen", &ImportanceTracker::rounds_seen);

  m.def("topk_indices", &topk_indices, py::arg("scores"), py::arg("k"));
  m.def("trained_count", &trained_count, py::arg("freeze_ratio"), py::arg("r_max"));

  py::class_<UploadPayload>(m, "UploadPayload")
      .def(py::init([](ClientId id, IndexSet selected, const Array& b_cols, const Array& a_rows,
                       double norm_z) {
             return UploadPayload{id, std::move(selected), from_numpy(b_cols), from_numpy(a_rows), norm_z};
           }),
           py::arg("client_id"), py::arg("selected"), py::arg("B_cols"), py::arg("A_rows"), py::arg("norm_z"))
      .def_readonly("client_id", &UploadPayload::client_id)
      .def_readonly("selected", &UploadPayload::selected)
      .def_readonly("norm_z", &UploadPayload::norm_z);

  m.def("extract_upload", [](const LoraAdapter& local, ClientId id, IndexSet selected) {
    IndexSet frozen;
    for (std::size_t i = 0; i < local.rank(); ++i)
      if (!std::binary_search(selected.begin(), selected.end(), i)) frozen.push_back(i);
    return extract_upload(local, ClientPlan{id, std::move(selected), std::move(frozen), PlanMode::kFreezing});
  }, py::arg("local"), py::arg("client_id"), py::arg("selected"));

  m.def("aggregate_adaptive",
        [](const LoraAdapter& prev, const std::vector<UploadPayload>& payloads, bool zero_stale) {
          AggregationPolicy policy;
          if (zero_stale) policy.stale_index_rule = StaleIndexRule::kZero;
          return aggregate_adaptive(GlobalLora{prev, 0}, payloads, policy).adapter;
        },
        py::arg("prev"), py::arg("payloads"), py::arg("zero_stale") = false);
  m.def("aggregate_zero_padding",
        [](const LoraAdapter& prev, const std::vector<UploadPayload>& payloads) {
          return aggregate_zero_padding(GlobalLora{prev, 0}, payloads).adapter;
        },
        py::arg("prev"), py::arg("payloads"));

  m.def("parse_config", [](const std::string& text) { return serialize_config(parse_config_text(text)); },
        py::arg("text"), "Validate config text and return it fully resolved.");
  m.def("config_keys", &config_keys);

  m.def("simulate",
        [](const std::string& text, std::uint64_t seed) {
          const auto cfg = parse_config_text(text);
          std::optional<ExperimentResult> result;
          {
            py::gil_scoped_release release;
            result.emplace(simulate(cfg.federation(seed), prepare_data(cfg, seed)));
          }
          py::list reports;
          for (const auto& r : result->reports) reports.append(report_to_dict(r));
          return py::make_tuple(reports, result->final_state.global.adapter);
        },
        py::arg("config_text"), py::arg("seed") = 0,
        "Run one seed; returns (per-round reports, final global adapter).");

  m.def("run",
        [](const std::string& text) {
          const auto cfg = parse_config_text(text);
          std::ostringstream err;
          int rc;
          {
            py::gil_scoped_release release;
            rc = cmd_run(cfg, err);
          }
          if (rc != 0) throw std::runtime_error(err.str());
        },
        py::arg("config_text"), "Run all seeds and write CSV, summary and round log to out_dir.");

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
}
