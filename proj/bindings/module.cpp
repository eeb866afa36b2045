#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "foundry/pipeline.hpp"

namespace py = pybind11;

namespace {

// Thin, string-oriented wrappers: python callers get trace text, counter
// dicts, and report text rather than the full C++ object graph.

struct SaveOutcome {
    std::string archive_dir;
    std::map<uint32_t, std::string> traces;
    std::map<std::string, uint64_t> counters;
    uint32_t total_graphs = 0;
    uint32_t template_count = 0;
    double update_served_fraction = 0.0;
};

struct ServingHandle {
    explicit ServingHandle(foundry::ServingContext&& sc) : sc_(std::move(sc)) {}

    std::string replay(uint32_t batch) { return sc_.replay(batch).to_text(); }
    std::vector<uint32_t> batches() const { return sc_.batches(); }
    std::map<std::string, uint64_t> counters() const {
        const auto snapshot = sc_.counters();
        return {snapshot.begin(), snapshot.end()};
    }
    uint32_t template_count() const { return sc_.manifest().grouping.template_count; }

    foundry::ServingContext sc_;
};

SaveOutcome do_save(const foundry::WorkloadSpec& spec, const std::string& out,
                    bool emit_json_graphs) {
    foundry::SaveOptions options;
    options.emit_json_graphs = emit_json_graphs;
    foundry::SaveResult result = foundry::save(spec, out, options);
    SaveOutcome outcome;
    outcome.archive_dir = result.archive_dir.string();
    for (const auto& [batch, trace] : result.traces) {
        outcome.traces.emplace(batch, trace.to_text());
    }
    outcome.counters = {result.counters.begin(), result.counters.end()};
    outcome.total_graphs = result.manifest.grouping.total_graphs;
    outcome.template_count = result.manifest.grouping.template_count;
    outcome.update_served_fraction = result.manifest.grouping.update_served_fraction();
    return outcome;
}

ServingHandle do_load(const std::string& archive, uint32_t rank, uint32_t world,
                      bool preallocate) {
    foundry::LoadOptions options;
    options.rank = rank;
    options.world = world;
    options.preallocate = preallocate;
    return ServingHandle(foundry::load(archive, options));
}

std::map<std::string, double> do_bench(const foundry::WorkloadSpec& spec,
                                       const std::string& mode) {
    const foundry::BenchReport report = foundry::bench(spec, mode);
    return {
        {"wall_ms", report.wall_ms},
        {"archive_bytes", static_cast<double>(report.archive_bytes)},
        {"update_served_fraction", report.update_served_fraction},
        {"construction_calls", static_cast<double>(report.construction_call_count)},
        {"update_calls", static_cast<double>(report.update_call_count)},
        {"capture_calls", static_cast<double>(report.capture_call_count)},
    };
}

}  // namespace

PYBIND11_MODULE(_foundry, m) {
    m.doc() = "SAVE/LOAD materialization of simulated execution graphs";
    m.attr("__version__") = "0.1.0";

    py::register_exception<foundry::Error>(m, "FoundryError");

    py::class_<foundry::WorkloadSpec>(m, "WorkloadSpec")
        .def_readwrite("seed", &foundry::WorkloadSpec::seed)
        .def_readwrite("batch_max", &foundry::WorkloadSpec::batch_max)
        .def_readwrite("layers", &foundry::WorkloadSpec::layers)
        .def_readwrite("kernels_per_layer", &foundry::WorkloadSpec::kernels_per_layer)
        .def_readwrite("thresholds", &foundry::WorkloadSpec::thresholds)
        .def("__repr__", [](const foundry::WorkloadSpec& spec) {
            return "<WorkloadSpec B=" + std::to_string(spec.batch_max) + " L=" +
                   std::to_string(spec.layers) + ">";
        });

    py::class_<SaveOutcome>(m, "SaveOutcome")
        .def_readonly("archive_dir", &SaveOutcome::archive_dir)
        .def_readonly("traces", &SaveOutcome::traces)
        .def_readonly("counters", &SaveOutcome::counters)
        .def_readonly("total_graphs", &SaveOutcome::total_graphs)
        .def_readonly("template_count", &SaveOutcome::template_count)
        .def_readonly("update_served_fraction", &SaveOutcome::update_served_fraction);

    py::class_<ServingHandle>(m, "ServingHandle")
        .def("replay", &ServingHandle::replay, py::arg("batch"))
        .def("batches", &ServingHandle::batches)
        .def("counters", &ServingHandle::counters)
        .def("template_count", &ServingHandle::template_count);

    m.def("preset_names", &foundry::preset_names);
    m.def("preset", &foundry::preset, py::arg("name"));
    m.def("workload_from_text",
          [](const std::string& text) { return foundry::WorkloadSpec::parse_text(text); },
          py::arg("text"));
    m.def("spec_text",
          [](const foundry::WorkloadSpec& spec) { return spec.canonical_text(); },
          py::arg("spec"));
    m.def("save", &do_save, py::arg("spec"), py::arg("out"),
          py::arg("emit_json_graphs") = false);
    m.def("load", &do_load, py::arg("archive"), py::arg("rank") = 0, py::arg("world") = 1,
          py::arg("preallocate") = true);
    m.def("inspect_text",
          [](const std::string& archive) { return foundry::inspect(archive).to_text(); },
          py::arg("archive"));
    m.def("inspect_graph_json",
          [](const std::string& archive, uint32_t batch) {
              return foundry::inspect_graph_json(archive, batch);
          },
          py::arg("archive"), py::arg("batch"));
    m.def("diff_archives",
          [](const std::string& a, const std::string& b) {
              const auto report = foundry::diff_archives(a, b);
              return py::make_tuple(report.identical, report.to_text());
          },
          py::arg("a"), py::arg("b"));
    m.def("bench", &do_bench, py::arg("spec"), py::arg("mode") = "load");
}
