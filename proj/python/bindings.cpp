// Python surface for the experiment library. Mirrors what the CLI can do
// (load a config, run a command, write the output triple) plus the metric
// helpers that are useful on their own.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "profusion/config.hpp"
#include "profusion/errors.hpp"
#include "profusion/experiments.hpp"
#include "profusion/metrics.hpp"

namespace py = pybind11;
using namespace profusion;

namespace {

MetricKind metric_from_name(const std::string& s) {
    if (s == "accuracy") return MetricKind::Accuracy;
    if (s == "mse") return MetricKind::Mse;
    throw InputError("unknown metric '" + s + "' (expected accuracy or mse)");
}

} // namespace

PYBIND11_MODULE(_profusion, m) {
    m.doc() = "iterative multimodal fusion: synthetic tasks, fusion variants, "
              "experiment runners";
    m.attr("__version__") = kToolVersion;

    // ConfigError maps to its own type so callers can mirror the CLI's
    // exit-code-2 semantics; everything else the library throws on purpose
    // derives from Error.
    auto base = py::register_exception<Error>(m, "ProfusionError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def_property(
            "kind",
            [](const ExperimentConfig& c) { return experiment_kind_name(c.kind); },
            [](ExperimentConfig& c, const std::string& s) {
                c.kind = experiment_kind_from_name(s);
            })
        .def_readwrite("trials", &ExperimentConfig::trials)
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def_readwrite("out_dir", &ExperimentConfig::out_dir)
        .def_readwrite("hidden", &ExperimentConfig::hidden)
        .def_readwrite("r", &ExperimentConfig::R)
        .def_readwrite("context_dim", &ExperimentConfig::context_dim)
        .def_property_readonly("config_hash", &config_hash_hex)
        .def("canonical_text", &canonical_config_text)
        .def("__repr__", [](const ExperimentConfig& c) {
            std::ostringstream os;
            os << "ExperimentConfig(kind=" << experiment_kind_name(c.kind)
               << ", trials=" << c.trials << ", seed=" << c.seed << ")";
            return os.str();
        });

    m.def("load_config", &load_experiment_config, py::arg("path"),
          "Parse a config file into an ExperimentConfig.");
    m.def(
        "parse_config",
        [](const std::string& text) {
            std::istringstream in(text);
            return parse_experiment_config(parse_ini(in, "<string>"));
        },
        py::arg("text"), "Parse config text (same format as the files).");

    py::class_<CommandResult>(m, "CommandResult")
        .def_readonly("exit_code", &CommandResult::exit_code)
        .def_readonly("summary", &CommandResult::summary)
        .def_property_readonly("csv",
                               [](const CommandResult& r) { return r.csv.text(); });

    m.def("run_command", &run_command, py::arg("config"), py::arg("jobs") = 1,
          py::call_guard<py::gil_scoped_release>(),
          "Run the experiment the config describes; returns CommandResult.");
    m.def(
        "run_and_write",
        [](const ExperimentConfig& cfg, int jobs, const std::string& out) {
            return run_and_write(cfg, jobs, resolve_out_dir(cfg, out));
        },
        py::arg("config"), py::arg("jobs") = 1, py::arg("out") = std::string(),
        py::call_guard<py::gil_scoped_release>(),
        "Run and write results.csv/summary.txt/manifest.txt; returns the exit "
        "code. `out` beats the PROFUSE_OUT env var beats config.out_dir.");

    py::class_<RobustnessCurve>(m, "RobustnessCurve")
        .def(py::init([](std::vector<double> sigma, std::vector<double> value,
                         const std::string& metric) {
                 RobustnessCurve c;
                 c.sigma = std::move(sigma);
                 c.value = std::move(value);
                 c.metric = metric_from_name(metric);
                 return c;
             }),
             py::arg("sigma"), py::arg("value"), py::arg("metric") = "accuracy")
        .def_readwrite("sigma", &RobustnessCurve::sigma)
        .def_readwrite("value", &RobustnessCurve::value)
        .def_property(
            "metric",
            [](const RobustnessCurve& c) { return metric_name(c.metric); },
            [](RobustnessCurve& c, const std::string& s) {
                c.metric = metric_from_name(s);
            });

    m.def("robust_auc", &robust_auc, py::arg("f"), py::arg("b"),
          "Normalized area between two performance-noise curves; positive "
          "means f is more robust than the baseline b.");
    m.def("minmax_scale", &minmax_scale, py::arg("scores"));

    m.def("derive_trial_seeds", &derive_trial_seeds, py::arg("root"), py::arg("n"),
          "Per-trial seed streams; trial i gets the same seed at any jobs "
          "count.");
}
