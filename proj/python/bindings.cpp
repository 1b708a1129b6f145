// Python bindings: pipeline stages, metrics, clustering and model scoring.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "routerank/pipeline.hpp"

namespace py = pybind11;
namespace rr = routerank;
namespace fs = std::filesystem;

namespace {

py::object to_py(const rr::Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

rr::Json from_py(const py::object& o) {
  return rr::Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

rr::PipelineConfig make_config(const py::object& config, std::optional<std::uint64_t> seed) {
  rr::PipelineConfig cfg;
  if (py::isinstance<py::dict>(config))
    rr::from_json(from_py(config), cfg);
  else if (!config.is_none())
    cfg = rr::load_pipeline_config(config.cast<fs::path>());
  if (seed) cfg.apply_seed(*seed);
  cfg.validate();
  return cfg;
}

py::object manifest_to_py(const rr::RunManifest& m) {
  rr::Json j;
  rr::to_json(j, m);
  return to_py(j);
}

}  // namespace

PYBIND11_MODULE(_routerank, m) {
  m.doc() = "Personalized route ranking";
  m.attr("__version__") = rr::kToolVersion;

  auto base = py::register_exception<rr::Error>(m, "RouterankError", PyExc_RuntimeError);
  py::register_exception<rr::InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<rr::MissingInput>(m, "MissingInput", base.ptr());
  py::register_exception<rr::SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<rr::NumericError>(m, "NumericError", base.ptr());

  m.def(
      "default_config",
      [](std::optional<std::uint64_t> seed) {
        rr::PipelineConfig cfg;
        if (seed) cfg.apply_seed(*seed);
        rr::Json j;
        rr::to_json(j, cfg);
        return to_py(j);
      },
      py::arg("seed") = py::none());

  m.def(
      "run_stage",
      [](const std::string& command, const fs::path& out, const py::object& config, std::optional<std::uint64_t> seed,
         bool quiet) {
        using Stage = rr::RunManifest (*)(const rr::PipelineConfig&, const rr::StageContext&);
        static const std::map<std::string, Stage> stages{{"gen", rr::cmd_gen},     {"extract", rr::cmd_extract},
                                                         {"cluster", rr::cmd_cluster}, {"train", rr::cmd_train},
                                                         {"eval", rr::cmd_eval},   {"plot", rr::cmd_plot}};
        const auto it = stages.find(command);
        if (it == stages.end()) throw rr::InvalidArgument("unknown stage: " + command);
        const auto cfg = make_config(config, seed);
        rr::RunManifest manifest;
        {
          py::gil_scoped_release nogil;
          manifest = it->second(cfg, rr::StageContext{out, quiet});
        }
        return manifest_to_py(manifest);
      },
      py::arg("command"), py::arg("out"), py::arg("config") = py::none(), py::arg("seed") = py::none(),
      py::arg("quiet") = true,
      "Runs one stage into `out`. `config` is a dict, a path or None for defaults. Returns the manifest.");

  m.def(
      "verify_stage", [](const fs::path& dir, const std::string& command) { return manifest_to_py(rr::verify_stage(dir, command)); },
      py::arg("dir"), py::arg("command"));

  m.def(
      "auc", [](const std::vector<double>& scores, const std::vector<double>& labels) { return rr::auc(scores, labels); },
      py::arg("scores"), py::arg("labels"), "None when only one class is present.");

  m.def("binarize_label", &rr::binarize_label, py::arg("ir"), py::arg("tau") = rr::kDefaultFollowThreshold);

  m.def(
      "kmeans",
      [](const rr::Matrix& x, int k, std::uint64_t seed, int n_init) {
        rr::KMeansConfig cfg;
        cfg.k = k;
        cfg.seed = seed;
        cfg.n_init = n_init;
        const auto fit = rr::kmeans_fit(x, cfg);
        py::dict out;
        out["assignments"] = fit.assignments;
        out["centroids"] = fit.centroids;
        out["inertia"] = fit.inertia();
        out["inertia_trace"] = fit.inertia_trace;
        out["dropped"] = fit.dropped;
        out["converged"] = fit.converged;
        return out;
      },
      py::arg("x"), py::arg("k"), py::arg("seed") = 0, py::arg("n_init") = 10);

  m.def(
      "tsne",
      [](const rr::Matrix& x, double perplexity, int iterations, std::uint64_t seed) {
        rr::TsneConfig cfg;
        cfg.perplexity = perplexity;
        cfg.iterations = iterations;
        cfg.seed = seed;
        const auto e = rr::tsne_project(x, cfg);
        py::dict out;
        out["points"] = e.points;
        out["initial_kl"] = e.initial_kl;
        out["final_kl"] = e.final_kl;
        return out;
      },
      py::arg("x"), py::arg("perplexity") = 30.0, py::arg("iterations") = 1000, py::arg("seed") = 0);

  py::class_<rr::DcrModel>(m, "DcrModel")
      .def_static("load", &rr::DcrModel::load, py::arg("path"))
      .def("save", &rr::DcrModel::save, py::arg("path"))
      .def("__eq__", [](const rr::DcrModel& a, const rr::DcrModel& b) { return a == b; })
      .def(
          "score_run",
          [](const rr::DcrModel& model, const fs::path& dir, const std::string& split) {
            const auto cands = rr::read_candidates(dir / "features.jsonl");
            const auto profiles = rr::read_profiles(dir / "profiles.jsonl");
            std::optional<rr::Split> only;
            if (split != "all") only = rr::split_from_string(split);
            const auto samples = rr::make_samples(cands, profiles, only);
            py::gil_scoped_release nogil;
            return model.score(samples);
          },
          py::arg("dir"), py::arg("split") = "test",
          "Scores every candidate of one split of a run directory, in file order.");
}
