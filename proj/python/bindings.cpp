#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pmfuse/cv_metrics.hpp"
#include "pmfuse/ensemble.hpp"
#include "pmfuse/error.hpp"
#include "pmfuse/geo.hpp"
#include "pmfuse/pipeline.hpp"
#include "pmfuse/synth.hpp"

namespace py = pybind11;
using namespace pmfuse;

PYBIND11_MODULE(_pmfuse, m) {
  m.doc() = "Spatial ensemble fusion of two gridded PM2.5 proxies";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::enum_<Source>(m, "Source").value("CTM", Source::Ctm).value("SAT", Source::Sat);
  py::enum_<EnsembleVariant>(m, "EnsembleVariant")
      .value("JOINT", EnsembleVariant::Joint)
      .value("TWO_STAGE", EnsembleVariant::TwoStage);
  py::enum_<WeightPattern>(m, "WeightPattern").value("GP", WeightPattern::Gp).value("HALF_SPLIT", WeightPattern::HalfSplit);

  py::class_<Location>(m, "Location")
      .def(py::init<std::string, double, double>(), py::arg("id"), py::arg("x"), py::arg("y"))
      .def_readwrite("id", &Location::id)
      .def_readwrite("x", &Location::x)
      .def_readwrite("y", &Location::y);

  py::class_<CellIndex>(m, "CellIndex").def_readonly("row", &CellIndex::row).def_readonly("col", &CellIndex::col);

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init([](double ox, double oy, double size, int rows, int cols, Source source) {
             GridSpec g{ox, oy, size, rows, cols, source};
             g.validate();
             return g;
           }),
           py::arg("origin_x"), py::arg("origin_y"), py::arg("cell_size"), py::arg("n_rows"), py::arg("n_cols"),
           py::arg("source") = Source::Ctm)
      .def_readonly("origin_x", &GridSpec::origin_x)
      .def_readonly("origin_y", &GridSpec::origin_y)
      .def_readonly("cell_size", &GridSpec::cell_size)
      .def_readonly("n_rows", &GridSpec::n_rows)
      .def_readonly("n_cols", &GridSpec::n_cols);

  m.def("link_point_to_cell", py::overload_cast<double, double, const GridSpec&>(&link_point_to_cell),
        py::arg("x"), py::arg("y"), py::arg("grid"));
  m.def("distance_matrix", [](const std::vector<Location>& l) { return distance_matrix(l); }, py::arg("locations"));
  m.def("cell_centers", &cell_centers, py::arg("grid"));

  py::class_<PredictiveInput>(m, "PredictiveInput")
      .def(py::init([](double mu, double var, bool available) { return PredictiveInput{mu, var, available}; }),
           py::arg("mu"), py::arg("var"), py::arg("available") = true)
      .def_readwrite("mu", &PredictiveInput::mu)
      .def_readwrite("var", &PredictiveInput::var)
      .def_readwrite("available", &PredictiveInput::available);

  py::class_<EnsembleObservation>(m, "EnsembleObservation")
      .def(py::init([](std::size_t site, int day, double y, PredictiveInput ctm, PredictiveInput sat) {
             return EnsembleObservation{site, day, y, ctm, sat};
           }),
           py::arg("site"), py::arg("day"), py::arg("y"), py::arg("ctm"), py::arg("sat"))
      .def_readwrite("site", &EnsembleObservation::site)
      .def_readwrite("day", &EnsembleObservation::day)
      .def_readwrite("y", &EnsembleObservation::y)
      .def_readwrite("ctm", &EnsembleObservation::ctm)
      .def_readwrite("sat", &EnsembleObservation::sat);

  py::class_<MCMCConfig>(m, "MCMCConfig")
      .def(py::init([](int n_iter, int burn_in, int thin, std::uint64_t seed) {
             MCMCConfig c;
             c.n_iter = n_iter;
             c.burn_in = burn_in;
             c.thin = thin;
             c.seed = seed;
             c.validate();
             return c;
           }),
           py::arg("n_iter") = 10000, py::arg("burn_in") = 5000, py::arg("thin") = 4, py::arg("seed") = 1)
      .def_readwrite("n_iter", &MCMCConfig::n_iter)
      .def_readwrite("burn_in", &MCMCConfig::burn_in)
      .def_readwrite("thin", &MCMCConfig::thin)
      .def_readwrite("seed", &MCMCConfig::seed)
      .def_readwrite("kappa_w", &MCMCConfig::kappa_w)
      .def_readwrite("kappa_rho", &MCMCConfig::kappa_rho);

  py::class_<MixtureDistribution>(m, "MixtureDistribution")
      .def(py::init([](double w, double mu1, double var1, double mu2, double var2) {
             return MixtureDistribution{w, mu1, var1, mu2, var2};
           }),
           py::arg("w"), py::arg("mu1"), py::arg("var1"), py::arg("mu2"), py::arg("var2"))
      .def_readonly("w", &MixtureDistribution::w)
      .def("mean", &MixtureDistribution::mean)
      .def("variance", &MixtureDistribution::variance)
      .def("sd", &MixtureDistribution::sd)
      .def("cdf", &MixtureDistribution::cdf, py::arg("x"))
      .def("pdf", &MixtureDistribution::pdf, py::arg("x"))
      .def("quantile", &MixtureDistribution::quantile, py::arg("p"));

  py::class_<SiteWeightSummary>(m, "SiteWeightSummary")
      .def_readonly("w_mean", &SiteWeightSummary::w_mean)
      .def_readonly("w_lo", &SiteWeightSummary::w_lo)
      .def_readonly("w_hi", &SiteWeightSummary::w_hi)
      .def_readonly("w_median", &SiteWeightSummary::w_median)
      .def_readonly("q_mean", &SiteWeightSummary::q_mean);

  py::class_<WeightPosterior>(m, "WeightPosterior")
      .def_readonly("variant", &WeightPosterior::variant)
      .def_readonly("sites", &WeightPosterior::sites)
      .def_readonly("summaries", &WeightPosterior::summaries)
      .def_readonly("q_acceptance", &WeightPosterior::q_acceptance)
      .def_readonly("rho_acceptance", &WeightPosterior::rho_acceptance)
      .def_property_readonly("n_samples", [](const WeightPosterior& p) { return p.samples.size(); });

  py::class_<KrigedWeight>(m, "KrigedWeight")
      .def_readonly("w_mean", &KrigedWeight::w_mean)
      .def_readonly("w_lo", &KrigedWeight::w_lo)
      .def_readonly("w_hi", &KrigedWeight::w_hi);

  m.def("z_probability", &z_probability, py::arg("y"), py::arg("ctm"), py::arg("sat"), py::arg("w"));
  m.def(
      "fit_joint",
      [](const std::vector<EnsembleObservation>& obs, const std::vector<Location>& sites, const MCMCConfig& c) {
        py::gil_scoped_release release;
        return fit_joint(obs, sites, c);
      },
      py::arg("obs"), py::arg("sites"), py::arg("config") = MCMCConfig{});
  m.def(
      "fit_two_stage",
      [](const std::vector<EnsembleObservation>& obs, const std::vector<Location>& sites, const MCMCConfig& c) {
        py::gil_scoped_release release;
        return fit_two_stage(obs, sites, c);
      },
      py::arg("obs"), py::arg("sites"), py::arg("config") = MCMCConfig{});
  m.def(
      "krige_weights",
      [](const WeightPosterior& p, const std::vector<Location>& targets, std::uint64_t seed, int threads) {
        py::gil_scoped_release release;
        return krige_weights(p, targets, seed, threads);
      },
      py::arg("posterior"), py::arg("targets"), py::arg("seed") = 1, py::arg("threads") = 1);
  m.def("predict_mixture", &predict_mixture, py::arg("ctm"), py::arg("sat"), py::arg("w"));

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("rmse", &EvalReport::rmse)
      .def_readonly("coverage95", &EvalReport::coverage95)
      .def_readonly("avg_posterior_sd", &EvalReport::avg_posterior_sd)
      .def_readonly("r2", &EvalReport::r2)
      .def_readonly("n", &EvalReport::n);
  m.def(
      "evaluate",
      [](const std::vector<double>& y, const std::vector<MixtureDistribution>& predictive) {
        if (y.size() != predictive.size()) throw DomainError("y and predictive differ in length");
        std::vector<HeldOutPrediction> held;
        for (std::size_t i = 0; i < y.size(); ++i) held.push_back(HeldOutPrediction::from(y[i], predictive[i]));
        return evaluate(held);
      },
      py::arg("y"), py::arg("predictive"));

  py::class_<SceneConfig>(m, "SceneConfig")
      .def(py::init<>())
      .def_readwrite("n_sites", &SceneConfig::n_sites)
      .def_readwrite("n_days", &SceneConfig::n_days)
      .def_readwrite("domain_km", &SceneConfig::domain_km)
      .def_readwrite("sat_missing_rate", &SceneConfig::sat_missing_rate)
      .def_readwrite("weight_pattern", &SceneConfig::weight_pattern)
      .def_readwrite("tau2", &SceneConfig::tau2)
      .def_readwrite("rho", &SceneConfig::rho)
      .def_readwrite("half_split_q", &SceneConfig::half_split_q)
      .def_readwrite("seed", &SceneConfig::seed);

  py::class_<SceneTruth>(m, "SceneTruth")
      .def_readonly("sites", &SceneTruth::sites)
      .def_readonly("w", &SceneTruth::w)
      .def_readonly("q", &SceneTruth::q)
      .def_readonly("ensemble", &SceneTruth::ensemble)
      .def_property_readonly("n_records", [](const SceneTruth& t) { return t.table.records.size(); });

  m.def("generate_scene", &generate_scene, py::arg("config"));
  m.def(
      "export_scene",
      [](const SceneTruth& t, const fs::path& dir, bool overwrite) {
        return export_scene(t, dir, overwrite).to_json().dump();
      },
      py::arg("truth"), py::arg("dir"), py::arg("overwrite") = false,
      "Writes the scene inputs and returns the pipeline configuration as JSON text.");

  m.def(
      "run_pipeline",
      [](const fs::path& config_path, std::optional<fs::path> out_dir, std::optional<std::uint64_t> seed,
         std::optional<int> threads, bool overwrite) {
        PipelineConfig c = PipelineConfig::load(config_path);
        if (out_dir) c.out_dir = *out_dir;
        if (seed) c.seed = *seed;
        if (threads) c.threads = *threads;
        c.overwrite = overwrite;
        c.validate();
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(c);
        }
        py::list eval;
        for (const auto& row : r.eval) {
          py::dict d;
          d["method"] = row.method;
          d["estimation"] = row.estimation;
          d["input_derivation"] = row.input_derivation;
          d["subset"] = row.subset;
          d["rmse"] = row.report.rmse;
          d["coverage95"] = row.report.coverage95;
          d["avg_posterior_sd"] = row.report.avg_posterior_sd;
          d["r2"] = row.report.r2;
          eval.append(d);
        }
        py::dict out;
        out["run_dir"] = r.run_dir;
        out["config_hash"] = r.config_hash;
        out["eval"] = eval;
        return out;
      },
      py::arg("config"), py::arg("out_dir") = py::none(), py::arg("seed") = py::none(),
      py::arg("threads") = py::none(), py::arg("overwrite") = false);
}
