#include "pmfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pmfuse/downscaler.hpp"
#include "pmfuse/threads.hpp"

namespace pmfuse {

namespace {

using namespace seed_stream;

constexpr std::size_t kSurfaceBlock = 1024;

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

MCMCConfig with_seed(MCMCConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

/// Mutable run manifest, rewritten after every stage.
class Manifest {
 public:
  Manifest(fs::path path, const PipelineConfig& config, const std::string& hash) : path_(std::move(path)) {
    json_["status"] = "running";
    json_["seed"] = config.seed;
    json_["config_hash"] = hash;
    json_["r2_definition"] = "squared Pearson correlation between observed and predicted";
    json_["config"] = config.to_json();
    json_["artifacts"] = Json::array();
    json_["stage"] = "";
    save();
  }
  void stage(const std::string& name) {
    json_["stage"] = name;
    save();
  }
  void artifact(const std::string& name) {
    json_["artifacts"].push_back(name);
    save();
  }
  void finish() {
    json_["status"] = "complete";
    json_["stage"] = "done";
    save();
  }
  void fail(const std::string& stage, const std::string& what) {
    json_["status"] = "incomplete";
    json_["failed_stage"] = stage;
    json_["error"] = what;
    save();
  }

 private:
  void save() { write_json_file(path_, json_, true); }
  fs::path path_;
  Json json_;
};

std::vector<PredictiveRow> predictive_rows(const ObservationTable& table, std::span<const PredictiveInput> ctm,
                                           std::span<const PredictiveInput> sat) {
  std::vector<PredictiveRow> rows;
  rows.reserve(2 * table.records.size());
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    rows.push_back({table.sites[r.site].id, r.day, Source::Ctm, ctm[i]});
    rows.push_back({table.sites[r.site].id, r.day, Source::Sat, sat[i]});
  }
  return rows;
}

EvalReport score(std::span<const HeldOutPrediction> preds) {
  if (preds.empty()) return EvalReport{kMissing, kMissing, kMissing, kMissing, 0};
  return evaluate(preds);
}

}  // namespace

std::string_view to_string(FoldKind kind) { return kind == FoldKind::KFold ? "kfold" : "spatial"; }

FoldKind parse_fold_kind(std::string_view text) {
  if (text == "kfold") return FoldKind::KFold;
  if (text == "spatial" || text == "lomo") return FoldKind::SpatialLomo;
  throw ConfigError("unknown input derivation '" + std::string(text) + "'");
}

void PipelineConfig::validate() const {
  ctm_grid.validate();
  sat_grid.validate();
  if (target_grid) target_grid->validate();
  downscaler_mcmc.validate();
  ensemble_mcmc.validate();
  if (input_derivation == FoldKind::KFold && n_folds < 2) throw ConfigError("n_folds must be at least 2");
  if (threads < 0) throw ConfigError("threads must be non-negative");
  for (const fs::path* p : {&inputs.monitors, &inputs.obs, &inputs.grid_ctm, &inputs.grid_sat,
                            &inputs.covariates, &inputs.grid_covariates}) {
    if (p->empty()) throw ConfigError("every input path must be set");
  }
}

PipelineConfig PipelineConfig::from_json(const Json& j, const fs::path& base_dir) {
  try {
    PipelineConfig c;
    const auto& in = j.at("inputs");
    c.inputs.monitors = resolve(in.at("monitors").get<std::string>(), base_dir);
    c.inputs.obs = resolve(in.at("obs").get<std::string>(), base_dir);
    c.inputs.grid_ctm = resolve(in.at("grid_ctm").get<std::string>(), base_dir);
    c.inputs.grid_sat = resolve(in.at("grid_sat").get<std::string>(), base_dir);
    c.inputs.covariates = resolve(in.at("covariates").get<std::string>(), base_dir);
    c.inputs.grid_covariates = resolve(in.at("grid_covariates").get<std::string>(), base_dir);
    const auto& grids = j.at("grids");
    c.ctm_grid = grid_from_json(grids.at("ctm"), Source::Ctm);
    c.sat_grid = grid_from_json(grids.at("sat"), Source::Sat);
    if (grids.contains("target") && !grids.at("target").is_null()) {
      c.target_grid = grid_from_json(grids.at("target"), Source::Sat);
    }
    if (j.contains("out_dir")) c.out_dir = resolve(j.at("out_dir").get<std::string>(), base_dir);
    if (j.contains("mcmc")) {
      const auto& m = j.at("mcmc");
      if (m.contains("downscaler")) c.downscaler_mcmc = mcmc_from_json(m.at("downscaler"));
      if (m.contains("ensemble")) c.ensemble_mcmc = mcmc_from_json(m.at("ensemble"));
    }
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("input_derivation")) {
      c.input_derivation = parse_fold_kind(j.at("input_derivation").get<std::string>());
    }
    c.n_folds = j.value("n_folds", c.n_folds);
    if (j.contains("surface_days")) c.surface_days = j.at("surface_days").get<std::vector<int>>();
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.overwrite = j.value("overwrite", c.overwrite);
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  return from_json(read_json_file(path), fs::absolute(path).parent_path());
}

Json PipelineConfig::to_json() const {
  Json j;
  j["inputs"] = {{"monitors", inputs.monitors.string()},
                 {"obs", inputs.obs.string()},
                 {"grid_ctm", inputs.grid_ctm.string()},
                 {"grid_sat", inputs.grid_sat.string()},
                 {"covariates", inputs.covariates.string()},
                 {"grid_covariates", inputs.grid_covariates.string()}};
  j["grids"] = {{"ctm", pmfuse::to_json(ctm_grid)},
                {"sat", pmfuse::to_json(sat_grid)},
                {"target", target_grid ? pmfuse::to_json(*target_grid) : Json()}};
  j["out_dir"] = out_dir.string();
  j["mcmc"] = {{"downscaler", pmfuse::to_json(downscaler_mcmc)}, {"ensemble", pmfuse::to_json(ensemble_mcmc)}};
  j["variant"] = pmfuse::to_string(variant);
  j["input_derivation"] = pmfuse::to_string(input_derivation);
  j["n_folds"] = n_folds;
  j["surface_days"] = surface_days;
  j["seed"] = seed;
  j["threads"] = threads;
  j["overwrite"] = overwrite;
  return j;
}

std::string PipelineConfig::hash() const {
  Json j = to_json();
  j.erase("out_dir");
  j.erase("threads");
  j.erase("overwrite");
  return fnv1a_hex(j.dump());
}

PipelineInputs load_inputs(const PipelineConfig& config) {
  PipelineInputs in;
  const auto monitors = load_monitors(config.inputs.monitors);
  const auto obs = load_obs(config.inputs.obs);
  in.ctm = load_grid(config.inputs.grid_ctm, config.ctm_grid);
  in.sat = load_grid(config.inputs.grid_sat, config.sat_grid);
  const auto covariates = load_covariates(config.inputs.covariates);
  in.table = build_observation_table(monitors, obs, in.ctm, in.sat, covariates);
  in.grid_covariates = load_grid_covariates(config.inputs.grid_covariates, config.surface_grid());
  return in;
}

std::vector<EnsembleObservation> ensemble_observations(const ObservationTable& table,
                                                       std::span<const PredictiveInput> ctm,
                                                       std::span<const PredictiveInput> sat) {
  if (ctm.size() != table.records.size() || sat.size() != table.records.size()) {
    throw DomainError("predictive inputs do not match the observation table");
  }
  std::vector<EnsembleObservation> out;
  out.reserve(table.records.size());
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    out.push_back({r.site, r.day, r.y, ctm[i], sat[i]});
  }
  return out;
}

WeightPosterior fit_ensemble(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                             EnsembleVariant variant, const MCMCConfig& config) {
  return variant == EnsembleVariant::Joint ? fit_joint(obs, sites, config) : fit_two_stage(obs, sites, config);
}

std::vector<double> cv_weights(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                               const FoldPlan& plan, EnsembleVariant variant, const MCMCConfig& config,
                               int threads) {
  if (plan.assignment.size() != obs.size()) throw DomainError("fold plan does not match the observations");
  std::vector<double> w(obs.size(), kMissing);
  parallel_for(static_cast<std::size_t>(plan.n_folds), threads, [&](std::size_t f) {
    const auto fold = static_cast<int>(f);
    const auto held = plan.members(fold);
    if (held.empty()) return;
    std::vector<EnsembleObservation> train;
    for (auto i : plan.complement(fold)) train.push_back(obs[i]);
    const auto posterior = fit_ensemble(train, sites, variant, with_seed(config, derive_seed(config.seed, f)));
    for (auto i : held) w[i] = posterior.summaries[obs[i].site].w_mean;
  });
  return w;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  PipelineResult result;
  result.config_hash = config.hash();
  result.run_dir = config.out_dir / ("run-" + result.config_hash);
  if (fs::exists(result.run_dir)) {
    if (!config.overwrite) {
      throw ConfigError("run directory " + result.run_dir.string() + " already exists (use overwrite)");
    }
    fs::remove_all(result.run_dir);
  }
  fs::create_directories(result.run_dir);
  const int threads = config.threads > 0 ? config.threads : default_thread_count();
  const WriteOptions opt{ArtifactTag{config.seed, result.config_hash}, false};
  const auto path = [&](const char* name) { return result.run_dir / name; };
  Manifest manifest(path(artifact::kManifest), config, result.config_hash);

  std::string stage = "load";
  try {
    manifest.stage(stage);
    const PipelineInputs in = load_inputs(config);
    const ObservationTable& table = in.table;
    const std::size_t n = table.records.size();

    // Stage 1: out-of-sample predictives from both downscalers.
    stage = "cv";
    manifest.stage(stage);
    std::vector<RecordKey> keys;
    keys.reserve(n);
    for (const auto& r : table.records) keys.push_back({table.sites[r.site].id, r.day});
    const FoldPlan plan =
        make_folds(keys, config.input_derivation, config.n_folds, derive_seed(config.seed, kFolds));
    const auto& ds = config.downscaler_mcmc;
    const auto cv_ctm = cv_predict(table, plan, Source::Ctm, with_seed(ds, derive_seed(config.seed, kCvCtm)), threads);
    const auto cv_sat = cv_predict(table, plan, Source::Sat, with_seed(ds, derive_seed(config.seed, kCvSat)), threads);
    const auto cv_rows = predictive_rows(table, cv_ctm, cv_sat);
    write_predictive(path(artifact::kPredictiveCv), cv_rows, opt);
    manifest.artifact(artifact::kPredictiveCv);

    // Stage 2: ensemble weights from the out-of-sample predictives.
    stage = "ensemble";
    manifest.stage(stage);
    const auto obs = ensemble_observations(table, cv_ctm, cv_sat);
    const MCMCConfig em = with_seed(config.ensemble_mcmc, derive_seed(config.seed, kEnsemble));
    const WeightPosterior posterior = fit_ensemble(obs, table.sites, config.variant, em);
    std::vector<WeightRow> weight_rows;
    for (std::size_t s = 0; s < table.sites.size(); ++s) {
      const auto& sm = posterior.summaries[s];
      weight_rows.push_back({table.sites[s].id, sm.w_mean, sm.w_lo, sm.w_hi, sm.q_mean});
    }
    write_weights(path(artifact::kWeights), weight_rows, opt);
    manifest.artifact(artifact::kWeights);

    // Stage 3: downscalers refitted on every observation.
    stage = "full_fit";
    manifest.stage(stage);
    const auto [day_lo, day_hi] = table.day_range();
    const DayRange days{day_lo, day_hi};
    const DownscalerFit fit_ctm =
        fit_downscaler(table, Source::Ctm, with_seed(ds, derive_seed(config.seed, kFullCtm)), days);
    const DownscalerFit fit_sat =
        fit_downscaler(table, Source::Sat, with_seed(ds, derive_seed(config.seed, kFullSat)), days);
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const auto full_ctm = predict_at(fit_ctm, table.sites, record_targets(table, all, Source::Ctm), threads);
    const auto full_sat = predict_at(fit_sat, table.sites, record_targets(table, all, Source::Sat), threads);
    write_predictive(path(artifact::kPredictive), predictive_rows(table, full_ctm, full_sat), opt);
    manifest.artifact(artifact::kPredictive);

    // Kriged weights on the surface grid.
    stage = "weight_surface";
    manifest.stage(stage);
    const GridSpec& grid = config.surface_grid();
    const auto centers = cell_centers(grid);
    const auto kriged = krige_weights(posterior, centers, derive_seed(config.seed, kWeightKriging), threads);
    std::vector<WeightSurfaceRow> ws_rows;
    ws_rows.reserve(centers.size());
    for (int r = 0; r < grid.n_rows; ++r) {
      for (int c = 0; c < grid.n_cols; ++c) {
        const auto& k = kriged[grid.flat_index({r, c})];
        ws_rows.push_back({r, c, k.w_mean, k.w_lo, k.w_hi});
      }
    }
    write_weight_surface(path(artifact::kWeightSurface), ws_rows, opt);
    manifest.artifact(artifact::kWeightSurface);

    // Combined predictive surface.
    stage = "surface";
    manifest.stage(stage);
    std::vector<int> surface_days = config.surface_days;
    if (surface_days.empty()) {
      for (int d = day_lo; d <= day_hi; ++d) surface_days.push_back(d);
    }
    const std::size_t n_cells = centers.size();
    std::vector<CellIndex> ctm_cell(n_cells);
    std::vector<std::optional<CellIndex>> sat_cell(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) {
      ctm_cell[c] = link_point_to_cell(centers[c], in.ctm.grid);
      try {
        sat_cell[c] = link_point_to_cell(centers[c], in.sat.grid);
      } catch (const OutOfDomain&) {
      }
    }
    std::vector<SurfaceRow> surface(surface_days.size() * n_cells);
    for (std::size_t begin = 0; begin < n_cells; begin += kSurfaceBlock) {
      const std::size_t end = std::min(n_cells, begin + kSurfaceBlock);
      const std::span<const Location> block(centers.data() + begin, end - begin);
      std::vector<PredictionTarget> t_ctm;
      std::vector<PredictionTarget> t_sat;
      for (int day : surface_days) {
        if (!in.ctm.has_day(day)) throw OutOfDomain("no CTM field for surface day " + std::to_string(day));
        for (std::size_t c = begin; c < end; ++c) {
          const Covariates& z = in.grid_covariates.at(day, c);
          const double x_sat = sat_cell[c] && in.sat.has_day(day) ? in.sat.at(day, *sat_cell[c]) : kMissing;
          t_ctm.push_back({c - begin, day, in.ctm.at(day, ctm_cell[c]), z});
          t_sat.push_back({c - begin, day, x_sat, z});
        }
      }
      const auto p_ctm = predict_at(fit_ctm, block, t_ctm, threads);
      const auto p_sat = predict_at(fit_sat, block, t_sat, threads);
      const std::size_t width = end - begin;
      parallel_for(surface_days.size(), threads, [&](std::size_t d) {
        for (std::size_t c = begin; c < end; ++c) {
          const std::size_t i = d * width + (c - begin);
          const CellIndex cell{static_cast<int>(c) / grid.n_cols, static_cast<int>(c) % grid.n_cols};
          SurfaceRow row{surface_days[d], cell.row, cell.col, kMissing, kMissing, kMissing, kMissing, kMissing};
          const auto& pc = p_ctm[i];
          const auto& ps = p_sat[i];
          if (pc.available || ps.available) {
            row.w = pc.available && ps.available ? kriged[c].w_mean : (pc.available ? 1.0 : 0.0);
            const MixtureDistribution m = predict_mixture(pc, ps, row.w);
            row.mean = m.mean();
            row.sd = m.sd();
            row.q025 = m.quantile(0.025);
            row.q975 = m.quantile(0.975);
          }
          surface[d * n_cells + c] = row;
        }
      });
    }
    write_surface(path(artifact::kSurface), surface, opt);
    manifest.artifact(artifact::kSurface);

    // Evaluation of the out-of-sample predictions.
    stage = "evaluate";
    manifest.stage(stage);
    const auto w_cv = cv_weights(obs, table.sites, plan, config.variant,
                                 with_seed(config.ensemble_mcmc, derive_seed(config.seed, kEnsembleCv)), threads);
    std::vector<HeldOutPrediction> ctm_all, ctm_both, sat_both, ens_all, ens_both;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = table.records[i].y;
      const auto& o = obs[i];
      const auto ctm_pred = HeldOutPrediction::from(y, GaussianSummary{o.ctm.mu, o.ctm.var});
      const double w = o.both_available() ? w_cv[i] : 1.0;
      const auto ens_pred = HeldOutPrediction::from(y, predict_mixture(o.ctm, o.sat, w));
      ctm_all.push_back(ctm_pred);
      ens_all.push_back(ens_pred);
      if (o.both_available()) {
        ctm_both.push_back(ctm_pred);
        sat_both.push_back(HeldOutPrediction::from(y, GaussianSummary{o.sat.mu, o.sat.var}));
        ens_both.push_back(ens_pred);
      }
    }
    const std::string deriv(to_string(config.input_derivation));
    const std::string est(to_string(config.variant));
    std::vector<EvalRow> eval{
        {"ctm", "downscaler", deriv, "all", score(ctm_all)},
        {"ctm", "downscaler", deriv, "both_available", score(ctm_both)},
        {"sat", "downscaler", deriv, "both_available", score(sat_both)},
        {"ensemble", est, deriv, "all", score(ens_all)},
        {"ensemble", est, deriv, "both_available", score(ens_both)},
    };
    write_eval(path(artifact::kEval), eval, opt);
    manifest.artifact(artifact::kEval);
    result.eval = std::move(eval);
    manifest.finish();
  } catch (const std::exception& e) {
    manifest.fail(stage, e.what());
    throw PipelineError(stage, e.what());
  }
  return result;
}

PipelineConfig export_scene(const SceneTruth& truth, const fs::path& dir, bool overwrite) {
  fs::create_directories(dir);
  const WriteOptions opt{std::nullopt, overwrite};
  write_monitors(dir / "monitors.csv", truth.sites, opt);
  std::vector<ObsRow> obs;
  obs.reserve(truth.table.records.size());
  for (const auto& r : truth.table.records) obs.push_back({truth.sites[r.site].id, r.day, r.y});
  write_obs(dir / "obs.csv", obs, opt);
  write_grid(dir / "grid_ctm.csv", truth.ctm, opt);
  write_grid(dir / "grid_sat.csv", truth.sat, opt);
  write_covariates(dir / "covariates.csv", truth.table, opt);
  write_grid_covariates(dir / "grid_covariates.csv", truth.covariates, opt);
  std::vector<WeightRow> weights;
  for (std::size_t s = 0; s < truth.sites.size(); ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    weights.push_back({truth.sites[s].id, truth.w(si), truth.w(si), truth.w(si), truth.q(si)});
  }
  write_weights(dir / "truth_weights.csv", weights, opt);

  Json j;
  j["inputs"] = {{"monitors", "monitors.csv"}, {"obs", "obs.csv"},
                 {"grid_ctm", "grid_ctm.csv"}, {"grid_sat", "grid_sat.csv"},
                 {"covariates", "covariates.csv"}, {"grid_covariates", "grid_covariates.csv"}};
  j["grids"] = {{"ctm", to_json(truth.ctm_grid)}, {"sat", to_json(truth.sat_grid)}};
  j["out_dir"] = "out";
  j["seed"] = truth.config.seed;
  j["scene"] = to_json(truth.config);
  write_json_file(dir / "pipeline.json", j, overwrite);
  return PipelineConfig::from_json(j, fs::absolute(dir));
}

}  // namespace pmfuse
