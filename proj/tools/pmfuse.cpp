#include <CLI11.hpp>

#include <iostream>
#include <unordered_map>

#include "pmfuse/downscaler.hpp"
#include "pmfuse/pipeline.hpp"
#include "pmfuse/threads.hpp"

using namespace pmfuse;

namespace {

/// Flags shared by every subcommand that reads a pipeline configuration.
struct ConfigFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> derivation;
  std::optional<int> folds;
  std::optional<int> n_iter, burn_in, thin;
  std::optional<int> ens_n_iter, ens_burn_in, ens_thin;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::vector<int> surface_days;
  bool overwrite = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "master seed");
    app->add_option("--variant", variant, "ensemble estimation: joint or two_stage");
    app->add_option("--derivation", derivation, "ensemble input derivation: kfold or spatial");
    app->add_option("--folds", folds, "number of folds for kfold derivation");
    app->add_option("--n-iter", n_iter, "downscaler MCMC iterations");
    app->add_option("--burn-in", burn_in, "downscaler burn-in");
    app->add_option("--thin", thin, "downscaler thinning");
    app->add_option("--ens-n-iter", ens_n_iter, "ensemble MCMC iterations");
    app->add_option("--ens-burn-in", ens_burn_in, "ensemble burn-in");
    app->add_option("--ens-thin", ens_thin, "ensemble thinning");
    app->add_option("--out-dir", out_dir, "artifact directory");
    app->add_option("--threads", threads, "worker threads (default: PMFUSE_THREADS or all cores)");
    app->add_option("--surface-days", surface_days, "days of the combined surface");
    app->add_flag("--overwrite", overwrite, "replace existing outputs");
  }

  PipelineConfig load() const {
    PipelineConfig c = PipelineConfig::load(config);
    if (seed) c.seed = *seed;
    if (variant) c.variant = parse_variant(*variant);
    if (derivation) c.input_derivation = parse_fold_kind(*derivation);
    if (folds) c.n_folds = *folds;
    if (n_iter) c.downscaler_mcmc.n_iter = *n_iter;
    if (burn_in) c.downscaler_mcmc.burn_in = *burn_in;
    if (thin) c.downscaler_mcmc.thin = *thin;
    if (ens_n_iter) c.ensemble_mcmc.n_iter = *ens_n_iter;
    if (ens_burn_in) c.ensemble_mcmc.burn_in = *ens_burn_in;
    if (ens_thin) c.ensemble_mcmc.thin = *ens_thin;
    if (out_dir) c.out_dir = *out_dir;
    if (threads) c.threads = *threads;
    if (!surface_days.empty()) c.surface_days = surface_days;
    if (overwrite) c.overwrite = true;
    c.validate();
    return c;
  }
};

int thread_count(const PipelineConfig& c) { return c.threads > 0 ? c.threads : default_thread_count(); }

WriteOptions write_options(const PipelineConfig& c) { return {ArtifactTag{c.seed, c.hash()}, c.overwrite}; }

MCMCConfig stage_mcmc(MCMCConfig m, std::uint64_t seed, std::uint64_t stream) {
  m.seed = derive_seed(seed, stream);
  return m;
}

std::vector<PredictiveInput> column_for(const ObservationTable& table, std::span<const PredictiveRow> rows,
                                        Source source) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& r = table.records[i];
    index[table.sites[r.site].id + "#" + std::to_string(r.day)] = i;
  }
  std::vector<PredictiveInput> out(table.records.size());
  std::vector<bool> seen(table.records.size(), false);
  for (const auto& row : rows) {
    if (row.source != source) continue;
    const auto it = index.find(row.site_id + "#" + std::to_string(row.day));
    if (it == index.end()) continue;
    out[it->second] = row.input;
    seen[it->second] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      const auto& r = table.records[i];
      throw DomainError("no " + std::string(to_string(source)) + " predictive for " + table.sites[r.site].id +
                        " day " + std::to_string(r.day));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pmfuse: spatial ensemble fusion of two gridded PM2.5 proxies"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene in the input CSV formats");
  std::string scene_file, synth_out;
  bool synth_overwrite = false;
  std::optional<int> n_sites, n_days;
  std::optional<std::uint64_t> synth_seed;
  std::optional<double> sat_missing;
  std::optional<std::string> pattern;
  synth->add_option("--scene", scene_file, "scene configuration (JSON)")->check(CLI::ExistingFile);
  synth->add_option("-o,--out", synth_out, "output directory")->required();
  synth->add_option("--sites", n_sites, "number of monitors");
  synth->add_option("--days", n_days, "number of days");
  synth->add_option("--seed", synth_seed, "scene seed");
  synth->add_option("--sat-missing-rate", sat_missing, "probability that an AOD cell-day is missing");
  synth->add_option("--weight-pattern", pattern, "gp or half_split");
  synth->add_flag("--overwrite", synth_overwrite, "replace existing files");

  // fit-downscaler
  auto* fit_ds = app.add_subcommand("fit-downscaler", "fit one downscaler on all observations");
  ConfigFlags fit_flags;
  fit_flags.attach(fit_ds);
  std::string fit_source = "ctm", fit_out;
  fit_ds->add_option("--source", fit_source, "ctm or sat");
  fit_ds->add_option("-o,--out", fit_out, "posterior samples (JSON)")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "predictive distributions at monitor-days from a fitted downscaler");
  ConfigFlags predict_flags;
  predict_flags.attach(predict);
  std::string predict_fit, predict_out;
  predict->add_option("--fit", predict_fit, "fitted downscaler (JSON)")->required()->check(CLI::ExistingFile);
  predict->add_option("-o,--out", predict_out, "predictive CSV")->required();

  // cv
  auto* cv = app.add_subcommand("cv", "out-of-sample predictives for every observation");
  ConfigFlags cv_flags;
  cv_flags.attach(cv);
  std::vector<std::string> cv_sources{"ctm", "sat"};
  std::string cv_out;
  cv->add_option("--source", cv_sources, "sources to cross-validate");
  cv->add_option("-o,--out", cv_out, "predictive CSV")->required();

  // fit-ensemble
  auto* fit_ens = app.add_subcommand("fit-ensemble", "fit the spatially varying ensemble weights");
  ConfigFlags ens_flags;
  ens_flags.attach(fit_ens);
  std::string ens_predictive, ens_out, ens_weights;
  fit_ens->add_option("--predictive", ens_predictive, "out-of-sample predictive CSV with both sources")
      ->required()
      ->check(CLI::ExistingFile);
  fit_ens->add_option("-o,--out", ens_out, "weight posterior (JSON)")->required();
  fit_ens->add_option("--weights", ens_weights, "also write per-site weight summaries (CSV)");

  // krige-weights
  auto* krige = app.add_subcommand("krige-weights", "krige the weight posterior to the surface grid");
  ConfigFlags krige_flags;
  krige_flags.attach(krige);
  std::string krige_posterior, krige_out;
  krige->add_option("--posterior", krige_posterior, "weight posterior (JSON)")->required()->check(CLI::ExistingFile);
  krige->add_option("-o,--out", krige_out, "weight surface CSV")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "RMSE, 95% coverage, mean SD and R2 of predictive tables");
  ConfigFlags eval_flags;
  eval_flags.attach(eval);
  std::string eval_predictive, eval_weights, eval_out;
  eval->add_option("--predictive", eval_predictive, "predictive CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--weights", eval_weights, "per-site weights; adds ensemble rows")->check(CLI::ExistingFile);
  eval->add_option("-o,--out", eval_out, "evaluation CSV")->required();

  // run-all
  auto* run_all = app.add_subcommand("run-all", "run the three-stage pipeline and write every artifact");
  ConfigFlags run_flags;
  run_flags.attach(run_all);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      SceneConfig sc;
      if (!scene_file.empty()) sc = scene_from_json(read_json_file(scene_file));
      if (n_sites) sc.n_sites = *n_sites;
      if (n_days) sc.n_days = *n_days;
      if (synth_seed) sc.seed = *synth_seed;
      if (sat_missing) sc.sat_missing_rate = *sat_missing;
      if (pattern) sc.weight_pattern = *pattern == "half_split" ? WeightPattern::HalfSplit : WeightPattern::Gp;
      const SceneTruth truth = generate_scene(sc);
      export_scene(truth, synth_out, synth_overwrite);
      std::cout << "scene: " << truth.sites.size() << " sites, " << truth.table.records.size()
                << " records -> " << synth_out << "/pipeline.json\n";
    } else if (*fit_ds) {
      const auto c = fit_flags.load();
      const auto in = load_inputs(c);
      const Source source = parse_source(fit_source);
      const auto fit = fit_downscaler(in.table, source,
                                      stage_mcmc(c.downscaler_mcmc, c.seed, source == Source::Ctm ? seed_stream::kFullCtm : seed_stream::kFullSat));
      write_json_file(fit_out, to_json(fit), c.overwrite);
      std::cout << "fit: " << fit.samples.size() << " samples, range acceptance " << fit.theta1_acceptance
                << " / " << fit.theta2_acceptance << "\n";
    } else if (*predict) {
      const auto c = predict_flags.load();
      const auto in = load_inputs(c);
      const auto fit = downscaler_fit_from_json(read_json_file(predict_fit));
      std::vector<std::size_t> all(in.table.records.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const auto preds =
          predict_at(fit, in.table.sites, record_targets(in.table, all, fit.source), thread_count(c));
      std::vector<PredictiveRow> rows;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& r = in.table.records[i];
        rows.push_back({in.table.sites[r.site].id, r.day, fit.source, preds[i]});
      }
      write_predictive(predict_out, rows, write_options(c));
    } else if (*cv) {
      const auto c = cv_flags.load();
      const auto in = load_inputs(c);
      std::vector<RecordKey> keys;
      for (const auto& r : in.table.records) keys.push_back({in.table.sites[r.site].id, r.day});
      const auto plan = make_folds(keys, c.input_derivation, c.n_folds, derive_seed(c.seed, seed_stream::kFolds));
      std::vector<PredictiveRow> rows;
      for (const auto& name : cv_sources) {
        const Source source = parse_source(name);
        const auto preds = cv_predict(in.table, plan, source,
                                      stage_mcmc(c.downscaler_mcmc, c.seed, source == Source::Ctm ? seed_stream::kCvCtm : seed_stream::kCvSat),
                                      thread_count(c));
        for (std::size_t i = 0; i < preds.size(); ++i) {
          const auto& r = in.table.records[i];
          rows.push_back({in.table.sites[r.site].id, r.day, source, preds[i]});
        }
      }
      write_predictive(cv_out, rows, write_options(c));
    } else if (*fit_ens) {
      const auto c = ens_flags.load();
      const auto in = load_inputs(c);
      const auto rows = load_predictive(ens_predictive);
      const auto obs = ensemble_observations(in.table, column_for(in.table, rows, Source::Ctm),
                                             column_for(in.table, rows, Source::Sat));
      const auto posterior = fit_ensemble(obs, in.table.sites, c.variant, stage_mcmc(c.ensemble_mcmc, c.seed, seed_stream::kEnsemble));
      write_json_file(ens_out, to_json(posterior), c.overwrite);
      if (!ens_weights.empty()) {
        std::vector<WeightRow> w;
        for (std::size_t s = 0; s < posterior.sites.size(); ++s) {
          const auto& sm = posterior.summaries[s];
          w.push_back({posterior.sites[s].id, sm.w_mean, sm.w_lo, sm.w_hi, sm.q_mean});
        }
        write_weights(ens_weights, w, write_options(c));
      }
      std::cout << "ensemble: q acceptance " << posterior.q_acceptance << ", rho acceptance "
                << posterior.rho_acceptance << "\n";
    } else if (*krige) {
      const auto c = krige_flags.load();
      const auto posterior = weight_posterior_from_json(read_json_file(krige_posterior));
      const GridSpec& grid = c.surface_grid();
      const auto kriged = krige_weights(posterior, cell_centers(grid), derive_seed(c.seed, seed_stream::kWeightKriging), thread_count(c));
      std::vector<WeightSurfaceRow> rows;
      for (int r = 0; r < grid.n_rows; ++r) {
        for (int col = 0; col < grid.n_cols; ++col) {
          const auto& k = kriged[grid.flat_index({r, col})];
          rows.push_back({r, col, k.w_mean, k.w_lo, k.w_hi});
        }
      }
      write_weight_surface(krige_out, rows, write_options(c));
    } else if (*eval) {
      const auto c = eval_flags.load();
      const auto in = load_inputs(c);
      const auto rows = load_predictive(eval_predictive);
      const auto ctm = column_for(in.table, rows, Source::Ctm);
      const auto sat = column_for(in.table, rows, Source::Sat);
      std::unordered_map<std::string, double> site_w;
      if (!eval_weights.empty()) {
        for (const auto& w : load_weights(eval_weights)) site_w[w.site_id] = w.w_mean;
      }
      std::vector<HeldOutPrediction> c_all, c_both, s_both, e_all, e_both;
      for (std::size_t i = 0; i < in.table.records.size(); ++i) {
        const auto& r = in.table.records[i];
        const auto cp = HeldOutPrediction::from(r.y, GaussianSummary{ctm[i].mu, ctm[i].var});
        c_all.push_back(cp);
        const bool both = ctm[i].available && sat[i].available;
        if (both) {
          c_both.push_back(cp);
          s_both.push_back(HeldOutPrediction::from(r.y, GaussianSummary{sat[i].mu, sat[i].var}));
        }
        if (!site_w.empty()) {
          const auto it = site_w.find(in.table.sites[r.site].id);
          if (it == site_w.end()) throw DomainError("no weight for site " + in.table.sites[r.site].id);
          const auto ep = HeldOutPrediction::from(r.y, predict_mixture(ctm[i], sat[i], both ? it->second : 1.0));
          e_all.push_back(ep);
          if (both) e_both.push_back(ep);
        }
      }
      const std::string deriv(to_string(c.input_derivation));
      std::vector<EvalRow> out{{"ctm", "downscaler", deriv, "all", evaluate(c_all)}};
      if (!c_both.empty()) {
        out.push_back({"ctm", "downscaler", deriv, "both_available", evaluate(c_both)});
        out.push_back({"sat", "downscaler", deriv, "both_available", evaluate(s_both)});
      }
      if (!e_all.empty()) {
        out.push_back({"ensemble", std::string(to_string(c.variant)), deriv, "all", evaluate(e_all)});
        if (!e_both.empty()) {
          out.push_back({"ensemble", std::string(to_string(c.variant)), deriv, "both_available", evaluate(e_both)});
        }
      }
      write_eval(eval_out, out, write_options(c));
      for (const auto& row : out) {
        std::cout << row.method << "/" << row.subset << ": rmse " << row.report.rmse << ", coverage "
                  << row.report.coverage95 << ", sd " << row.report.avg_posterior_sd << ", r2 " << row.report.r2
                  << "\n";
      }
    } else if (*run_all) {
      const auto c = run_flags.load();
      const auto result = run_pipeline(c);
      std::cout << "run complete: " << result.run_dir.string() << "\n";
      for (const auto& row : result.eval) {
        std::cout << row.method << "/" << row.estimation << "/" << row.subset << ": rmse " << row.report.rmse
                  << ", coverage " << row.report.coverage95 << ", sd " << row.report.avg_posterior_sd
                  << ", r2 " << row.report.r2 << "\n";
      }
    }
  } catch (const PipelineError& e) {
    std::cerr << "pmfuse: error in stage " << e.stage() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "pmfuse: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
