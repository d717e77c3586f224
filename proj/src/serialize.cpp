#include "pmfuse/serialize.hpp"

#include <fstream>

#include "pmfuse/error.hpp"

namespace pmfuse {

namespace {

Json vec(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd to_vec(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Json locations(std::span<const Location> locs) {
  Json out = Json::array();
  for (const auto& l : locs) out.push_back({{"id", l.id}, {"x", l.x}, {"y", l.y}});
  return out;
}

std::vector<Location> locations_from(const Json& j) {
  std::vector<Location> out;
  for (const auto& e : j) out.push_back({e.at("id").get<std::string>(), e.at("x").get<double>(), e.at("y").get<double>()});
  return out;
}

template <class T>
void maybe(const Json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

Json to_json(const GridSpec& grid) {
  return {{"origin_x", grid.origin_x}, {"origin_y", grid.origin_y}, {"cell_size", grid.cell_size},
          {"n_rows", grid.n_rows},     {"n_cols", grid.n_cols}};
}

GridSpec grid_from_json(const Json& j, Source source) {
  return guarded("grid", [&] {
    GridSpec g;
    g.origin_x = j.at("origin_x").get<double>();
    g.origin_y = j.at("origin_y").get<double>();
    g.cell_size = j.at("cell_size").get<double>();
    g.n_rows = j.at("n_rows").get<int>();
    g.n_cols = j.at("n_cols").get<int>();
    g.source = source;
    g.validate();
    return g;
  });
}

Json to_json(const MCMCConfig& c) {
  return {{"n_iter", c.n_iter},           {"burn_in", c.burn_in},         {"thin", c.thin},
          {"kappa_w", c.kappa_w},         {"kappa_rho", c.kappa_rho},     {"ig_a", c.ig_a},
          {"ig_b", c.ig_b},               {"range_shape", c.range_shape}, {"range_rate", c.range_rate},
          {"adapt", c.adapt}};
}

MCMCConfig mcmc_from_json(const Json& j, MCMCConfig c) {
  return guarded("mcmc", [&] {
    maybe(j, "n_iter", c.n_iter);
    maybe(j, "burn_in", c.burn_in);
    maybe(j, "thin", c.thin);
    maybe(j, "kappa_w", c.kappa_w);
    maybe(j, "kappa_rho", c.kappa_rho);
    maybe(j, "ig_a", c.ig_a);
    maybe(j, "ig_b", c.ig_b);
    maybe(j, "range_shape", c.range_shape);
    maybe(j, "range_rate", c.range_rate);
    maybe(j, "adapt", c.adapt);
    maybe(j, "seed", c.seed);
    c.validate();
    return c;
  });
}

Json to_json(const SceneConfig& c) {
  return {{"n_sites", c.n_sites},
          {"n_days", c.n_days},
          {"first_day", c.first_day},
          {"domain_km", c.domain_km},
          {"ctm_cell_km", c.ctm_cell_km},
          {"sat_cell_km", c.sat_cell_km},
          {"ctm_level", c.ctm_level},
          {"ctm_spatial_sd", c.ctm_spatial_sd},
          {"ctm_temporal_sd", c.ctm_temporal_sd},
          {"ctm_noise_sd", c.ctm_noise_sd},
          {"sat_per_ug", c.sat_per_ug},
          {"sat_noise_sd", c.sat_noise_sd},
          {"sat_missing_rate", c.sat_missing_rate},
          {"monitor_missing_rate", c.monitor_missing_rate},
          {"dynamic_covariates", c.dynamic_covariates},
          {"response_source", to_string(c.response_source)},
          {"intercept", c.intercept},
          {"slope", c.slope},
          {"gamma", c.gamma},
          {"a11", c.a11},
          {"a21", c.a21},
          {"a22", c.a22},
          {"theta1", c.theta1},
          {"theta2", c.theta2},
          {"eta_alpha0", c.eta_alpha0},
          {"eta_beta0", c.eta_beta0},
          {"sigma2_alpha0", c.sigma2_alpha0},
          {"sigma2_beta0", c.sigma2_beta0},
          {"sigma2_y", c.sigma2_y},
          {"weight_pattern", c.weight_pattern == WeightPattern::Gp ? "gp" : "half_split"},
          {"tau2", c.tau2},
          {"rho", c.rho},
          {"half_split_q", c.half_split_q},
          {"ens_bias_sd", c.ens_bias_sd},
          {"ens_sd_good", c.ens_sd_good},
          {"ens_sd_bad", c.ens_sd_bad},
          {"seed", c.seed}};
}

SceneConfig scene_from_json(const Json& j) {
  return guarded("scene", [&] {
    SceneConfig c;
    maybe(j, "n_sites", c.n_sites);
    maybe(j, "n_days", c.n_days);
    maybe(j, "first_day", c.first_day);
    maybe(j, "domain_km", c.domain_km);
    maybe(j, "ctm_cell_km", c.ctm_cell_km);
    maybe(j, "sat_cell_km", c.sat_cell_km);
    maybe(j, "ctm_level", c.ctm_level);
    maybe(j, "ctm_spatial_sd", c.ctm_spatial_sd);
    maybe(j, "ctm_temporal_sd", c.ctm_temporal_sd);
    maybe(j, "ctm_noise_sd", c.ctm_noise_sd);
    maybe(j, "sat_per_ug", c.sat_per_ug);
    maybe(j, "sat_noise_sd", c.sat_noise_sd);
    maybe(j, "sat_missing_rate", c.sat_missing_rate);
    maybe(j, "monitor_missing_rate", c.monitor_missing_rate);
    maybe(j, "dynamic_covariates", c.dynamic_covariates);
    if (j.contains("response_source")) c.response_source = parse_source(j.at("response_source").get<std::string>());
    maybe(j, "intercept", c.intercept);
    maybe(j, "slope", c.slope);
    maybe(j, "gamma", c.gamma);
    maybe(j, "a11", c.a11);
    maybe(j, "a21", c.a21);
    maybe(j, "a22", c.a22);
    maybe(j, "theta1", c.theta1);
    maybe(j, "theta2", c.theta2);
    maybe(j, "eta_alpha0", c.eta_alpha0);
    maybe(j, "eta_beta0", c.eta_beta0);
    maybe(j, "sigma2_alpha0", c.sigma2_alpha0);
    maybe(j, "sigma2_beta0", c.sigma2_beta0);
    maybe(j, "sigma2_y", c.sigma2_y);
    if (j.contains("weight_pattern")) {
      const auto p = j.at("weight_pattern").get<std::string>();
      if (p == "gp") {
        c.weight_pattern = WeightPattern::Gp;
      } else if (p == "half_split") {
        c.weight_pattern = WeightPattern::HalfSplit;
      } else {
        throw ConfigError("unknown weight_pattern '" + p + "'");
      }
    }
    maybe(j, "tau2", c.tau2);
    maybe(j, "rho", c.rho);
    maybe(j, "half_split_q", c.half_split_q);
    maybe(j, "ens_bias_sd", c.ens_bias_sd);
    maybe(j, "ens_sd_good", c.ens_sd_good);
    maybe(j, "ens_sd_bad", c.ens_sd_bad);
    maybe(j, "seed", c.seed);
    c.validate();
    return c;
  });
}

Json to_json(const DownscalerFit& fit) {
  Json samples = Json::array();
  for (const auto& s : fit.samples) {
    samples.push_back({{"fixed", vec(s.fixed)},
                       {"alpha0", vec(s.alpha0)},
                       {"beta0", vec(s.beta0)},
                       {"a11", s.a11},
                       {"a21", s.a21},
                       {"a22", s.a22},
                       {"v1", vec(s.v1)},
                       {"v2", vec(s.v2)},
                       {"sigma2_y", s.sigma2_y},
                       {"eta_alpha0", s.eta_alpha0},
                       {"eta_beta0", s.eta_beta0},
                       {"sigma2_alpha0", s.sigma2_alpha0},
                       {"sigma2_beta0", s.sigma2_beta0},
                       {"theta1", s.theta1},
                       {"theta2", s.theta2}});
  }
  return {{"kind", "downscaler_fit"},
          {"source", to_string(fit.source)},
          {"sites", locations(fit.sites)},
          {"day_lo", fit.day_lo},
          {"n_days", fit.n_days},
          {"n_cov", fit.n_cov},
          {"cov_mean", vec(fit.cov_mean)},
          {"cov_sd", vec(fit.cov_sd)},
          {"theta1_acceptance", fit.theta1_acceptance},
          {"theta2_acceptance", fit.theta2_acceptance},
          {"samples", samples}};
}

DownscalerFit downscaler_fit_from_json(const Json& j) {
  return guarded("downscaler fit", [&] {
    if (j.value("kind", "") != "downscaler_fit") throw ConfigError("not a downscaler fit");
    DownscalerFit fit;
    fit.source = parse_source(j.at("source").get<std::string>());
    fit.sites = locations_from(j.at("sites"));
    fit.day_lo = j.at("day_lo").get<int>();
    fit.n_days = j.at("n_days").get<std::size_t>();
    fit.n_cov = j.at("n_cov").get<std::size_t>();
    fit.cov_mean = to_vec(j.at("cov_mean"));
    fit.cov_sd = to_vec(j.at("cov_sd"));
    fit.theta1_acceptance = j.at("theta1_acceptance").get<double>();
    fit.theta2_acceptance = j.at("theta2_acceptance").get<double>();
    for (const auto& e : j.at("samples")) {
      DownscalerState s;
      s.fixed = to_vec(e.at("fixed"));
      s.alpha0 = to_vec(e.at("alpha0"));
      s.beta0 = to_vec(e.at("beta0"));
      s.a11 = e.at("a11").get<double>();
      s.a21 = e.at("a21").get<double>();
      s.a22 = e.at("a22").get<double>();
      s.v1 = to_vec(e.at("v1"));
      s.v2 = to_vec(e.at("v2"));
      s.sigma2_y = e.at("sigma2_y").get<double>();
      s.eta_alpha0 = e.at("eta_alpha0").get<double>();
      s.eta_beta0 = e.at("eta_beta0").get<double>();
      s.sigma2_alpha0 = e.at("sigma2_alpha0").get<double>();
      s.sigma2_beta0 = e.at("sigma2_beta0").get<double>();
      s.theta1 = e.at("theta1").get<double>();
      s.theta2 = e.at("theta2").get<double>();
      fit.samples.push_back(std::move(s));
    }
    return fit;
  });
}

Json to_json(const WeightPosterior& p) {
  Json summaries = Json::array();
  for (const auto& s : p.summaries) {
    summaries.push_back({{"w_mean", s.w_mean},
                         {"w_lo", s.w_lo},
                         {"w_hi", s.w_hi},
                         {"q_mean", s.q_mean},
                         {"w_median", s.w_median}});
  }
  Json samples = Json::array();
  for (const auto& f : p.samples) samples.push_back({{"q", vec(f.q)}, {"tau2", f.tau2}, {"rho", f.rho}});
  return {{"kind", "weight_posterior"},
          {"variant", to_string(p.variant)},
          {"sites", locations(p.sites)},
          {"summaries", summaries},
          {"field_sites", locations(p.field_sites)},
          {"q_acceptance", p.q_acceptance},
          {"rho_acceptance", p.rho_acceptance},
          {"samples", samples}};
}

WeightPosterior weight_posterior_from_json(const Json& j) {
  return guarded("weight posterior", [&] {
    if (j.value("kind", "") != "weight_posterior") throw ConfigError("not a weight posterior");
    WeightPosterior p;
    p.variant = parse_variant(j.at("variant").get<std::string>());
    p.sites = locations_from(j.at("sites"));
    for (const auto& s : j.at("summaries")) {
      p.summaries.push_back({s.at("w_mean").get<double>(), s.at("w_lo").get<double>(),
                             s.at("w_hi").get<double>(), s.at("q_mean").get<double>(),
                             s.at("w_median").get<double>()});
    }
    p.field_sites = locations_from(j.at("field_sites"));
    p.q_acceptance = j.at("q_acceptance").get<double>();
    p.rho_acceptance = j.at("rho_acceptance").get<double>();
    for (const auto& f : j.at("samples")) {
      p.samples.push_back({to_vec(f.at("q")), f.at("tau2").get<double>(), f.at("rho").get<double>()});
    }
    return p;
  });
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j, bool overwrite) {
  if (!overwrite && std::filesystem::exists(path)) {
    throw ConfigError("refusing to overwrite existing file " + path.string());
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed to write " + path.string());
}

}  // namespace pmfuse
