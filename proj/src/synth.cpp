#include "pmfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

#include "pmfuse/error.hpp"
#include "pmfuse/kernels.hpp"
#include "pmfuse/random.hpp"

namespace pmfuse {

namespace {

enum Stream : std::uint64_t {
  kSites = 1,
  kCtmSpatial,
  kCtmTemporal,
  kCtmNoise,
  kSatDetail,
  kSatNoise,
  kSatMask,
  kCovariates,
  kLatentV,
  kCar,
  kResponse,
  kMonitorMask,
  kWeights,
  kEnsemble,
};

/// Unit-variance smooth random field from random cosine features.
class SmoothField {
 public:
  SmoothField(Rng& rng, double min_wavelength, double max_wavelength, int n_features = 24) {
    for (int k = 0; k < n_features; ++k) {
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      const double wavelength = min_wavelength + (max_wavelength - min_wavelength) * rng.uniform();
      const double freq = 2.0 * std::numbers::pi / wavelength;
      kx_.push_back(freq * std::cos(angle));
      ky_.push_back(freq * std::sin(angle));
      phase_.push_back(2.0 * std::numbers::pi * rng.uniform());
    }
    norm_ = std::sqrt(2.0 / n_features);
  }

  double operator()(double x, double y) const {
    double total = 0.0;
    for (std::size_t k = 0; k < kx_.size(); ++k) total += std::cos(kx_[k] * x + ky_[k] * y + phase_[k]);
    return norm_ * total;
  }

 private:
  std::vector<double> kx_, ky_, phase_;
  double norm_ = 1.0;
};

/// Draw from the proper CAR with precision (D - eta W) / sigma2 on a path.
Eigen::VectorXd sample_car(std::size_t n, double eta, double sigma2, Rng& rng) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (sigma2 <= 0.0 || n == 0) return out;
  if (n == 1) {
    out(0) = std::sqrt(sigma2) * rng.normal();
    return out;
  }
  BandedCholesky chol(n, 1);
  chol.set_zero();
  for (std::size_t t = 0; t < n; ++t) {
    chol.at(t, t) = (t == 0 || t + 1 == n) ? 1.0 : 2.0;
    if (t > 0) chol.at(t, t - 1) = -eta;
  }
  chol.factorize();
  std::vector<double> e(n);
  for (auto& v : e) v = rng.normal();
  chol.upper_solve_in_place(e);
  for (std::size_t t = 0; t < n; ++t) out(static_cast<Eigen::Index>(t)) = std::sqrt(sigma2) * e[t];
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("scene config: ") + what);
}

}  // namespace

void SceneConfig::validate() const {
  require(n_sites >= 1, "n_sites must be at least 1");
  require(n_days >= 1, "n_days must be at least 1");
  require(domain_km > 0.0 && ctm_cell_km > 0.0 && sat_cell_km > 0.0, "sizes must be positive");
  require(sat_missing_rate >= 0.0 && sat_missing_rate <= 1.0, "sat_missing_rate must lie in [0, 1]");
  require(monitor_missing_rate >= 0.0 && monitor_missing_rate < 1.0,
          "monitor_missing_rate must lie in [0, 1)");
  require(theta1 > 0.0 && theta2 > 0.0 && rho > 0.0, "ranges must be positive");
  require(eta_alpha0 >= 0.0 && eta_alpha0 < 1.0 && eta_beta0 >= 0.0 && eta_beta0 < 1.0,
          "CAR dependence must lie in [0, 1)");
  require(sigma2_alpha0 >= 0.0 && sigma2_beta0 >= 0.0 && sigma2_y >= 0.0 && tau2 >= 0.0,
          "variances must be non-negative");
  require(ens_sd_good > 0.0 && ens_sd_bad > 0.0 && ens_bias_sd >= 0.0, "ensemble sds invalid");
}

GridSpec SceneConfig::ctm_grid() const {
  const int n = static_cast<int>(std::ceil(domain_km / ctm_cell_km - 1e-9));
  return {0.0, 0.0, ctm_cell_km, n, n, Source::Ctm};
}

GridSpec SceneConfig::sat_grid() const {
  const int n = static_cast<int>(std::ceil(domain_km / sat_cell_km - 1e-9));
  return {0.0, 0.0, sat_cell_km, n, n, Source::Sat};
}

Eigen::VectorXd sample_exp_gp(std::span<const Location> locations, double variance, double range,
                              std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(locations.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  if (n == 0 || variance <= 0.0) return out;
  const CholeskyFactor factor(exp_cov_matrix(distance_matrix(locations), {variance, range}));
  Rng rng(seed);
  Eigen::VectorXd e(n);
  for (Eigen::Index i = 0; i < n; ++i) e(i) = rng.normal();
  return factor.lower() * e;
}

SceneTruth generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  SceneTruth truth;
  truth.config = cfg;
  truth.ctm_grid = cfg.ctm_grid();
  truth.sat_grid = cfg.sat_grid();
  const auto n_days = static_cast<std::size_t>(cfg.n_days);
  const auto n_sites = static_cast<std::size_t>(cfg.n_sites);

  {
    Rng rng(derive_seed(cfg.seed, kSites));
    for (std::size_t s = 0; s < n_sites; ++s) {
      char id[32];
      std::snprintf(id, sizeof id, "S%03zu", s + 1);
      truth.sites.push_back({id, cfg.domain_km * rng.uniform(), cfg.domain_km * rng.uniform()});
    }
  }

  // CTM: smooth spatial pattern + regional day signal with spatially varying
  // amplitude + cell-day noise.
  const GridSpec& cg = truth.ctm_grid;
  truth.ctm = GriddedField(cg, cfg.first_day, cfg.n_days);
  {
    Rng srng(derive_seed(cfg.seed, kCtmSpatial));
    const SmoothField level(srng, 150.0, 600.0);
    const SmoothField amplitude(srng, 200.0, 800.0);
    Rng trng(derive_seed(cfg.seed, kCtmTemporal));
    std::vector<double> day_signal(n_days);
    double ar = trng.normal();
    for (auto& d : day_signal) {
      d = ar;
      ar = 0.8 * ar + std::sqrt(1.0 - 0.64) * trng.normal();
    }
    std::vector<double> base(cg.cell_count()), amp(cg.cell_count());
    for (int r = 0; r < cg.n_rows; ++r) {
      for (int c = 0; c < cg.n_cols; ++c) {
        const std::size_t i = cg.flat_index({r, c});
        base[i] = cfg.ctm_level + cfg.ctm_spatial_sd * level(cg.center_x(c), cg.center_y(r));
        amp[i] = cfg.ctm_temporal_sd * (1.0 + 0.3 * amplitude(cg.center_x(c), cg.center_y(r)));
      }
    }
    Rng nrng(derive_seed(cfg.seed, kCtmNoise));
    for (std::size_t t = 0; t < n_days; ++t) {
      double* out = truth.ctm.values.data() + t * cg.cell_count();
      for (std::size_t i = 0; i < cg.cell_count(); ++i) {
        out[i] = base[i] + amp[i] * day_signal[t] + cfg.ctm_noise_sd * nrng.normal();
      }
    }
  }

  // SAT: AOD tracking the CTM field with finer-scale detail, then masked.
  const GridSpec& sg = truth.sat_grid;
  truth.sat = GriddedField(sg, cfg.first_day, cfg.n_days);
  GriddedField sat_full(sg, cfg.first_day, cfg.n_days);
  {
    Rng drng(derive_seed(cfg.seed, kSatDetail));
    const SmoothField detail(drng, 30.0, 120.0);
    std::vector<std::size_t> parent(sg.cell_count());
    std::vector<double> fine(sg.cell_count());
    for (int r = 0; r < sg.n_rows; ++r) {
      for (int c = 0; c < sg.n_cols; ++c) {
        const std::size_t i = sg.flat_index({r, c});
        parent[i] = cg.flat_index(link_point_to_cell(sg.center_x(c), sg.center_y(r), cg));
        fine[i] = detail(sg.center_x(c), sg.center_y(r));
      }
    }
    Rng nrng(derive_seed(cfg.seed, kSatNoise));
    Rng mrng(derive_seed(cfg.seed, kSatMask));
    for (std::size_t t = 0; t < n_days; ++t) {
      const double* coarse = truth.ctm.values.data() + t * cg.cell_count();
      double* full = sat_full.values.data() + t * sg.cell_count();
      double* masked = truth.sat.values.data() + t * sg.cell_count();
      for (std::size_t i = 0; i < sg.cell_count(); ++i) {
        full[i] = cfg.sat_per_ug * (coarse[parent[i]] + fine[i]) + cfg.sat_noise_sd * nrng.normal();
        masked[i] = mrng.bernoulli(cfg.sat_missing_rate) ? kMissing : full[i];
      }
    }
  }

  // Covariates on the SAT grid.
  truth.covariates.grid = sg;
  truth.covariates.dynamic = cfg.dynamic_covariates;
  truth.covariates.day_lo = cfg.first_day;
  truth.covariates.n_days = cfg.dynamic_covariates ? cfg.n_days : 1;
  {
    Rng rng(derive_seed(cfg.seed, kCovariates));
    std::vector<SmoothField> fields;
    for (std::size_t j = 0; j < kNumCovariates; ++j) fields.emplace_back(rng, 40.0, 400.0);
    std::vector<Covariates> base(sg.cell_count());
    for (int r = 0; r < sg.n_rows; ++r) {
      for (int c = 0; c < sg.n_cols; ++c) {
        auto& cov = base[sg.flat_index({r, c})];
        for (std::size_t j = 0; j < kNumCovariates; ++j) cov[j] = fields[j](sg.center_x(c), sg.center_y(r));
      }
    }
    if (!cfg.dynamic_covariates) {
      truth.covariates.values = std::move(base);
    } else {
      // Wind and temperature get a regional day term.
      truth.covariates.values.reserve(n_days * sg.cell_count());
      for (std::size_t t = 0; t < n_days; ++t) {
        const double wind = rng.normal();
        const double temp = rng.normal();
        for (const auto& cell : base) {
          Covariates cov = cell;
          cov[4] += wind;
          cov[5] += temp;
          truth.covariates.values.push_back(cov);
        }
      }
    }
  }

  // Monitor responses.
  const GridLink link(truth.sites, cg, sg);
  const auto S = static_cast<Eigen::Index>(n_sites);
  truth.v1 = sample_exp_gp(truth.sites, 1.0, cfg.theta1, derive_seed(cfg.seed, kLatentV));
  truth.v2 = sample_exp_gp(truth.sites, 1.0, cfg.theta2, derive_seed(derive_seed(cfg.seed, kLatentV), 1));
  {
    Rng rng(derive_seed(cfg.seed, kCar));
    truth.alpha0 = sample_car(n_days, cfg.eta_alpha0, cfg.sigma2_alpha0, rng);
    truth.beta0 = sample_car(n_days, cfg.eta_beta0, cfg.sigma2_beta0, rng);
  }
  truth.table.sites = truth.sites;
  {
    Rng rng(derive_seed(cfg.seed, kResponse));
    Rng mrng(derive_seed(cfg.seed, kMonitorMask));
    const double noise_sd = std::sqrt(cfg.sigma2_y);
    for (std::size_t s = 0; s < n_sites; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      const double alpha1 = cfg.a11 * truth.v1(si);
      const double beta1 = cfg.a21 * truth.v1(si) + cfg.a22 * truth.v2(si);
      const CellIndex ccell = link.ctm_cell(s);
      const CellIndex scell = link.sat_cell(s);
      const std::size_t sflat = sg.flat_index(scell);
      for (std::size_t t = 0; t < n_days; ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        const int day = cfg.first_day + static_cast<int>(t);
        ObservationRecord rec;
        rec.site = s;
        rec.day = day;
        rec.x_ctm = truth.ctm.at(day, ccell);
        rec.x_sat = truth.sat.at(day, scell);
        rec.z = truth.covariates.at(day, sflat);
        const double x = cfg.response_source == Source::Ctm ? rec.x_ctm : sat_full.at(day, scell);
        double y = cfg.intercept + truth.alpha0(ti) + alpha1 + (cfg.slope + truth.beta0(ti) + beta1) * x;
        for (std::size_t j = 0; j < kNumCovariates; ++j) y += cfg.gamma[j] * rec.z[j];
        rec.y = y + noise_sd * rng.normal();
        if (cfg.monitor_missing_rate > 0.0 && mrng.bernoulli(cfg.monitor_missing_rate)) continue;
        truth.table.records.push_back(rec);
      }
    }
  }

  // Weight field and mixture-generated ensemble inputs.
  if (cfg.weight_pattern == WeightPattern::Gp) {
    truth.q = sample_exp_gp(truth.sites, cfg.tau2, cfg.rho, derive_seed(cfg.seed, kWeights));
  } else {
    truth.q.resize(S);
    for (Eigen::Index s = 0; s < S; ++s) {
      truth.q(s) = truth.sites[s].x < 0.5 * cfg.domain_km ? cfg.half_split_q : -cfg.half_split_q;
    }
  }
  truth.w = truth.q.unaryExpr([](double v) { return inv_logit(v); });
  {
    Rng rng(derive_seed(cfg.seed, kEnsemble));
    truth.ensemble.reserve(n_sites * n_days);
    truth.z.reserve(n_sites * n_days);
    for (std::size_t s = 0; s < n_sites; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      const CellIndex ccell = link.ctm_cell(s);
      const CellIndex scell = link.sat_cell(s);
      double sd1 = cfg.ens_sd_good;
      double sd2 = cfg.ens_sd_good;
      if (cfg.weight_pattern == WeightPattern::HalfSplit) {
        const bool left = truth.sites[s].x < 0.5 * cfg.domain_km;
        sd1 = left ? cfg.ens_sd_good : cfg.ens_sd_bad;
        sd2 = left ? cfg.ens_sd_bad : cfg.ens_sd_good;
      }
      for (std::size_t t = 0; t < n_days; ++t) {
        const int day = cfg.first_day + static_cast<int>(t);
        const double latent = truth.ctm.at(day, ccell);
        EnsembleObservation o;
        o.site = s;
        o.day = day;
        o.ctm = {latent + cfg.ens_bias_sd * rng.normal(), sd1 * sd1, true};
        o.sat = {latent + cfg.ens_bias_sd * rng.normal(), sd2 * sd2,
                 !is_missing(truth.sat.at(day, scell))};
        const bool from_ctm = rng.bernoulli(truth.w(si));
        o.y = from_ctm ? o.ctm.mu + sd1 * rng.normal() : o.sat.mu + sd2 * rng.normal();
        truth.ensemble.push_back(o);
        truth.z.push_back(from_ctm ? 1 : 0);
      }
    }
  }
  return truth;
}

double GridWeightPosterior::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) m += grid[i] * prob[i];
  return m;
}

double GridWeightPosterior::mass_above(double w) const {
  double m = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] > w) m += prob[i];
  }
  return m;
}

GridWeightPosterior brute_force_weight_posterior(std::span<const EnsembleObservation> obs, int n_grid,
                                                 double prior_a, double prior_b) {
  if (n_grid < 2) throw DomainError("weight grid needs at least two points");
  GridWeightPosterior post;
  post.grid.resize(static_cast<std::size_t>(n_grid));
  std::vector<double> logp(post.grid.size());
  std::vector<double> d1, d2;
  for (const auto& o : obs) {
    if (!o.both_available()) continue;
    auto dens = [&](const PredictiveInput& c) {
      const double e = o.y - c.mu;
      return std::exp(-0.5 * e * e / c.var) / std::sqrt(2.0 * std::numbers::pi * c.var);
    };
    d1.push_back(dens(o.ctm));
    d2.push_back(dens(o.sat));
  }
  for (int k = 0; k < n_grid; ++k) {
    const double w = (k + 0.5) / n_grid;
    post.grid[k] = w;
    double lp = (prior_a - 1.0) * std::log(w) + (prior_b - 1.0) * std::log(1.0 - w);
    for (std::size_t t = 0; t < d1.size(); ++t) lp += std::log(w * d1[t] + (1.0 - w) * d2[t]);
    logp[k] = lp;
  }
  const double top = *std::max_element(logp.begin(), logp.end());
  post.prob.resize(logp.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logp.size(); ++k) total += post.prob[k] = std::exp(logp[k] - top);
  for (auto& p : post.prob) p /= total;
  return post;
}

double brute_force_mixture_cdf(const MixtureDistribution& m, double x) {
  const auto phi = [](double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); };
  return m.w * phi((x - m.mu1) / std::sqrt(m.var1)) + (1.0 - m.w) * phi((x - m.mu2) / std::sqrt(m.var2));
}

double grid_mixture_quantile(const MixtureDistribution& m, double p, double step_sd) {
  const double step = step_sd * m.sd();
  const double lo = std::min(m.mu1 - 40.0 * std::sqrt(m.var1), m.mu2 - 40.0 * std::sqrt(m.var2));
  const double hi = std::max(m.mu1 + 40.0 * std::sqrt(m.var1), m.mu2 + 40.0 * std::sqrt(m.var2));
  long a = 0;
  long b = static_cast<long>(std::ceil((hi - lo) / step));
  while (b - a > 1) {
    const long mid = a + (b - a) / 2;
    if (brute_force_mixture_cdf(m, lo + mid * step) < p) {
      a = mid;
    } else {
      b = mid;
    }
  }
  const double xa = lo + a * step;
  const double fa = brute_force_mixture_cdf(m, xa);
  const double fb = brute_force_mixture_cdf(m, xa + step);
  return fb > fa ? xa + step * (p - fa) / (fb - fa) : xa;
}

VariogramFit fit_exponential_variogram(std::span<const Location> locations, const Eigen::VectorXd& values,
                                       int n_bins) {
  const Eigen::MatrixXd d = distance_matrix(locations);
  const double max_d = 0.5 * d.maxCoeff();
  if (!(max_d > 0.0) || n_bins < 2) throw DomainError("variogram needs separated locations");
  std::vector<double> sum(n_bins, 0.0), dist(n_bins, 0.0), count(n_bins, 0.0);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (d(i, j) >= max_d) continue;
      const auto b = static_cast<std::size_t>(d(i, j) / max_d * n_bins);
      const double diff = values(i) - values(j);
      sum[b] += 0.5 * diff * diff;
      dist[b] += d(i, j);
      count[b] += 1.0;
    }
  }
  VariogramFit best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 400; ++k) {
    const double range = max_d * 0.01 * std::pow(1000.0, k / 400.0);
    // Closed-form sill for this range under count weights.
    double num = 0.0, den = 0.0;
    for (int b = 0; b < n_bins; ++b) {
      if (count[b] == 0.0) continue;
      const double shape = 1.0 - std::exp(-dist[b] / count[b] / range);
      num += count[b] * shape * sum[b] / count[b];
      den += count[b] * shape * shape;
    }
    const double sill = num / den;
    double loss = 0.0;
    for (int b = 0; b < n_bins; ++b) {
      if (count[b] == 0.0) continue;
      const double r = sum[b] / count[b] - sill * (1.0 - std::exp(-dist[b] / count[b] / range));
      loss += count[b] * r * r;
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = {sill, range};
    }
  }
  return best;
}

}  // namespace pmfuse
