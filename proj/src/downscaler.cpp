#include "pmfuse/downscaler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "pmfuse/error.hpp"

namespace pmfuse {

namespace {
constexpr double kCoregionalizationPriorVar = 1.0e3;
constexpr double kLogTwoPi = 1.8378770664093454836;
}  // namespace

DownscalerDesign DownscalerDesign::build(const ObservationTable& table, Source source,
                                         DayRange days) {
  if (days.last < days.first + 1) throw InsufficientData("downscaler needs at least two days");
  DownscalerDesign d;
  d.source = source;
  d.day_lo = days.first;
  d.n_days = days.size();
  d.n_cov = source == Source::Sat ? kNumCovariates : 0;

  // Sites with any record, in table order.
  std::vector<long> local(table.sites.size(), -1);
  std::vector<std::size_t> usable_count;
  for (const auto& r : table.records) {
    if (r.site >= table.sites.size()) throw DomainError("record references an unknown site");
    if (local[r.site] < 0) local[r.site] = 0;
  }
  for (std::size_t s = 0; s < table.sites.size(); ++s) {
    if (local[s] >= 0) {
      local[s] = static_cast<long>(d.sites.size());
      d.sites.push_back(table.sites[s]);
    }
  }
  if (d.sites.empty()) throw InsufficientData("no observations to fit");
  usable_count.assign(d.sites.size(), 0);

  for (const auto& r : table.records) {
    const double x = r.x(source);
    if (is_missing(x)) continue;
    if (r.day < days.first || r.day > days.last) throw OutOfDomain("record day outside fit range");
    if (!std::isfinite(r.y) || !std::isfinite(x)) throw DomainError("non-finite observation");
    const auto s = static_cast<std::uint32_t>(local[r.site]);
    d.site.push_back(s);
    d.day.push_back(static_cast<std::uint32_t>(r.day - days.first));
    d.y.push_back(r.y);
    d.x.push_back(x);
    for (std::size_t j = 0; j < d.n_cov; ++j) d.z.push_back(r.z[j]);
    ++usable_count[s];
  }
  for (std::size_t s = 0; s < d.sites.size(); ++s) {
    if (usable_count[s] == 0) {
      throw InsufficientData("site '" + d.sites[s].id + "' has no usable " +
                             std::string(to_string(source)) + " records");
    }
  }

  const std::size_t n = d.y.size();
  d.cov_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n_cov));
  d.cov_sd = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d.n_cov));
  for (std::size_t j = 0; j < d.n_cov; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += d.z[i * d.n_cov + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = d.z[i * d.n_cov + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(std::max<std::size_t>(n - 1, 1));
    if (!(var > 0.0)) {
      throw InsufficientData("covariate '" + std::string(kCovariateNames[j]) + "' is constant");
    }
    const double sd = std::sqrt(var);
    d.cov_mean(static_cast<Eigen::Index>(j)) = mean;
    d.cov_sd(static_cast<Eigen::Index>(j)) = sd;
    for (std::size_t i = 0; i < n; ++i) d.z[i * d.n_cov + j] = (d.z[i * d.n_cov + j] - mean) / sd;
  }
  return d;
}

Eigen::VectorXd DownscalerFit::gamma_original(std::size_t k) const {
  const auto& f = samples.at(k).fixed;
  Eigen::VectorXd g(static_cast<Eigen::Index>(n_cov));
  for (std::size_t j = 0; j < n_cov; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    g(jj) = f(2 + jj) / cov_sd(jj);
  }
  return g;
}

DownscalerSampler::DownscalerSampler(DownscalerDesign design, const MCMCConfig& config)
    : design_(std::move(design)),
      config_(config),
      car_(design_.n_days),
      theta1_scale_(config.kappa_rho),
      theta2_scale_(config.kappa_rho) {
  config_.validate();
  const std::size_t n_days = design_.n_days;
  const std::size_t n_sites = design_.n_sites();
  const std::size_t p = design_.n_fixed();
  const auto pp = static_cast<Eigen::Index>(p);
  distances_ = distance_matrix(design_.sites);

  day_n_.assign(n_days, 0.0);
  day_sx_.assign(n_days, 0.0);
  day_sxx_.assign(n_days, 0.0);
  site_n_.assign(n_sites, 0.0);
  site_sx_.assign(n_sites, 0.0);
  site_sxx_.assign(n_sites, 0.0);
  cross_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n_days), pp);
  gram_ = Eigen::MatrixXd::Zero(pp, pp);
  Eigen::VectorXd h(pp);
  for (std::size_t i = 0; i < design_.n_records(); ++i) {
    const double x = design_.x[i];
    const auto t = design_.day[i];
    const auto s = design_.site[i];
    day_n_[t] += 1.0;
    day_sx_[t] += x;
    day_sxx_[t] += x * x;
    site_n_[s] += 1.0;
    site_sx_[s] += x;
    site_sxx_[s] += x * x;
    h(0) = 1.0;
    h(1) = x;
    for (std::size_t j = 0; j < design_.n_cov; ++j) h(2 + static_cast<Eigen::Index>(j)) = design_.z_at(i, j);
    cross_.row(2 * t) += h.transpose();
    cross_.row(2 * t + 1) += x * h.transpose();
    gram_.selfadjointView<Eigen::Lower>().rankUpdate(h);
  }
  gram_ = gram_.selfadjointView<Eigen::Lower>();
  initialize();
}

void DownscalerSampler::initialize() {
  const std::size_t n = design_.n_records();
  const std::size_t p = design_.n_fixed();
  const auto pp = static_cast<Eigen::Index>(p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(pp);
  for (std::size_t i = 0; i < n; ++i) {
    rhs(0) += design_.y[i];
    rhs(1) += design_.x[i] * design_.y[i];
    for (std::size_t j = 0; j < design_.n_cov; ++j) {
      rhs(2 + static_cast<Eigen::Index>(j)) += design_.z_at(i, j) * design_.y[i];
    }
  }
  Eigen::MatrixXd g = gram_;
  g.diagonal().array() += 1e-8 * (1.0 + g.diagonal().array().abs());
  state_.fixed = g.ldlt().solve(rhs);

  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = design_.y[i] - fixed_part(i);
    ss += r * r;
  }
  const double resid_var = std::max(ss / static_cast<double>(std::max<std::size_t>(n, 1)), 1e-6);

  const auto n_days = static_cast<Eigen::Index>(design_.n_days);
  const auto n_sites = static_cast<Eigen::Index>(design_.n_sites());
  state_.alpha0 = Eigen::VectorXd::Zero(n_days);
  state_.beta0 = Eigen::VectorXd::Zero(n_days);
  state_.v1 = Eigen::VectorXd::Zero(n_sites);
  state_.v2 = Eigen::VectorXd::Zero(n_sites);
  state_.a11 = std::sqrt(0.3 * resid_var);
  state_.a21 = 0.0;
  state_.a22 = 0.05 + 0.1 * std::abs(state_.fixed(1));
  state_.sigma2_y = 0.7 * resid_var;
  state_.sigma2_alpha0 = 0.1 * resid_var;
  state_.sigma2_beta0 = 0.01 * (state_.fixed(1) * state_.fixed(1) + 0.01);
  const double diameter = domain_diameter(design_.sites);
  state_.theta1 = diameter > 0.0 ? std::max(diameter / 4.0, 1.0) : 100.0;
  state_.theta2 = state_.theta1;
  refresh_range_cache(1);
  refresh_range_cache(2);
}

void DownscalerSampler::set_state(const DownscalerState& state) {
  state_ = state;
  refresh_range_cache(1);
  refresh_range_cache(2);
}

void DownscalerSampler::refresh_range_cache(int which) {
  const double theta = which == 1 ? state_.theta1 : state_.theta2;
  auto& factor = range_factor_[which - 1];
  factor = CholeskyFactor(exp_cov_matrix(distances_, {1.0, theta}));
  range_inverse_[which - 1] = factor.inverse();
}

double DownscalerSampler::fixed_part(std::size_t i) const {
  const auto& f = state_.fixed;
  double v = f(0) + f(1) * design_.x[i];
  for (std::size_t j = 0; j < design_.n_cov; ++j) {
    v += f(2 + static_cast<Eigen::Index>(j)) * design_.z_at(i, j);
  }
  return v;
}

double DownscalerSampler::temporal_part(std::size_t i) const {
  const auto t = design_.day[i];
  return state_.alpha0(t) + state_.beta0(t) * design_.x[i];
}

double DownscalerSampler::spatial_part(std::size_t i) const {
  const auto s = static_cast<Eigen::Index>(design_.site[i]);
  return state_.alpha1(s) + state_.beta1(s) * design_.x[i];
}

double DownscalerSampler::record_mean(std::size_t i) const {
  return fixed_part(i) + temporal_part(i) + spatial_part(i);
}

void DownscalerSampler::update_temporal_and_fixed(Rng& rng) {
  const std::size_t n_days = design_.n_days;
  const std::size_t m = 2 * n_days;
  const auto p = static_cast<Eigen::Index>(design_.n_fixed());
  const double prec_y = 1.0 / state_.sigma2_y;
  const double prec_a = 1.0 / state_.sigma2_alpha0;
  const double prec_b = 1.0 / state_.sigma2_beta0;

  std::vector<double> lb(m, 0.0);
  Eigen::VectorXd lf = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < design_.n_records(); ++i) {
    const double r = (design_.y[i] - spatial_part(i)) * prec_y;
    const double x = design_.x[i];
    const auto t = design_.day[i];
    lb[2 * t] += r;
    lb[2 * t + 1] += x * r;
    lf(0) += r;
    lf(1) += x * r;
    for (std::size_t j = 0; j < design_.n_cov; ++j) lf(2 + static_cast<Eigen::Index>(j)) += design_.z_at(i, j) * r;
  }

  BandedCholesky band(m, 2);
  for (std::size_t t = 0; t < n_days; ++t) {
    const double nb = car_.neighbor_count(t);
    band.at(2 * t, 2 * t) = nb * prec_a + day_n_[t] * prec_y;
    band.at(2 * t + 1, 2 * t) = day_sx_[t] * prec_y;
    band.at(2 * t + 1, 2 * t + 1) = nb * prec_b + day_sxx_[t] * prec_y;
    if (t + 1 < n_days) {
      band.at(2 * t + 2, 2 * t) = -state_.eta_alpha0 * prec_a;
      band.at(2 * t + 3, 2 * t + 1) = -state_.eta_beta0 * prec_b;
    }
  }
  band.factorize();

  // Marginal of the fixed effects via the Schur complement of the band block.
  Eigen::MatrixXd solved = cross_ * prec_y;  // becomes Qb^{-1} B
  for (Eigen::Index j = 0; j < p; ++j) {
    band.solve_in_place(std::span<double>(solved.col(j).data(), m));
  }
  std::vector<double> u = lb;
  band.solve_in_place(u);
  const Eigen::Map<const Eigen::VectorXd> u_vec(u.data(), static_cast<Eigen::Index>(m));
  const Eigen::MatrixXd schur = gram_ * prec_y - (cross_ * prec_y).transpose() * solved;
  const Eigen::VectorXd schur_rhs = lf - (cross_ * prec_y).transpose() * u_vec;
  const Eigen::LLT<Eigen::MatrixXd> schur_llt(schur);
  if (schur_llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("fixed-effect block is not identifiable");
  }
  Eigen::VectorXd xi(p);
  for (Eigen::Index j = 0; j < p; ++j) xi(j) = rng.normal();
  state_.fixed = schur_llt.solve(schur_rhs) + schur_llt.matrixU().solve(xi);

  const Eigen::VectorXd temporal_mean = u_vec - solved * state_.fixed;
  std::vector<double> noise(m);
  for (auto& e : noise) e = rng.normal();
  band.upper_solve_in_place(noise);
  for (std::size_t t = 0; t < n_days; ++t) {
    state_.alpha0(static_cast<Eigen::Index>(t)) = temporal_mean(static_cast<Eigen::Index>(2 * t)) + noise[2 * t];
    state_.beta0(static_cast<Eigen::Index>(t)) = temporal_mean(static_cast<Eigen::Index>(2 * t + 1)) + noise[2 * t + 1];
  }
}

void DownscalerSampler::update_latent_spatial(Rng& rng) {
  const auto n_sites = static_cast<Eigen::Index>(design_.n_sites());
  const double prec_y = 1.0 / state_.sigma2_y;
  const double a11 = state_.a11;
  const double a21 = state_.a21;
  const double a22 = state_.a22;

  Eigen::MatrixXd precision = Eigen::MatrixXd::Zero(2 * n_sites, 2 * n_sites);
  precision.topLeftCorner(n_sites, n_sites) = range_inverse_[0];
  precision.bottomRightCorner(n_sites, n_sites) = range_inverse_[1];
  for (Eigen::Index s = 0; s < n_sites; ++s) {
    const double n = site_n_[s];
    const double sx = site_sx_[s];
    const double sxx = site_sxx_[s];
    const double c11 = a11 * a11 * n + 2.0 * a11 * a21 * sx + a21 * a21 * sxx;
    const double c12 = a22 * (a11 * sx + a21 * sxx);
    const double c22 = a22 * a22 * sxx;
    precision(s, s) += c11 * prec_y;
    precision(s, n_sites + s) += c12 * prec_y;
    precision(n_sites + s, s) += c12 * prec_y;
    precision(n_sites + s, n_sites + s) += c22 * prec_y;
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * n_sites);
  for (std::size_t i = 0; i < design_.n_records(); ++i) {
    const double r = (design_.y[i] - fixed_part(i) - temporal_part(i)) * prec_y;
    const double x = design_.x[i];
    const auto s = static_cast<Eigen::Index>(design_.site[i]);
    rhs(s) += (a11 + a21 * x) * r;
    rhs(n_sites + s) += a22 * x * r;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("latent spatial block");
  Eigen::VectorXd xi(2 * n_sites);
  for (Eigen::Index j = 0; j < xi.size(); ++j) xi(j) = rng.normal();
  const Eigen::VectorXd draw = llt.solve(rhs) + llt.matrixU().solve(xi);
  state_.v1 = draw.head(n_sites);
  state_.v2 = draw.tail(n_sites);
}

void DownscalerSampler::update_coregionalization(Rng& rng) {
  const double prec_y = 1.0 / state_.sigma2_y;
  Eigen::Matrix3d gram = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < design_.n_records(); ++i) {
    const double r = design_.y[i] - fixed_part(i) - temporal_part(i);
    const double x = design_.x[i];
    const auto s = static_cast<Eigen::Index>(design_.site[i]);
    const Eigen::Vector3d u(state_.v1(s), state_.v1(s) * x, state_.v2(s) * x);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(u);
    rhs += u * r;
  }
  Eigen::Matrix3d precision = gram.selfadjointView<Eigen::Lower>();
  precision *= prec_y;
  precision.diagonal().array() += 1.0 / kCoregionalizationPriorVar;
  const Eigen::LLT<Eigen::Matrix3d> llt(precision);
  const Eigen::Vector3d xi(rng.normal(), rng.normal(), rng.normal());
  const Eigen::Vector3d draw = llt.solve(rhs * prec_y) + llt.matrixU().solve(xi);
  state_.a11 = draw(0);
  state_.a21 = draw(1);
  state_.a22 = draw(2);
  // (A, v) and its reflections give the same likelihood; keep a11, a22 >= 0.
  if (state_.a11 < 0.0) {
    state_.a11 = -state_.a11;
    state_.a21 = -state_.a21;
    state_.v1 = -state_.v1;
  }
  if (state_.a22 < 0.0) {
    state_.a22 = -state_.a22;
    state_.v2 = -state_.v2;
  }
}

void DownscalerSampler::update_residual_variance(Rng& rng) {
  double ss = 0.0;
  for (std::size_t i = 0; i < design_.n_records(); ++i) {
    const double r = design_.y[i] - record_mean(i);
    ss += r * r;
  }
  const double n = static_cast<double>(design_.n_records());
  state_.sigma2_y = rng.inv_gamma(config_.ig_a + 0.5 * n, config_.ig_b + 0.5 * ss);
}

void DownscalerSampler::update_car_variances(Rng& rng) {
  const double half_t = 0.5 * static_cast<double>(design_.n_days);
  const std::span<const double> a(state_.alpha0.data(), design_.n_days);
  const std::span<const double> b(state_.beta0.data(), design_.n_days);
  state_.sigma2_alpha0 = rng.inv_gamma(config_.ig_a + half_t,
                                       config_.ig_b + 0.5 * car_.quadratic_form(a, state_.eta_alpha0));
  state_.sigma2_beta0 = rng.inv_gamma(config_.ig_a + half_t,
                                      config_.ig_b + 0.5 * car_.quadratic_form(b, state_.eta_beta0));
}

void DownscalerSampler::update_car_dependence(Rng& rng) {
  const auto& log_dets = car_.grid_log_dets();
  std::vector<double> logw(TemporalCar::kGridSize);
  auto draw = [&](const Eigen::VectorXd& series, double sigma2) {
    const auto [dd, ww] = car_.quadratic_parts(std::span<const double>(series.data(), design_.n_days));
    for (int k = 0; k < TemporalCar::kGridSize; ++k) {
      logw[k] = 0.5 * log_dets[k] - 0.5 * (dd - TemporalCar::grid_point(k) * ww) / sigma2;
    }
    return TemporalCar::grid_point(static_cast<int>(sample_log_weights(logw, rng)));
  };
  state_.eta_alpha0 = draw(state_.alpha0, state_.sigma2_alpha0);
  state_.eta_beta0 = draw(state_.beta0, state_.sigma2_beta0);
}

double DownscalerSampler::range_log_target(const Eigen::VectorXd& v, const CholeskyFactor& f,
                                           double theta) const {
  // GP likelihood, Gamma prior and the Jacobian of the log-scale proposal.
  return mvn_logpdf(v, f) + gamma_logpdf(theta, config_.range_shape, config_.range_rate) +
         std::log(theta);
}

void DownscalerSampler::update_ranges(Rng& rng, bool adapting) {
  for (int j = 1; j <= 2; ++j) {
    auto& scale = j == 1 ? theta1_scale_ : theta2_scale_;
    double& theta = j == 1 ? state_.theta1 : state_.theta2;
    const Eigen::VectorXd& v = j == 1 ? state_.v1 : state_.v2;
    const double proposal = theta * std::exp(scale.sd() * rng.normal());
    bool accepted = false;
    try {
      CholeskyFactor factor(exp_cov_matrix(distances_, {1.0, proposal}));
      const double log_ratio = range_log_target(v, factor, proposal) -
                               range_log_target(v, range_factor_[j - 1], theta);
      if (std::log(rng.uniform()) < log_ratio) {
        theta = proposal;
        range_factor_[j - 1] = std::move(factor);
        range_inverse_[j - 1] = range_factor_[j - 1].inverse();
        accepted = true;
      }
    } catch (const NotPositiveDefinite&) {
    }
    scale.record(accepted);
    scale.end_iteration(adapting);
  }
}

void DownscalerSampler::sweep(Rng& rng, bool adapting) {
  update_temporal_and_fixed(rng);
  update_latent_spatial(rng);
  update_coregionalization(rng);
  update_residual_variance(rng);
  update_car_variances(rng);
  update_car_dependence(rng);
  update_ranges(rng, adapting);
}

double DownscalerSampler::log_posterior() const {
  double lp = 0.0;
  for (std::size_t i = 0; i < design_.n_records(); ++i) {
    lp += normal_logpdf(design_.y[i], record_mean(i), state_.sigma2_y);
  }
  const std::span<const double> a(state_.alpha0.data(), design_.n_days);
  const std::span<const double> b(state_.beta0.data(), design_.n_days);
  lp += car_.log_density(a, state_.eta_alpha0, state_.sigma2_alpha0);
  lp += car_.log_density(b, state_.eta_beta0, state_.sigma2_beta0);
  lp += mvn_logpdf(state_.v1, range_factor_[0]) + mvn_logpdf(state_.v2, range_factor_[1]);
  for (double aij : {state_.a11, state_.a21, state_.a22}) {
    lp += -0.5 * (kLogTwoPi + std::log(kCoregionalizationPriorVar) + aij * aij / kCoregionalizationPriorVar);
  }
  for (double var : {state_.sigma2_y, state_.sigma2_alpha0, state_.sigma2_beta0}) {
    lp += inv_gamma_logpdf(var, config_.ig_a, config_.ig_b);
  }
  for (double theta : {state_.theta1, state_.theta2}) {
    lp += gamma_logpdf(theta, config_.range_shape, config_.range_rate);
  }
  return lp;
}

DownscalerFit DownscalerSampler::run(Rng& rng) {
  DownscalerFit fit;
  fit.source = design_.source;
  fit.sites = design_.sites;
  fit.day_lo = design_.day_lo;
  fit.n_days = design_.n_days;
  fit.n_cov = design_.n_cov;
  fit.cov_mean = design_.cov_mean;
  fit.cov_sd = design_.cov_sd;
  fit.samples.reserve(static_cast<std::size_t>(config_.retained()));
  for (int iter = 1; iter <= config_.n_iter; ++iter) {
    sweep(rng, config_.adapt && iter <= config_.burn_in);
    if (config_.keeps(iter)) fit.samples.push_back(state_);
  }
  fit.theta1_acceptance = theta1_scale_.acceptance_rate();
  fit.theta2_acceptance = theta2_scale_.acceptance_rate();
  return fit;
}

DownscalerFit fit_downscaler(const ObservationTable& table, Source source, const MCMCConfig& config,
                             std::optional<DayRange> days) {
  config.validate();
  DayRange range;
  if (days) {
    range = *days;
  } else {
    const auto [lo, hi] = table.day_range();
    range = {lo, hi};
  }
  DownscalerSampler sampler(DownscalerDesign::build(table, source, range), config);
  Rng rng(config.seed);
  return sampler.run(rng);
}

std::vector<PredictionTarget> record_targets(const ObservationTable& table,
                                             std::span<const std::size_t> indices, Source source) {
  std::vector<PredictionTarget> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const auto& r = table.records.at(i);
    out.push_back({r.site, r.day, r.x(source), r.z});
  }
  return out;
}

}  // namespace pmfuse
