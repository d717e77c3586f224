#include "pmfuse/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmfuse/error.hpp"
#include "pmfuse/stats.hpp"
#include "pmfuse/threads.hpp"

namespace pmfuse {

namespace {

constexpr std::size_t kChunk = 512;

double softplus(double q) { return q > 0.0 ? q + std::log1p(std::exp(-q)) : std::log1p(std::exp(q)); }

double initial_range(std::span<const Location> sites) {
  const double diameter = domain_diameter(sites);
  return diameter > 0.0 ? diameter / 4.0 : 100.0;
}

double rho_log_target(const Eigen::VectorXd& q, double tau2, double rho, const Eigen::MatrixXd& distances,
                      const RangePrior& prior) {
  double lp = gamma_logpdf(rho, prior.shape, prior.rate) + std::log(rho);
  if (q.size() > 0) {
    const CholeskyFactor factor(exp_cov_matrix(distances, {tau2, rho}));
    lp += mvn_logpdf(q, factor);
  }
  return lp;
}

SiteWeightSummary summarize_draws(std::vector<double> w_draws) {
  SiteWeightSummary s;
  if (w_draws.empty()) return s;
  double q_sum = 0.0;
  for (double w : w_draws) q_sum += logit(std::clamp(w, kInvLogitFloor, 1.0 - kInvLogitFloor));
  s.w_mean = std::accumulate(w_draws.begin(), w_draws.end(), 0.0) / static_cast<double>(w_draws.size());
  s.q_mean = q_sum / static_cast<double>(w_draws.size());
  std::sort(w_draws.begin(), w_draws.end());
  s.w_lo = sorted_quantile(w_draws, 0.025);
  s.w_hi = sorted_quantile(w_draws, 0.975);
  s.w_median = sorted_quantile(w_draws, 0.5);
  return s;
}

void check_observations(std::span<const EnsembleObservation> obs, std::size_t n_sites) {
  for (const auto& o : obs) {
    if (o.site >= n_sites) throw DomainError("ensemble observation references an unknown site");
    if (o.ctm.available && !(o.ctm.var > 0.0)) throw DomainError("CTM predictive variance must be positive");
    if (o.sat.available && !(o.sat.var > 0.0)) throw DomainError("SAT predictive variance must be positive");
  }
}

}  // namespace

std::string_view to_string(EnsembleVariant v) { return v == EnsembleVariant::Joint ? "joint" : "two_stage"; }

EnsembleVariant parse_variant(std::string_view text) {
  if (text == "joint") return EnsembleVariant::Joint;
  if (text == "two_stage" || text == "two-stage") return EnsembleVariant::TwoStage;
  throw ConfigError("unknown ensemble variant '" + std::string(text) + "'");
}

double z_probability(double y, const PredictiveInput& ctm, const PredictiveInput& sat, double w) {
  w = std::clamp(w, kInvLogitFloor, 1.0 - kInvLogitFloor);
  const double l1 = std::log(w) + normal_logpdf(y, ctm.mu, ctm.var);
  const double l2 = std::log1p(-w) + normal_logpdf(y, sat.mu, sat.var);
  // p = 1 / (1 + exp(l2 - l1)), evaluated without overflow.
  const double d = l2 - l1;
  return d > 0.0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
}

void update_z(std::span<const EnsembleObservation> obs, const Eigen::VectorXd& q,
              std::span<std::uint8_t> z, std::span<double> sum_z, std::span<double> n_obs, Rng& rng) {
  std::fill(sum_z.begin(), sum_z.end(), 0.0);
  std::fill(n_obs.begin(), n_obs.end(), 0.0);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& o = obs[i];
    if (!o.both_available()) {
      z[i] = 0;
      continue;
    }
    const double w = inv_logit(q(static_cast<Eigen::Index>(o.site)));
    z[i] = rng.bernoulli(z_probability(o.y, o.ctm, o.sat, w)) ? 1 : 0;
    sum_z[o.site] += z[i];
    n_obs[o.site] += 1.0;
  }
}

double bernoulli_logit_loglik(double q, double sum_z, double n_obs) {
  return sum_z * q - n_obs * softplus(q);
}

bool update_q(std::size_t s, double sum_z, double n_obs, Eigen::VectorXd& q,
              const Eigen::MatrixXd& precision, double proposal_var, Rng& rng) {
  const auto ss = static_cast<Eigen::Index>(s);
  const GaussianSummary prior = precision_univariate_conditional(s, q, precision);
  const double current = q(ss);
  const double proposal = current + std::sqrt(proposal_var) * rng.normal();
  const double log_ratio = bernoulli_logit_loglik(proposal, sum_z, n_obs) -
                           bernoulli_logit_loglik(current, sum_z, n_obs) +
                           normal_logpdf(proposal, prior.mean, prior.variance) -
                           normal_logpdf(current, prior.mean, prior.variance);
  if (std::log(rng.uniform()) < log_ratio) {
    q(ss) = proposal;
    return true;
  }
  return false;
}

double update_tau2(const Eigen::VectorXd& q, const CholeskyFactor& correlation, double a, double b,
                   Rng& rng) {
  const auto n = static_cast<double>(q.size());
  const double quad = q.size() > 0 ? correlation.quadratic_form(q) : 0.0;
  return rng.inv_gamma(a + 0.5 * n, b + 0.5 * quad);
}

bool update_rho(const Eigen::VectorXd& q, double tau2, double& rho, double proposal_var,
                const Eigen::MatrixXd& distances, const RangePrior& prior, Rng& rng) {
  const double proposal = rho * std::exp(std::sqrt(proposal_var) * rng.normal());
  const double u = rng.uniform();
  double log_ratio = 0.0;
  try {
    log_ratio = rho_log_target(q, tau2, proposal, distances, prior) -
                rho_log_target(q, tau2, rho, distances, prior);
  } catch (const NotPositiveDefinite&) {
    return false;
  }
  if (std::log(u) < log_ratio) {
    rho = proposal;
    return true;
  }
  return false;
}

WeightPosterior fit_joint(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                          const MCMCConfig& config) {
  config.validate();
  validate_locations(sites);
  const std::size_t n_sites = sites.size();
  if (n_sites == 0) throw InsufficientData("ensemble needs at least one site");
  check_observations(obs, n_sites);
  const auto S = static_cast<Eigen::Index>(n_sites);
  const Eigen::MatrixXd distances = distance_matrix(sites);
  const RangePrior prior{config.range_shape, config.range_rate};

  Rng rng(config.seed);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(S);
  double tau2 = 1.0;
  double rho = initial_range(sites);
  CholeskyFactor correlation(exp_cov_matrix(distances, {1.0, rho}));
  Eigen::MatrixXd corr_inverse = correlation.inverse();

  std::vector<std::uint8_t> z(obs.size(), 0);
  std::vector<double> sum_z(n_sites, 0.0);
  std::vector<double> n_obs(n_sites, 0.0);
  update_z(obs, q, z, sum_z, n_obs, rng);

  std::vector<AdaptiveScale> q_scales(n_sites, AdaptiveScale(config.kappa_w));
  AdaptiveScale rho_scale(config.kappa_rho);

  WeightPosterior post;
  post.variant = EnsembleVariant::Joint;
  post.sites.assign(sites.begin(), sites.end());
  post.field_sites = post.sites;
  post.samples.reserve(static_cast<std::size_t>(config.retained()));
  long q_accepts = 0;
  long q_tries = 0;

  for (int iter = 1; iter <= config.n_iter; ++iter) {
    const bool adapting = config.adapt && iter <= config.burn_in;
    update_z(obs, q, z, sum_z, n_obs, rng);
    const Eigen::MatrixXd precision = corr_inverse / tau2;
    for (std::size_t s = 0; s < n_sites; ++s) {
      const bool ok = update_q(s, sum_z[s], n_obs[s], q, precision, q_scales[s].variance(), rng);
      q_scales[s].record(ok);
      q_scales[s].end_iteration(adapting);
      q_accepts += ok;
      ++q_tries;
    }
    tau2 = update_tau2(q, correlation, config.ig_a, config.ig_b, rng);
    const bool moved = update_rho(q, tau2, rho, rho_scale.variance(), distances, prior, rng);
    rho_scale.record(moved);
    rho_scale.end_iteration(adapting);
    if (moved) {
      correlation = CholeskyFactor(exp_cov_matrix(distances, {1.0, rho}));
      corr_inverse = correlation.inverse();
    }
    if (config.keeps(iter)) post.samples.push_back({q, tau2, rho});
  }

  post.summaries.resize(n_sites);
  for (std::size_t s = 0; s < n_sites; ++s) {
    std::vector<double> draws;
    draws.reserve(post.samples.size());
    for (const auto& f : post.samples) draws.push_back(inv_logit(f.q(static_cast<Eigen::Index>(s))));
    post.summaries[s] = summarize_draws(std::move(draws));
    double q_sum = 0.0;
    for (const auto& f : post.samples) q_sum += f.q(static_cast<Eigen::Index>(s));
    post.summaries[s].q_mean = q_sum / static_cast<double>(post.samples.size());
  }
  post.q_acceptance = q_tries ? static_cast<double>(q_accepts) / q_tries : 0.0;
  post.rho_acceptance = rho_scale.acceptance_rate();
  return post;
}

SiteBetaPosterior fit_site_weight(std::span<const EnsembleObservation> obs, const MCMCConfig& config,
                                  std::uint64_t seed) {
  config.validate();
  SiteBetaPosterior out;
  std::vector<const EnsembleObservation*> usable;
  for (const auto& o : obs) {
    if (o.both_available()) usable.push_back(&o);
  }
  const auto n = static_cast<double>(usable.size());
  Rng rng(seed);
  double w = 0.5;
  double rb_sum = 0.0;
  out.draws.reserve(static_cast<std::size_t>(config.retained()));
  for (int iter = 1; iter <= config.n_iter; ++iter) {
    double sum_z = 0.0;
    for (const auto* o : usable) sum_z += rng.bernoulli(z_probability(o->y, o->ctm, o->sat, w)) ? 1.0 : 0.0;
    w = rng.beta(1.0 + sum_z, 1.0 + n - sum_z);
    if (config.keeps(iter)) {
      out.draws.push_back(w);
      rb_sum += (1.0 + sum_z) / (2.0 + n);
    }
  }
  out.mean = rb_sum / static_cast<double>(out.draws.size());
  std::vector<double> sorted = out.draws;
  std::sort(sorted.begin(), sorted.end());
  out.median = sorted_quantile(sorted, 0.5);
  out.lo = sorted_quantile(sorted, 0.025);
  out.hi = sorted_quantile(sorted, 0.975);
  return out;
}

WeightPosterior fit_two_stage(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                              const MCMCConfig& config) {
  config.validate();
  validate_locations(sites);
  const std::size_t n_sites = sites.size();
  check_observations(obs, n_sites);

  std::vector<std::vector<EnsembleObservation>> per_site(n_sites);
  for (const auto& o : obs) per_site[o.site].push_back(o);

  WeightPosterior post;
  post.variant = EnsembleVariant::TwoStage;
  post.sites.assign(sites.begin(), sites.end());
  post.summaries.resize(n_sites);

  // Stage A: independent Beta(1,1)-prior weights per site.
  std::vector<std::size_t> included;
  std::vector<double> q_hat;
  for (std::size_t s = 0; s < n_sites; ++s) {
    const bool has_data = std::any_of(per_site[s].begin(), per_site[s].end(),
                                      [](const EnsembleObservation& o) { return o.both_available(); });
    if (!has_data) continue;
    const SiteBetaPosterior site = fit_site_weight(per_site[s], config, derive_seed(config.seed, s));
    auto summary = summarize_draws(site.draws);
    summary.w_mean = site.mean;
    post.summaries[s] = summary;
    included.push_back(s);
    q_hat.push_back(logit(std::clamp(site.median, kInvLogitFloor, 1.0 - kInvLogitFloor)));
  }
  if (included.empty()) throw InsufficientData("no site has observations with both sources available");

  // Stage B: GP hyperparameters for the logit medians, treated as known.
  for (auto s : included) post.field_sites.push_back(sites[s]);
  const Eigen::Map<const Eigen::VectorXd> q(q_hat.data(), static_cast<Eigen::Index>(q_hat.size()));
  const Eigen::MatrixXd distances = distance_matrix(post.field_sites);
  const RangePrior prior{config.range_shape, config.range_rate};
  Rng rng(derive_seed(config.seed, n_sites + 1));
  double tau2 = 1.0;
  double rho = initial_range(post.field_sites);
  CholeskyFactor correlation(exp_cov_matrix(distances, {1.0, rho}));
  AdaptiveScale rho_scale(config.kappa_rho);
  for (int iter = 1; iter <= config.n_iter; ++iter) {
    tau2 = update_tau2(q, correlation, config.ig_a, config.ig_b, rng);
    const bool moved = update_rho(q, tau2, rho, rho_scale.variance(), distances, prior, rng);
    rho_scale.record(moved);
    rho_scale.end_iteration(config.adapt && iter <= config.burn_in);
    if (moved) correlation = CholeskyFactor(exp_cov_matrix(distances, {1.0, rho}));
    if (config.keeps(iter)) post.samples.push_back({q, tau2, rho});
  }
  post.rho_acceptance = rho_scale.acceptance_rate();
  post.q_acceptance = 1.0;

  // Sites left out of stage B get kriged weights.
  std::vector<Location> missing;
  std::vector<std::size_t> missing_index;
  for (std::size_t s = 0; s < n_sites; ++s) {
    if (std::find(included.begin(), included.end(), s) == included.end()) {
      missing.push_back(sites[s]);
      missing_index.push_back(s);
    }
  }
  if (!missing.empty()) {
    const auto kriged = krige_weights(post, missing, derive_seed(config.seed, n_sites + 2));
    for (std::size_t i = 0; i < missing.size(); ++i) {
      auto& summary = post.summaries[missing_index[i]];
      summary.w_mean = kriged[i].w_mean;
      summary.w_lo = kriged[i].w_lo;
      summary.w_hi = kriged[i].w_hi;
      summary.w_median = kriged[i].w_mean;
      summary.q_mean = logit(std::clamp(kriged[i].w_mean, kInvLogitFloor, 1.0 - kInvLogitFloor));
    }
  }
  return post;
}

std::vector<KrigedWeight> krige_weights(const WeightPosterior& posterior,
                                        std::span<const Location> targets, std::uint64_t seed,
                                        int threads) {
  if (posterior.samples.empty()) throw EmptyInput("krige_weights: no posterior samples");
  for (const auto& t : targets) {
    if (!std::isfinite(t.x) || !std::isfinite(t.y)) throw DomainError("krige_weights: non-finite target");
  }
  const std::size_t K = posterior.samples.size();
  const Eigen::MatrixXd site_dist = distance_matrix(posterior.field_sites);
  std::vector<CholeskyFactor> factors(K);
  std::vector<Eigen::VectorXd> alpha(K);
  parallel_for(K, threads, [&](std::size_t k) {
    const auto& f = posterior.samples[k];
    factors[k] = CholeskyFactor(exp_cov_matrix(site_dist, {f.tau2, f.rho}));
    alpha[k] = factors[k].solve(f.q);
  });

  std::vector<KrigedWeight> out(targets.size());
  const std::size_t chunks = (targets.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(targets.size(), begin + kChunk);
    const auto chunk = targets.subspan(begin, end - begin);
    const Eigen::MatrixXd dist = cross_distances(posterior.field_sites, chunk);
    const auto n_loc = static_cast<std::size_t>(chunk.size());
    std::vector<std::vector<double>> draws(n_loc, std::vector<double>(K));
    std::vector<Rng> rngs;
    rngs.reserve(n_loc);
    for (std::size_t j = 0; j < n_loc; ++j) rngs.emplace_back(derive_seed(seed, begin + j));
    for (std::size_t k = 0; k < K; ++k) {
      const auto& f = posterior.samples[k];
      const Eigen::MatrixXd cross = f.tau2 * (-dist.array() / f.rho).exp().matrix();
      const Eigen::MatrixXd half = factors[k].half_solve(cross);
      const Eigen::VectorXd mean = cross.transpose() * alpha[k];
      for (std::size_t j = 0; j < n_loc; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double var = std::max(0.0, f.tau2 - half.col(jj).squaredNorm());
        draws[j][k] = inv_logit(mean(jj) + std::sqrt(var) * rngs[j].normal());
      }
    }
    for (std::size_t j = 0; j < n_loc; ++j) {
      auto& d = draws[j];
      KrigedWeight kw;
      kw.w_mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(K);
      std::sort(d.begin(), d.end());
      kw.w_lo = sorted_quantile(d, 0.025);
      kw.w_hi = sorted_quantile(d, 0.975);
      out[begin + j] = kw;
    }
  });
  return out;
}

MixtureDistribution predict_mixture(const PredictiveInput& ctm, const PredictiveInput& sat, double w) {
  if (ctm.available && sat.available) {
    if (!(w >= 0.0 && w <= 1.0)) throw DomainError("mixture weight must lie in [0, 1]");
    return {w, ctm.mu, ctm.var, sat.mu, sat.var};
  }
  if (ctm.available) return MixtureDistribution::single(ctm.mu, ctm.var);
  if (sat.available) return MixtureDistribution::single(sat.mu, sat.var);
  throw NoInputs("no predictive input available");
}

}  // namespace pmfuse
