#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pmfuse/data.hpp"
#include "pmfuse/kernels.hpp"
#include "pmfuse/mcmc.hpp"
#include "pmfuse/mixture.hpp"
#include "pmfuse/random.hpp"

namespace pmfuse {

enum class EnsembleVariant { Joint, TwoStage };

std::string_view to_string(EnsembleVariant v);
EnsembleVariant parse_variant(std::string_view text);

/// One posterior draw of the logit-weight field: q over the field sites and
/// the GP hyperparameters (tau2, rho).
struct WeightField {
  Eigen::VectorXd q;
  double tau2 = 1.0;
  double rho = 100.0;
};

struct SiteWeightSummary {
  double w_mean = 0.5;
  double w_lo = 0.0;
  double w_hi = 1.0;
  double q_mean = 0.0;
  double w_median = 0.5;
};

/// Posterior of the ensemble weights. `field_sites` are the sites carried by
/// the GP samples; `sites` and `summaries` cover every input site.
struct WeightPosterior {
  EnsembleVariant variant = EnsembleVariant::Joint;
  std::vector<Location> sites;
  std::vector<SiteWeightSummary> summaries;
  std::vector<Location> field_sites;
  std::vector<WeightField> samples;
  double q_acceptance = 0.0;
  double rho_acceptance = 0.0;
};

/// P(z = 1): posterior probability that the CTM component generated y,
/// computed from log-densities.
double z_probability(double y, const PredictiveInput& ctm, const PredictiveInput& sat, double w);

/// Draws z for every observation where both components are available
/// (entries for other observations are left at 0). Sums per site are written
/// to sum_z and the counts to n_obs.
void update_z(std::span<const EnsembleObservation> obs, const Eigen::VectorXd& q,
              std::span<std::uint8_t> z, std::span<double> sum_z, std::span<double> n_obs, Rng& rng);

/// Log of the Bernoulli likelihood sum_t [z_t q - log(1 + e^q)] for one site.
double bernoulli_logit_loglik(double q, double sum_z, double n_obs);

/// Metropolis update of q_s with a N(q_s, proposal_var) proposal. The target is
/// the Bernoulli likelihood times the GP conditional of q_s given q_{-s}, taken
/// from the precision matrix of the field. Returns true on acceptance.
bool update_q(std::size_t s, double sum_z, double n_obs, Eigen::VectorXd& q,
              const Eigen::MatrixXd& precision, double proposal_var, Rng& rng);

/// Conjugate draw tau2 ~ IG(a + S/2, b + q^T R^{-1} q / 2), R the correlation matrix.
double update_tau2(const Eigen::VectorXd& q, const CholeskyFactor& correlation, double a, double b,
                   Rng& rng);

struct RangePrior {
  double shape = 0.5;
  double rate = 0.005;
};

/// Log-normal random-walk Metropolis step for rho with the GP likelihood of q,
/// the Gamma prior and the rho'/rho proposal correction. A proposal whose
/// covariance cannot be factorized is rejected. Returns true on acceptance.
bool update_rho(const Eigen::VectorXd& q, double tau2, double& rho, double proposal_var,
                const Eigen::MatrixXd& distances, const RangePrior& prior, Rng& rng);

/// Joint MCMC over z, q, tau2 and rho.
WeightPosterior fit_joint(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                          const MCMCConfig& config);

/// Per-site Beta(1,1)-prior posterior from the (z, w) Gibbs sampler.
struct SiteBetaPosterior {
  double mean = 0.5;  ///< Rao-Blackwellized: average of (1 + sum z) / (2 + T)
  double median = 0.5;
  double lo = 0.025;
  double hi = 0.975;
  std::vector<double> draws;
};

/// Stage A of the two-stage estimator for one site.
SiteBetaPosterior fit_site_weight(std::span<const EnsembleObservation> obs, const MCMCConfig& config,
                                  std::uint64_t seed);

/// Two-stage estimator: per-site Beta posteriors, then a GP on the logit of
/// their medians (sites without usable data are left out of the GP and get
/// kriged weights).
WeightPosterior fit_two_stage(std::span<const EnsembleObservation> obs, std::span<const Location> sites,
                              const MCMCConfig& config);

struct KrigedWeight {
  double w_mean = 0.5;
  double w_lo = 0.0;
  double w_hi = 1.0;
};

/// For each posterior sample, q is kriged (simple kriging, mean 0) to every
/// target, a draw from the kriging distribution is mapped through inv_logit,
/// and the draws are summarized per target.
std::vector<KrigedWeight> krige_weights(const WeightPosterior& posterior,
                                        std::span<const Location> targets, std::uint64_t seed,
                                        int threads = 1);

/// Final predictive mixture. With one source unavailable the weight moves
/// entirely to the other one.
MixtureDistribution predict_mixture(const PredictiveInput& ctm, const PredictiveInput& sat, double w);

}  // namespace pmfuse
