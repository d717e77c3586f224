#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pmfuse/data.hpp"
#include "pmfuse/geo.hpp"
#include "pmfuse/mixture.hpp"

namespace pmfuse {

enum class WeightPattern { Gp, HalfSplit };

/// Settings of a synthetic scene. Distances are in km, concentrations in
/// ug/m3. The downscaler truth follows the same decomposition as the fitted
/// model; zero variances switch the corresponding effect off.
struct SceneConfig {
  int n_sites = 63;
  int n_days = 365;
  int first_day = 1;
  double domain_km = 600.0;
  double ctm_cell_km = 12.0;
  double sat_cell_km = 6.0;

  // Gridded proxies.
  double ctm_level = 12.0;
  double ctm_spatial_sd = 3.0;
  double ctm_temporal_sd = 3.0;
  double ctm_noise_sd = 0.5;
  double sat_per_ug = 0.02;  ///< AOD units per ug/m3
  double sat_noise_sd = 0.01;
  double sat_missing_rate = 0.61;
  double monitor_missing_rate = 0.0;
  bool dynamic_covariates = false;

  // Monitor response.
  Source response_source = Source::Ctm;
  double intercept = 2.0;
  double slope = 1.0;
  Covariates gamma{0.5, -0.3, 0.4, 0.6, -0.5, 0.2};
  double a11 = 1.0;
  double a21 = 0.1;
  double a22 = 0.05;
  double theta1 = 150.0;
  double theta2 = 150.0;
  double eta_alpha0 = 0.9;
  double eta_beta0 = 0.9;
  double sigma2_alpha0 = 1.0;
  double sigma2_beta0 = 0.01;
  double sigma2_y = 1.0;

  // Ensemble inputs generated directly from the two-component mixture.
  WeightPattern weight_pattern = WeightPattern::Gp;
  double tau2 = 1.0;
  double rho = 300.0;
  double half_split_q = 2.0;  ///< logit weight on the left half, negated on the right
  double ens_bias_sd = 2.0;
  double ens_sd_good = 1.0;
  double ens_sd_bad = 3.0;  ///< used only by HalfSplit

  std::uint64_t seed = 1;

  void validate() const;
  GridSpec ctm_grid() const;
  GridSpec sat_grid() const;
};

struct SceneTruth {
  SceneConfig config;
  std::vector<Location> sites;
  GridSpec ctm_grid;
  GridSpec sat_grid;
  GriddedField ctm;
  GriddedField sat;  ///< AOD with missing cells as NaN
  CovariateField covariates;  ///< on the SAT grid
  ObservationTable table;

  Eigen::VectorXd v1;
  Eigen::VectorXd v2;
  Eigen::VectorXd alpha0;
  Eigen::VectorXd beta0;

  Eigen::VectorXd q;  ///< true logit weights at the sites
  Eigen::VectorXd w;
  std::vector<EnsembleObservation> ensemble;  ///< every site-day
  std::vector<std::uint8_t> z;                ///< 1 where the CTM component generated y
};

SceneTruth generate_scene(const SceneConfig& config);

/// Draw of a zero-mean exponential GP at the given locations.
Eigen::VectorXd sample_exp_gp(std::span<const Location> locations, double variance, double range,
                              std::uint64_t seed);

/// Exact discrete posterior of one site's weight on a grid of midpoints of
/// (0, 1), with z summed out and a Beta prior.
struct GridWeightPosterior {
  std::vector<double> grid;
  std::vector<double> prob;
  double mean() const;
  double mass_above(double w) const;
};

GridWeightPosterior brute_force_weight_posterior(std::span<const EnsembleObservation> obs,
                                                 int n_grid = 2000, double prior_a = 1.0,
                                                 double prior_b = 1.0);

/// w * Phi((x - mu1) / sd1) + (1 - w) * Phi((x - mu2) / sd2).
double brute_force_mixture_cdf(const MixtureDistribution& m, double x);

/// Inverts the mixture CDF on a uniform grid of the given step (in units of
/// the mixture SD), locating the cell by bisection and interpolating linearly.
double grid_mixture_quantile(const MixtureDistribution& m, double p, double step_sd = 1e-4);

/// Weighted least-squares fit of sill * (1 - exp(-d / range)) to the binned
/// empirical semivariogram, with distances up to half the largest separation.
struct VariogramFit {
  double sill = 0.0;
  double range = 0.0;
};

VariogramFit fit_exponential_variogram(std::span<const Location> locations,
                                       const Eigen::VectorXd& values, int n_bins = 20);

}  // namespace pmfuse
