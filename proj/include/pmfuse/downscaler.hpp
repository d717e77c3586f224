#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pmfuse/cv_metrics.hpp"
#include "pmfuse/data.hpp"
#include "pmfuse/kernels.hpp"
#include "pmfuse/mcmc.hpp"
#include "pmfuse/random.hpp"

namespace pmfuse {

/// Inclusive range of calendar days covered by the temporal effects.
struct DayRange {
  int first = 0;
  int last = 0;
  std::size_t size() const { return static_cast<std::size_t>(last - first + 1); }
};

/// Parameters of the spatio-temporal downscaler
///   y = (b0 + alpha0_t + alpha1_s) + (b1 + beta0_t + beta1_s) x + z gamma + eps
/// with (alpha1_s, beta1_s)^T = A v_s, A lower triangular and v1, v2
/// independent unit-variance exponential GPs.
struct DownscalerState {
  /// Intercept, global slope, then gamma on standardized covariates.
  Eigen::VectorXd fixed;
  Eigen::VectorXd alpha0;
  Eigen::VectorXd beta0;
  double a11 = 1.0;
  double a21 = 0.0;
  double a22 = 0.1;
  Eigen::VectorXd v1;
  Eigen::VectorXd v2;
  double sigma2_y = 1.0;
  double eta_alpha0 = TemporalCar::grid_point(899);
  double eta_beta0 = TemporalCar::grid_point(899);
  double sigma2_alpha0 = 1.0;
  double sigma2_beta0 = 0.01;
  double theta1 = 100.0;
  double theta2 = 100.0;

  double alpha1(Eigen::Index s) const { return a11 * v1(s); }
  double beta1(Eigen::Index s) const { return a21 * v1(s) + a22 * v2(s); }
};

/// Training records arranged for the sampler (structure of arrays).
struct DownscalerDesign {
  Source source = Source::Ctm;
  std::vector<Location> sites;
  int day_lo = 0;
  std::size_t n_days = 0;
  std::size_t n_cov = 0;  ///< 0 for CTM, kNumCovariates for SAT
  Eigen::VectorXd cov_mean;
  Eigen::VectorXd cov_sd;
  std::vector<std::uint32_t> site;
  std::vector<std::uint32_t> day;  ///< offset from day_lo
  std::vector<double> y;
  std::vector<double> x;
  std::vector<double> z;  ///< row-major n_records x n_cov, standardized

  std::size_t n_records() const { return y.size(); }
  std::size_t n_sites() const { return sites.size(); }
  std::size_t n_fixed() const { return 2 + n_cov; }
  double z_at(std::size_t i, std::size_t j) const { return z[i * n_cov + j]; }

  /// Drops records without a usable proxy value (missing AOD). Sites are those
  /// with at least one record; InsufficientData if one has no usable record.
  static DownscalerDesign build(const ObservationTable& table, Source source, DayRange days);
};

/// Posterior sample set of one fitted downscaler.
struct DownscalerFit {
  Source source = Source::Ctm;
  std::vector<Location> sites;
  int day_lo = 0;
  std::size_t n_days = 0;
  std::size_t n_cov = 0;
  Eigen::VectorXd cov_mean;
  Eigen::VectorXd cov_sd;
  std::vector<DownscalerState> samples;
  double theta1_acceptance = 0.0;
  double theta2_acceptance = 0.0;

  /// gamma of sample k back-transformed to the original covariate scale.
  Eigen::VectorXd gamma_original(std::size_t k) const;
};

/// Block-Gibbs / Metropolis sampler for one downscaler. Each update is public
/// so conditional draws can be checked in isolation.
class DownscalerSampler {
 public:
  DownscalerSampler(DownscalerDesign design, const MCMCConfig& config);

  const DownscalerDesign& design() const { return design_; }
  const DownscalerState& state() const { return state_; }
  /// Replaces the state; cached GP factors are rebuilt.
  void set_state(const DownscalerState& state);

  /// Intercept, slope, gamma, alpha0 and beta0 drawn jointly.
  void update_temporal_and_fixed(Rng& rng);
  /// (v1, v2) drawn jointly.
  void update_latent_spatial(Rng& rng);
  /// Entries of A, then reflected so a11, a22 >= 0.
  void update_coregionalization(Rng& rng);
  void update_residual_variance(Rng& rng);
  void update_car_variances(Rng& rng);
  /// Dependence parameters drawn from their 1,000-point grid.
  void update_car_dependence(Rng& rng);
  /// Log-scale random-walk Metropolis on theta1, theta2.
  void update_ranges(Rng& rng, bool adapting);
  void sweep(Rng& rng, bool adapting);

  double log_posterior() const;
  /// Linear predictor of record i under the current state.
  double record_mean(std::size_t i) const;

  DownscalerFit run(Rng& rng);

  const AdaptiveScale& theta_scale(int j) const { return j == 1 ? theta1_scale_ : theta2_scale_; }

 private:
  void initialize();
  void refresh_range_cache(int which);
  double fixed_part(std::size_t i) const;
  double temporal_part(std::size_t i) const;
  double spatial_part(std::size_t i) const;
  double range_log_target(const Eigen::VectorXd& v, const CholeskyFactor& f, double theta) const;

  DownscalerDesign design_;
  MCMCConfig config_;
  TemporalCar car_;
  DownscalerState state_;
  Eigen::MatrixXd distances_;

  // Sufficient statistics that do not change during sampling.
  std::vector<double> day_n_, day_sx_, day_sxx_;
  std::vector<double> site_n_, site_sx_, site_sxx_;
  Eigen::MatrixXd cross_;  ///< 2T x p: sums of (1, x) (x) h over each day
  Eigen::MatrixXd gram_;   ///< p x p: sum of h h^T

  CholeskyFactor range_factor_[2];
  Eigen::MatrixXd range_inverse_[2];
  AdaptiveScale theta1_scale_;
  AdaptiveScale theta2_scale_;
};

DownscalerFit fit_downscaler(const ObservationTable& table, Source source, const MCMCConfig& config,
                             std::optional<DayRange> days = std::nullopt);

/// A site-day to predict: location index, day, linked proxy value (NaN when
/// missing) and covariates on the original scale.
struct PredictionTarget {
  std::size_t location = 0;
  int day = 0;
  double x = 0.0;
  Covariates z{};
};

/// Posterior predictive mean and variance at each target: mean and variance
/// over samples of the linear predictor plus the mean residual variance.
/// Locations whose id matches a training site use that site's latent effects;
/// others use the GP conditional of (v1, v2), integrated analytically.
std::vector<PredictiveInput> predict_at(const DownscalerFit& fit,
                                        std::span<const Location> locations,
                                        std::span<const PredictionTarget> targets, int threads = 1);

/// Out-of-sample predictive for every record: each fold is predicted from a
/// fit on the complement. Results are aligned with table.records.
std::vector<PredictiveInput> cv_predict(const ObservationTable& table, const FoldPlan& plan,
                                        Source source, const MCMCConfig& config, int threads = 1);

/// Targets for the records of a table (linked x for `source`, covariates).
std::vector<PredictionTarget> record_targets(const ObservationTable& table,
                                             std::span<const std::size_t> indices, Source source);

}  // namespace pmfuse
