#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pmfuse/geo.hpp"

namespace pmfuse {

/// Stationary exponential covariance: marginal_variance * exp(-d / range).
struct ExpCovParams {
  double marginal_variance = 1.0;
  double range = 1.0;
  void validate() const;
};

/// First-order temporal CAR: day t given its lag-1 neighbors is
/// N(dependence * mean(neighbors), conditional_variance / n_t).
struct CarParams {
  double dependence = 0.0;
  double conditional_variance = 1.0;
};

struct GaussianSummary {
  double mean = 0.0;
  double variance = 0.0;
};

Eigen::MatrixXd exp_cov_matrix(const Eigen::MatrixXd& distances, const ExpCovParams& params);

/// Cholesky factor of a covariance matrix with the escalating jitter policy:
/// 1e-8 * mean(diag) is always added, then multiplied by 10 on failure up to
/// 1e-4 * mean(diag), after which NotPositiveDefinite is thrown.
class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  explicit CholeskyFactor(const Eigen::MatrixXd& matrix);

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const { return llt_.solve(rhs); }
  /// L^{-1} rhs.
  Eigen::MatrixXd half_solve(const Eigen::MatrixXd& rhs) const {
    return llt_.matrixL().solve(rhs);
  }
  /// rhs^T C^{-1} rhs.
  double quadratic_form(const Eigen::VectorXd& rhs) const;
  double log_determinant() const;
  Eigen::MatrixXd inverse() const;
  double jitter() const { return jitter_; }
  Eigen::Index size() const { return llt_.rows(); }
  auto lower() const { return llt_.matrixL(); }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double jitter_ = 0.0;
};

Eigen::VectorXd chol_solve(const Eigen::MatrixXd& cov, const Eigen::VectorXd& rhs);
double chol_logdet(const Eigen::MatrixXd& cov);

/// Conditional of element i of a zero-mean Gaussian vector given all other
/// elements, from the covariance partition. values[i] is ignored.
GaussianSummary gp_univariate_conditional(std::size_t i, const Eigen::VectorXd& values,
                                          const Eigen::MatrixXd& cov);

/// Same conditional computed from a precision matrix Q = C^{-1}:
/// mean = -sum_{j != i} Q_ij v_j / Q_ii, variance = 1 / Q_ii.
GaussianSummary precision_univariate_conditional(std::size_t i, const Eigen::VectorXd& values,
                                                 const Eigen::MatrixXd& precision);

/// Simple kriging under a stationary exponential GP with known constant mean.
std::vector<GaussianSummary> krige(std::span<const Location> observed,
                                   const Eigen::VectorXd& values,
                                   std::span<const Location> targets, const ExpCovParams& params,
                                   double mean);

/// Full conditional of day t (0-based) of a first-order CAR series.
/// Endpoints have one neighbor; requires series.size() >= 2.
GaussianSummary car_full_conditional(std::size_t t, std::span<const double> series,
                                     const CarParams& params);

/// Path-graph CAR structure over n days with precision (D - eta W) / sigma^2,
/// plus the discretized dependence grid and its cached log-determinants.
class TemporalCar {
 public:
  static constexpr int kGridSize = 1000;

  explicit TemporalCar(std::size_t n_days);

  std::size_t size() const { return n_; }
  int neighbor_count(std::size_t t) const;
  /// a^T D a and a^T W a; the CAR quadratic form is dd - eta * ww.
  std::pair<double, double> quadratic_parts(std::span<const double> series) const;
  double quadratic_form(std::span<const double> series, double eta) const;
  /// log |D - eta W| by the tridiagonal recurrence.
  double log_det(double eta) const;
  /// Midpoint of the k-th of kGridSize equal intervals of [0, 1].
  static double grid_point(int k) { return (k + 0.5) / kGridSize; }
  static int nearest_grid_index(double eta);
  const std::vector<double>& grid_log_dets() const { return grid_log_dets_; }
  /// Log-density of the series under the CAR prior.
  double log_density(std::span<const double> series, double eta, double sigma2) const;

 private:
  std::size_t n_;
  std::vector<double> grid_log_dets_;
};

double logit(double w);
/// Inverse logit clamped to [1e-12, 1 - 1e-12].
double inv_logit(double q);

inline constexpr double kInvLogitFloor = 1e-12;

double normal_logpdf(double x, double mean, double variance);
double normal_pdf(double x, double mean, double variance);
double normal_cdf(double x, double mean, double variance);
/// log density of Gamma(shape, rate).
double gamma_logpdf(double x, double shape, double rate);
/// log density of Inverse-Gamma(shape, scale).
double inv_gamma_logpdf(double x, double shape, double scale);
/// log density of N(0, C) at v using a factor of C.
double mvn_logpdf(const Eigen::VectorXd& v, const CholeskyFactor& factor);

/// Cholesky factorization of a symmetric positive-definite band matrix.
/// Entries are stored for the lower band only: at(i, j) with 0 <= i - j <= bandwidth.
class BandedCholesky {
 public:
  BandedCholesky(std::size_t n, std::size_t bandwidth);

  double& at(std::size_t i, std::size_t j) { return data_[i * (bw_ + 1) + (i - j)]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * (bw_ + 1) + (i - j)]; }
  void set_zero();
  /// In-place factorization; throws NotPositiveDefinite.
  void factorize();
  /// Solve M x = b using the factor.
  void solve_in_place(std::span<double> b) const;
  /// x <- L^{-T} x: maps a standard normal vector to a N(0, M^{-1}) draw.
  void upper_solve_in_place(std::span<double> x) const;
  std::size_t size() const { return n_; }
  std::size_t bandwidth() const { return bw_; }

 private:
  void lower_solve_in_place(std::span<double> b) const;
  std::size_t n_;
  std::size_t bw_;
  std::vector<double> data_;
};

}  // namespace pmfuse
