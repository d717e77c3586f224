#include "pmfuse/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pmfuse/error.hpp"

namespace pmfuse {

namespace {
constexpr double kJitterStart = 1e-8;
constexpr double kJitterMax = 1e-4;
constexpr double kLogTwoPi = 1.8378770664093454836;
}  // namespace

void ExpCovParams::validate() const {
  if (!(marginal_variance >= 0.0) || !std::isfinite(marginal_variance)) {
    throw DomainError("marginal_variance must be finite and >= 0");
  }
  if (!(range > 0.0)) throw DomainError("range must be > 0");
}

Eigen::MatrixXd exp_cov_matrix(const Eigen::MatrixXd& distances, const ExpCovParams& params) {
  params.validate();
  return params.marginal_variance * (-distances.array() / params.range).exp().matrix();
}

CholeskyFactor::CholeskyFactor(const Eigen::MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  if (n != matrix.cols()) throw DomainError("Cholesky of a non-square matrix");
  if (n == 0) {
    llt_.compute(matrix);
    return;
  }
  double scale = matrix.diagonal().mean();
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  for (double rel = kJitterStart; rel <= kJitterMax * 1.0000001; rel *= 10.0) {
    Eigen::MatrixXd jittered = matrix;
    jittered.diagonal().array() += rel * scale;
    llt_.compute(jittered);
    if (llt_.info() == Eigen::Success) {
      jitter_ = rel * scale;
      return;
    }
  }
  throw NotPositiveDefinite("Cholesky failed after maximum jitter");
}

double CholeskyFactor::quadratic_form(const Eigen::VectorXd& rhs) const {
  return llt_.matrixL().solve(rhs).squaredNorm();
}

double CholeskyFactor::log_determinant() const {
  if (llt_.rows() == 0) return 0.0;
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd CholeskyFactor::inverse() const {
  return llt_.solve(Eigen::MatrixXd::Identity(llt_.rows(), llt_.rows()));
}

Eigen::VectorXd chol_solve(const Eigen::MatrixXd& cov, const Eigen::VectorXd& rhs) {
  return CholeskyFactor(cov).solve(rhs);
}

double chol_logdet(const Eigen::MatrixXd& cov) { return CholeskyFactor(cov).log_determinant(); }

GaussianSummary gp_univariate_conditional(std::size_t i, const Eigen::VectorXd& values,
                                          const Eigen::MatrixXd& cov) {
  const Eigen::Index n = cov.rows();
  const auto ii = static_cast<Eigen::Index>(i);
  if (ii >= n || values.size() != n) throw DomainError("gp_univariate_conditional: bad index");
  if (n == 1) return {0.0, cov(0, 0)};
  std::vector<Eigen::Index> others;
  others.reserve(static_cast<std::size_t>(n - 1));
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j != ii) others.push_back(j);
  }
  const Eigen::MatrixXd c_oo = cov(others, others);
  const Eigen::VectorXd c_io = cov(others, ii);
  const Eigen::VectorXd q_o = values(others);
  const CholeskyFactor factor(c_oo);
  const Eigen::VectorXd weights = factor.solve(c_io);
  const double mean = weights.dot(q_o);
  const double variance = std::max(0.0, cov(ii, ii) - c_io.dot(weights));
  return {mean, variance};
}

GaussianSummary precision_univariate_conditional(std::size_t i, const Eigen::VectorXd& values,
                                                 const Eigen::MatrixXd& precision) {
  const auto ii = static_cast<Eigen::Index>(i);
  const double q_ii = precision(ii, ii);
  const double off = precision.row(ii).dot(values) - q_ii * values(ii);
  return {-off / q_ii, 1.0 / q_ii};
}

std::vector<GaussianSummary> krige(std::span<const Location> observed,
                                   const Eigen::VectorXd& values,
                                   std::span<const Location> targets, const ExpCovParams& params,
                                   double mean) {
  if (observed.empty()) throw EmptyInput("krige: no observed sites");
  if (static_cast<std::size_t>(values.size()) != observed.size()) {
    throw DomainError("krige: values and locations differ in length");
  }
  params.validate();
  const CholeskyFactor factor(exp_cov_matrix(distance_matrix(observed), params));
  const Eigen::VectorXd centered = values.array() - mean;
  const Eigen::VectorXd alpha = factor.solve(centered);
  const Eigen::MatrixXd cross = exp_cov_matrix(cross_distances(observed, targets), params);
  const Eigen::MatrixXd half = factor.half_solve(cross);
  std::vector<GaussianSummary> out(targets.size());
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out[j].mean = mean + cross.col(jj).dot(alpha);
    out[j].variance = std::max(0.0, params.marginal_variance - half.col(jj).squaredNorm());
  }
  return out;
}

GaussianSummary car_full_conditional(std::size_t t, std::span<const double> series,
                                     const CarParams& params) {
  const std::size_t n = series.size();
  if (n < 2) throw DomainError("car_full_conditional: series needs at least two days");
  if (t >= n) throw DomainError("car_full_conditional: day out of range");
  double sum = 0.0;
  int count = 0;
  if (t > 0) {
    sum += series[t - 1];
    ++count;
  }
  if (t + 1 < n) {
    sum += series[t + 1];
    ++count;
  }
  return {params.dependence * sum / count, params.conditional_variance / count};
}

TemporalCar::TemporalCar(std::size_t n_days) : n_(n_days) {
  if (n_days < 2) throw InsufficientData("temporal CAR needs at least two days");
  grid_log_dets_.resize(kGridSize);
  for (int k = 0; k < kGridSize; ++k) grid_log_dets_[k] = log_det(grid_point(k));
}

int TemporalCar::neighbor_count(std::size_t t) const { return (t == 0 || t + 1 == n_) ? 1 : 2; }

std::pair<double, double> TemporalCar::quadratic_parts(std::span<const double> series) const {
  double dd = 0.0;
  double ww = 0.0;
  for (std::size_t t = 0; t < n_; ++t) {
    dd += neighbor_count(t) * series[t] * series[t];
    if (t + 1 < n_) ww += 2.0 * series[t] * series[t + 1];
  }
  return {dd, ww};
}

double TemporalCar::quadratic_form(std::span<const double> series, double eta) const {
  const auto [dd, ww] = quadratic_parts(series);
  return dd - eta * ww;
}

double TemporalCar::log_det(double eta) const {
  // Tridiagonal recurrence on the pivots r_k = d_k - eta^2 / r_{k-1}.
  double total = 0.0;
  double pivot = 0.0;
  for (std::size_t t = 0; t < n_; ++t) {
    const double d = neighbor_count(t);
    pivot = (t == 0) ? d : d - eta * eta / pivot;
    total += std::log(pivot);
  }
  return total;
}

int TemporalCar::nearest_grid_index(double eta) {
  const int k = static_cast<int>(std::floor(eta * kGridSize));
  return std::clamp(k, 0, kGridSize - 1);
}

double TemporalCar::log_density(std::span<const double> series, double eta, double sigma2) const {
  return 0.5 * log_det(eta) - 0.5 * static_cast<double>(n_) * (kLogTwoPi + std::log(sigma2)) -
         0.5 * quadratic_form(series, eta) / sigma2;
}

double logit(double w) {
  if (!(w > 0.0 && w < 1.0)) throw DomainError("logit: argument must lie in (0, 1)");
  return std::log(w) - std::log1p(-w);
}

double inv_logit(double q) {
  const double w = q >= 0.0 ? 1.0 / (1.0 + std::exp(-q)) : std::exp(q) / (1.0 + std::exp(q));
  return std::clamp(w, kInvLogitFloor, 1.0 - kInvLogitFloor);
}

double normal_logpdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance) + d * d / variance);
}

double normal_pdf(double x, double mean, double variance) {
  return std::exp(normal_logpdf(x, mean, variance));
}

double normal_cdf(double x, double mean, double variance) {
  return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * variance));
}

double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double inv_gamma_logpdf(double x, double shape, double scale) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double mvn_logpdf(const Eigen::VectorXd& v, const CholeskyFactor& factor) {
  return -0.5 * (static_cast<double>(v.size()) * kLogTwoPi + factor.log_determinant() +
                 factor.quadratic_form(v));
}

BandedCholesky::BandedCholesky(std::size_t n, std::size_t bandwidth)
    : n_(n), bw_(bandwidth), data_(n * (bandwidth + 1), 0.0) {}

void BandedCholesky::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void BandedCholesky::factorize() {
  for (std::size_t j = 0; j < n_; ++j) {
    const std::size_t lo = j > bw_ ? j - bw_ : 0;
    double diag = at(j, j);
    for (std::size_t k = lo; k < j; ++k) diag -= at(j, k) * at(j, k);
    if (!(diag > 0.0)) throw NotPositiveDefinite("banded Cholesky: matrix not positive definite");
    const double ljj = std::sqrt(diag);
    at(j, j) = ljj;
    const std::size_t hi = std::min(n_ - 1, j + bw_);
    for (std::size_t i = j + 1; i <= hi; ++i) {
      const std::size_t lo_i = i > bw_ ? i - bw_ : 0;
      double v = at(i, j);
      for (std::size_t k = lo_i; k < j; ++k) v -= at(i, k) * at(j, k);
      at(i, j) = v / ljj;
    }
  }
}

void BandedCholesky::lower_solve_in_place(std::span<double> b) const {
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t lo = i > bw_ ? i - bw_ : 0;
    double v = b[i];
    for (std::size_t k = lo; k < i; ++k) v -= at(i, k) * b[k];
    b[i] = v / at(i, i);
  }
}

void BandedCholesky::upper_solve_in_place(std::span<double> x) const {
  for (std::size_t ii = n_; ii-- > 0;) {
    const std::size_t hi = std::min(n_ - 1, ii + bw_);
    double v = x[ii];
    for (std::size_t k = ii + 1; k <= hi; ++k) v -= at(k, ii) * x[k];
    x[ii] = v / at(ii, ii);
  }
}

void BandedCholesky::solve_in_place(std::span<double> b) const {
  lower_solve_in_place(b);
  upper_solve_in_place(b);
}

}  // namespace pmfuse
