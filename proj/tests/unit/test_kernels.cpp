#include <doctest.h>

#include <cmath>

#include "pmfuse/error.hpp"
#include "pmfuse/kernels.hpp"
#include "pmfuse/mcmc.hpp"
#include "pmfuse/random.hpp"

using namespace pmfuse;

namespace {

std::vector<Location> random_locations(int n, double extent, Rng& rng) {
  std::vector<Location> out;
  for (int i = 0; i < n; ++i) out.push_back({"p" + std::to_string(i), extent * rng.uniform(), extent * rng.uniform()});
  return out;
}

Eigen::MatrixXd random_spd(int n, Rng& rng) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = rng.normal();
  return m * m.transpose() + n * Eigen::MatrixXd::Identity(n, n);
}

/// Conditional of element i by explicit partition into (i, rest).
GaussianSummary partition_conditional(std::size_t i, const Eigen::VectorXd& v, const Eigen::MatrixXd& c) {
  const Eigen::Index n = c.rows();
  std::vector<Eigen::Index> rest;
  for (Eigen::Index k = 0; k < n; ++k)
    if (k != Eigen::Index(i)) rest.push_back(k);
  Eigen::MatrixXd c_rr(n - 1, n - 1);
  Eigen::VectorXd c_ir(n - 1), v_r(n - 1);
  for (Eigen::Index a = 0; a < n - 1; ++a) {
    c_ir(a) = c(i, rest[a]);
    v_r(a) = v(rest[a]);
    for (Eigen::Index b = 0; b < n - 1; ++b) c_rr(a, b) = c(rest[a], rest[b]);
  }
  const Eigen::VectorXd k = c_rr.fullPivLu().solve(c_ir);
  return {k.dot(v_r), c(i, i) - k.dot(c_ir)};
}

}  // namespace

TEST_CASE("exp_cov_matrix examples") {
  Eigen::MatrixXd d(2, 2);
  d << 0.0, 50.0, 50.0, 0.0;
  const auto c = exp_cov_matrix(d, {2.5, 50.0});
  CHECK(c(0, 0) == doctest::Approx(2.5));
  CHECK(c(0, 1) == doctest::Approx(2.5 * 0.36787944117144233));

  Rng rng(3);
  const auto locs = random_locations(5, 300.0, rng);
  const auto dist = distance_matrix(locs);
  const ExpCovParams p{1.7, 80.0};
  const auto m = exp_cov_matrix(dist, p);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(m(i, j) == doctest::Approx(1.7 * std::exp(-dist(i, j) / 80.0)));
}

TEST_CASE("exponential covariance factorizes with minimal jitter") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto locs = random_locations(60, 600.0, rng);
    const double range = 10.0 + 500.0 * rng.uniform();
    const auto c = exp_cov_matrix(distance_matrix(locs), {1.0, range});
    const CholeskyFactor f(c);
    CHECK(f.jitter() <= 1e-6);
  }
}

TEST_CASE("chol_solve and chol_logdet") {
  Eigen::VectorXd b(3);
  b << 1.0, -2.0, 3.5;
  CHECK((chol_solve(Eigen::MatrixXd::Identity(3, 3), b) - b).norm() < 1e-7);
  CHECK(chol_logdet(Eigen::MatrixXd::Identity(3, 3)) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(chol_logdet(4.0 * Eigen::MatrixXd::Identity(3, 3)) == doctest::Approx(3.0 * std::log(4.0)));

  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto c = random_spd(6, rng);
    Eigen::VectorXd rhs(6);
    for (int i = 0; i < 6; ++i) rhs(i) = rng.normal();
    const auto x = chol_solve(c, rhs);
    CHECK((c * x - rhs).norm() < 1e-6 * rhs.norm());
  }

  Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(CholeskyFactor{neg}, NotPositiveDefinite);
}

TEST_CASE("gp_univariate_conditional examples") {
  std::vector<Location> far{{"a", 0, 0}, {"b", 1e6, 0}, {"c", 0, 1e6}};
  const auto c_far = exp_cov_matrix(distance_matrix(far), {2.0, 10.0});
  Eigen::VectorXd v(3);
  v << 0.0, 1.5, -0.7;
  auto g = gp_univariate_conditional(0, v, c_far);
  CHECK(g.mean == doctest::Approx(0.0));
  CHECK(g.variance == doctest::Approx(2.0));

  std::vector<Location> dup{{"a", 0, 0}, {"b", 0, 0}, {"c", 400, 0}};
  const auto c_dup = exp_cov_matrix(distance_matrix(dup), {1.0, 100.0});
  Eigen::VectorXd w(3);
  w << 0.0, 0.8, -0.3;
  g = gp_univariate_conditional(0, w, c_dup);
  CHECK(g.mean == doctest::Approx(0.8).epsilon(1e-4));
  CHECK(g.variance < 1e-4);

  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto locs = random_locations(4, 200.0, rng);
    const auto c = exp_cov_matrix(distance_matrix(locs), {0.5 + rng.uniform(), 30.0 + 100 * rng.uniform()});
    Eigen::VectorXd q(4);
    for (int i = 0; i < 4; ++i) q(i) = rng.normal();
    for (std::size_t i = 0; i < 4; ++i) {
      const auto got = gp_univariate_conditional(i, q, c);
      const auto want = partition_conditional(i, q, c);
      CHECK(got.mean == doctest::Approx(want.mean).epsilon(1e-6));
      CHECK(got.variance == doctest::Approx(want.variance).epsilon(1e-6));
      CHECK(got.variance <= c(i, i));
      const auto via_precision = precision_univariate_conditional(i, q, c.inverse());
      CHECK(via_precision.mean == doctest::Approx(want.mean).epsilon(1e-8));
      CHECK(via_precision.variance == doctest::Approx(want.variance).epsilon(1e-8));
    }
  }
}

TEST_CASE("krige examples") {
  std::vector<Location> obs{{"a", 0, 0}, {"b", 150, 0}, {"c", 0, 150}, {"d", 150, 150}, {"e", 75, 300}};
  Eigen::VectorXd vals(5);
  vals << 1.0, -0.5, 2.0, 0.3, -1.2;
  const ExpCovParams p{1.5, 120.0};

  const auto at_sites = krige(obs, vals, obs, p, 0.0);
  for (int i = 0; i < 5; ++i) {
    CHECK(at_sites[i].mean == doctest::Approx(vals(i)).epsilon(1e-8));
    CHECK(at_sites[i].variance < 1e-6);
  }

  std::vector<Location> far{{"z", 1e7, 1e7}};
  const auto at_far = krige(obs, vals, far, p, 0.4);
  CHECK(at_far[0].mean == doctest::Approx(0.4));
  CHECK(at_far[0].variance == doctest::Approx(1.5));

  std::vector<Location> targets{{"t1", 40, 40}, {"t2", 100, 200}, {"t3", -30, 90}};
  const auto got = krige(obs, vals, targets, p, 0.25);
  std::vector<Location> all = obs;
  all.insert(all.end(), targets.begin(), targets.end());
  const auto c = exp_cov_matrix(distance_matrix(all), p);
  const Eigen::MatrixXd c_oo = c.topLeftCorner(5, 5);
  const Eigen::MatrixXd c_to = c.bottomLeftCorner(3, 5);
  const Eigen::MatrixXd c_tt = c.bottomRightCorner(3, 3);
  const Eigen::VectorXd resid = vals.array() - 0.25;
  const Eigen::VectorXd mean = (c_to * c_oo.inverse() * resid).array() + 0.25;
  const Eigen::MatrixXd cov = c_tt - c_to * c_oo.inverse() * c_to.transpose();
  for (int t = 0; t < 3; ++t) {
    CHECK(got[t].mean == doctest::Approx(mean(t)).epsilon(1e-6));
    CHECK(got[t].variance == doctest::Approx(cov(t, t)).epsilon(1e-6));
  }
}

TEST_CASE("car_full_conditional examples") {
  std::vector<double> s{0.0, 2.0, 0.0, 4.0, 0.0};
  auto g = car_full_conditional(2, s, {0.9, 0.5});
  CHECK(g.mean == doctest::Approx(2.7));
  CHECK(g.variance == doctest::Approx(0.25));

  std::vector<double> e{0.0, 3.0, 7.0};
  g = car_full_conditional(0, e, {1.0, 1.0});
  CHECK(g.mean == doctest::Approx(3.0));
  CHECK(g.variance == doctest::Approx(1.0));

  g = car_full_conditional(1, e, {0.0, 2.0});
  CHECK(g.mean == 0.0);
}

TEST_CASE("car_full_conditional is reversal invariant on symmetric series") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + int(20 * rng.uniform());
    std::vector<double> s(n);
    for (int i = 0; i <= n / 2; ++i) s[i] = s[n - 1 - i] = rng.normal();
    const CarParams p{rng.uniform(), 0.1 + rng.uniform()};
    double fwd = 0.0, rev = 0.0;
    std::vector<double> r(s.rbegin(), s.rend());
    for (int t = 0; t < n; ++t) {
      fwd += car_full_conditional(t, s, p).mean;
      rev += car_full_conditional(t, r, p).mean;
    }
    CHECK(fwd == doctest::Approx(rev).epsilon(1e-12));
  }
}

TEST_CASE("TemporalCar matches dense algebra") {
  const std::size_t n = 12;
  TemporalCar car(n);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n), w = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t t = 0; t < n; ++t) {
    d(t, t) = car.neighbor_count(t);
    if (t + 1 < n) w(t, t + 1) = w(t + 1, t) = 1.0;
  }
  CHECK(car.neighbor_count(0) == 1);
  CHECK(car.neighbor_count(5) == 2);
  Rng rng(19);
  std::vector<double> a(n);
  for (auto& x : a) x = rng.normal();
  const Eigen::Map<const Eigen::VectorXd> av(a.data(), n);
  for (double eta : {0.0, 0.3, 0.95}) {
    const Eigen::MatrixXd m = d - eta * w;
    CHECK(car.log_det(eta) == doctest::Approx(std::log(m.determinant())).epsilon(1e-10));
    CHECK(car.quadratic_form(a, eta) == doctest::Approx(av.dot(m * av)).epsilon(1e-12));
    const double sigma2 = 0.7;
    const double want = -0.5 * n * std::log(2 * M_PI * sigma2) + 0.5 * std::log(m.determinant()) -
                        0.5 * av.dot(m * av) / sigma2;
    CHECK(car.log_density(a, eta, sigma2) == doctest::Approx(want).epsilon(1e-10));
  }
  CHECK(TemporalCar::grid_point(0) == doctest::Approx(0.0005));
  CHECK(TemporalCar::grid_point(999) == doctest::Approx(0.9995));
  CHECK(TemporalCar::nearest_grid_index(0.8996) == 899);
  CHECK(TemporalCar::nearest_grid_index(0.9004) == 900);
  CHECK(TemporalCar::nearest_grid_index(0.0) == 0);
  CHECK(TemporalCar::nearest_grid_index(1.0) == 999);
  REQUIRE(car.grid_log_dets().size() == 1000);
  CHECK(car.grid_log_dets()[123] == doctest::Approx(car.log_det(TemporalCar::grid_point(123))));
}

TEST_CASE("BandedCholesky agrees with dense factorization") {
  Rng rng(23);
  const std::size_t n = 15, bw = 2;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = (i >= bw ? i - bw : 0); j < i; ++j) m(i, j) = m(j, i) = rng.normal() * 0.3;
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 3.0 + rng.uniform();
  BandedCholesky band(n, bw);
  band.set_zero();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = (i >= bw ? i - bw : 0); j <= i; ++j) band.at(i, j) = m(i, j);
  band.factorize();
  std::vector<double> b(n);
  for (auto& x : b) x = rng.normal();
  const Eigen::VectorXd want = m.llt().solve(Eigen::Map<Eigen::VectorXd>(b.data(), n));
  band.solve_in_place(b);
  for (std::size_t i = 0; i < n; ++i) CHECK(b[i] == doctest::Approx(want(i)).epsilon(1e-12));

  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal();
  const Eigen::VectorXd xv = Eigen::Map<Eigen::VectorXd>(x.data(), n);
  band.upper_solve_in_place(x);
  const Eigen::MatrixXd u = m.llt().matrixU();
  const Eigen::VectorXd want_u = u.triangularView<Eigen::Upper>().solve(xv);
  for (std::size_t i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(want_u(i)).epsilon(1e-12));
}

TEST_CASE("logit round trip and clamping") {
  CHECK(logit(0.5) == 0.0);
  CHECK(inv_logit(0.0) == 0.5);
  CHECK_THROWS_AS(logit(0.0), DomainError);
  CHECK_THROWS_AS(logit(1.0), DomainError);
  CHECK_THROWS_AS(logit(-0.2), DomainError);
  Rng rng(29);
  for (int i = 0; i < 1000; ++i) {
    const double w = 1e-6 + (1 - 2e-6) * rng.uniform();
    CHECK(std::abs(inv_logit(logit(w)) - w) < 1e-12);
  }
  CHECK(inv_logit(-1000.0) == kInvLogitFloor);
  CHECK(inv_logit(1000.0) == 1.0 - kInvLogitFloor);
}

TEST_CASE("densities") {
  CHECK(normal_pdf(0.0, 0.0, 1.0) == doctest::Approx(0.3989422804014327));
  CHECK(normal_cdf(1.959963984540054, 0.0, 1.0) == doctest::Approx(0.975));
  CHECK(normal_logpdf(2.0, 1.0, 4.0) == doctest::Approx(std::log(normal_pdf(2.0, 1.0, 4.0))));
  CHECK(gamma_logpdf(2.0, 3.0, 0.5) == doctest::Approx(std::log(std::pow(0.5, 3) * 4.0 * std::exp(-1.0) / 2.0)));
  CHECK(inv_gamma_logpdf(0.5, 2.0, 1.0) == doctest::Approx(std::log(1.0 * std::pow(0.5, -3.0) * std::exp(-2.0))));

  Eigen::MatrixXd c(2, 2);
  c << 2.0, 0.5, 0.5, 1.0;
  Eigen::VectorXd v(2);
  v << 0.3, -0.8;
  const double want = -std::log(2 * M_PI) - 0.5 * std::log(c.determinant()) - 0.5 * v.dot(c.inverse() * v);
  CHECK(mvn_logpdf(v, CholeskyFactor(c)) == doctest::Approx(want).epsilon(1e-7));
}

TEST_CASE("AdaptiveScale moves toward the acceptance band and freezes") {
  AdaptiveScale always(1.0);
  for (int i = 0; i < 500; ++i) {
    always.record(true);
    always.end_iteration(true);
  }
  CHECK(always.variance() > 1.0);
  const double frozen = always.variance();
  for (int i = 0; i < 500; ++i) {
    always.record(true);
    always.end_iteration(false);
  }
  CHECK(always.variance() == frozen);

  AdaptiveScale never(1.0);
  for (int i = 0; i < 500; ++i) {
    never.record(false);
    never.end_iteration(true);
  }
  CHECK(never.variance() < 1.0);
  CHECK(never.acceptance_rate() == 0.0);
}

TEST_CASE("MCMCConfig validation and retention") {
  MCMCConfig c;
  CHECK(c.retained() == 1250);
  CHECK(c.keeps(5004));
  CHECK_FALSE(c.keeps(5000));
  CHECK_FALSE(c.keeps(5003));
  c.burn_in = c.n_iter;
  CHECK_THROWS(c.validate());
  c = MCMCConfig{};
  c.thin = 0;
  CHECK_THROWS(c.validate());
  c = MCMCConfig{};
  c.kappa_w = 0.0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("derive_seed gives distinct reproducible streams") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  Rng a(derive_seed(5, 1)), b(derive_seed(5, 1));
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  Rng r(3);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) sum += r.gamma(2.0, 4.0);
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
}
