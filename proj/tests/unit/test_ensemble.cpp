#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmfuse/error.hpp"
#include "pmfuse/ensemble.hpp"
#include "pmfuse/geo.hpp"
#include "pmfuse/stats.hpp"
#include "pmfuse/synth.hpp"

using namespace pmfuse;

namespace {

MCMCConfig short_run(std::uint64_t seed = 1) {
  MCMCConfig c;
  c.n_iter = 3000;
  c.burn_in = 1000;
  c.thin = 2;
  c.seed = seed;
  return c;
}

std::vector<Location> line_sites(int n, double spacing) {
  std::vector<Location> out;
  for (int i = 0; i < n; ++i) out.push_back({"S" + std::to_string(i), i * spacing, 0.0});
  return out;
}

/// Component 1 centered on y with a small variance; component 2 far off.
std::vector<EnsembleObservation> separated(int n_sites, int n_days, Rng& rng) {
  std::vector<EnsembleObservation> obs;
  for (int s = 0; s < n_sites; ++s)
    for (int t = 0; t < n_days; ++t) {
      const double y = rng.normal(15, 4);
      obs.push_back({std::size_t(s), t + 1, y, {y + rng.normal(0, 0.1), 0.01, true},
                     {y + rng.normal(0, 8), 1.0, true}});
    }
  return obs;
}

double direct_z_probability(double y, const PredictiveInput& a, const PredictiveInput& b, double w) {
  const double pa = w * std::exp(-0.5 * (y - a.mu) * (y - a.mu) / a.var) / std::sqrt(2 * M_PI * a.var);
  const double pb = (1 - w) * std::exp(-0.5 * (y - b.mu) * (y - b.mu) / b.var) / std::sqrt(2 * M_PI * b.var);
  return pa / (pa + pb);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("z_probability examples") {
  const PredictiveInput a{10.0, 2.0, true};
  CHECK(z_probability(11.0, a, a, 0.5) == doctest::Approx(0.5));
  const double shift = std::sqrt(2.0 * std::log(3.0));
  CHECK(z_probability(0.0, {0.0, 1.0, true}, {shift, 1.0, true}, 0.5) == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(53);
  for (int i = 0; i < 2000; ++i) {
    const PredictiveInput c{rng.normal(15, 5), 0.2 + 9 * rng.uniform(), true};
    const PredictiveInput s{rng.normal(15, 5), 0.2 + 9 * rng.uniform(), true};
    const double y = rng.normal(15, 4), w = 0.01 + 0.98 * rng.uniform();
    CHECK(std::abs(z_probability(y, c, s, w) - direct_z_probability(y, c, s, w)) < 1e-12);
  }
  const double extreme = z_probability(0.0, {0.0, 1.0, true}, {1e4, 1.0, true}, 0.5);
  CHECK(extreme > 0.0);
  CHECK(extreme <= 1.0);
}

TEST_CASE("update_z skips observations with a missing source") {
  std::vector<EnsembleObservation> obs{{0, 1, 5.0, {5.0, 0.01, true}, {50.0, 1.0, true}},
                                       {0, 2, 5.0, {5.0, 0.01, true}, {0.0, 0.0, false}},
                                       {1, 1, 5.0, {50.0, 1.0, true}, {5.0, 0.01, true}}};
  Eigen::VectorXd q = Eigen::VectorXd::Zero(2);
  std::vector<std::uint8_t> z(3, 7);
  std::vector<double> sum_z(2), n_obs(2);
  Rng rng(59);
  update_z(obs, q, z, sum_z, n_obs, rng);
  CHECK(z[0] == 1);
  CHECK(z[1] == 0);
  CHECK(z[2] == 0);
  CHECK(sum_z[0] == 1.0);
  CHECK(n_obs[0] == 1.0);
  CHECK(sum_z[1] == 0.0);
  CHECK(n_obs[1] == 1.0);
}

TEST_CASE("bernoulli_logit_loglik") {
  CHECK(bernoulli_logit_loglik(0.0, 3.0, 5.0) == doctest::Approx(-5.0 * std::log(2.0)));
  const double q = 1.3;
  CHECK(bernoulli_logit_loglik(q, 2.0, 4.0) == doctest::Approx(2 * q - 4 * std::log1p(std::exp(q))));
  CHECK(std::isfinite(bernoulli_logit_loglik(800.0, 1.0, 1.0)));
}

TEST_CASE("update_q with a vanishing step is always accepted") {
  Eigen::MatrixXd precision(2, 2);
  precision << 2.0, -0.5, -0.5, 1.0;
  Eigen::VectorXd q(2);
  q << 0.4, -0.2;
  Rng rng(61);
  int accepted = 0;
  for (int i = 0; i < 1000; ++i) accepted += update_q(0, 3.0, 5.0, q, precision, 1e-30, rng);
  CHECK(accepted == 1000);
}

TEST_CASE("update_q under a flat prior with all z = 1 pushes w up") {
  Eigen::MatrixXd precision(1, 1);
  precision << 1e-8;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(1);
  Rng rng(67);
  double sum_w = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    update_q(0, 10.0, 10.0, q, precision, 4.0, rng);
    if (i >= 2000) sum_w += inv_logit(q(0));
  }
  const double mean_w = sum_w / (n - 2000);

  // Grid oracle for the target inv_logit(q)^10 restricted to [-8, 8].
  double num = 0.0, den = 0.0;
  for (double x = -8.0; x <= 8.0; x += 1e-4) {
    const double d = std::exp(10.0 * std::log(inv_logit(x)));
    num += d * inv_logit(x);
    den += d;
  }
  CHECK(mean_w > 0.9);
  CHECK(num / den > 0.9);
}

TEST_CASE("co-located sites have tightly coupled q chains") {
  const std::vector<Location> sites{{"a", 0, 0}, {"b", 0, 0}};
  const auto cov = exp_cov_matrix(distance_matrix(sites), {1.0, 100.0});
  const Eigen::MatrixXd precision = CholeskyFactor(cov).inverse();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(2);
  Rng rng(71);
  std::vector<double> a, b;
  const double step = 2.4 * 2.4 / precision(0, 0);
  for (int i = 0; i < 20000; ++i) {
    update_q(0, 0.0, 0.0, q, precision, step, rng);
    update_q(1, 0.0, 0.0, q, precision, step, rng);
    a.push_back(q(0));
    b.push_back(q(1));
  }
  CHECK(correlation(a, b) > 0.9);
}

TEST_CASE("update_tau2 examples") {
  Rng rng(73);
  const Eigen::VectorXd empty(0);
  const CholeskyFactor none(Eigen::MatrixXd(0, 0));
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += update_tau2(empty, none, 3.0, 2.0, rng);
  CHECK(sum / n == doctest::Approx(1.0).epsilon(0.02));

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
  const CholeskyFactor identity(Eigen::MatrixXd::Identity(4, 4));
  sum = 0.0;
  for (int i = 0; i < n; ++i) sum += update_tau2(ones, identity, 0.001, 0.001, rng);
  CHECK(sum / n == doctest::Approx(2.001 / 1.001).epsilon(0.02));

  Rng r1(79), r2(79);
  const double base = update_tau2(ones, identity, 2.0, 0.0, r1);
  const double scaled = update_tau2(3.0 * ones, identity, 2.0, 0.0, r2);
  CHECK(scaled == doctest::Approx(9.0 * base).epsilon(1e-12));
}

TEST_CASE("update_rho examples") {
  std::vector<Location> sites = line_sites(5, 50.0);
  const auto d = distance_matrix(sites);
  Eigen::VectorXd q(5);
  q << 0.1, 0.3, -0.2, 0.5, 0.0;
  Rng rng(83);
  double rho = 120.0;
  int accepted = 0;
  for (int i = 0; i < 200; ++i) accepted += update_rho(q, 1.0, rho, 1e-30, d, {}, rng);
  CHECK(accepted == 200);

  Rng gp(89);
  std::vector<Location> forty;
  for (int i = 0; i < 40; ++i) forty.push_back({"s" + std::to_string(i), 1000 * gp.uniform(), 1000 * gp.uniform()});
  const Eigen::VectorXd truth = sample_exp_gp(forty, 1.0, 300.0, 97);
  const auto d40 = distance_matrix(forty);
  rho = 250.0;
  std::vector<double> draws;
  AdaptiveScale scale(0.09);
  for (int i = 0; i < 6000; ++i) {
    scale.record(update_rho(truth, 1.0, rho, scale.variance(), d40, {}, rng));
    scale.end_iteration(i < 2000);
    if (i >= 2000) draws.push_back(rho);
  }
  std::sort(draws.begin(), draws.end());
  const double median = sorted_quantile(draws, 0.5);
  CHECK(median >= 150.0);
  CHECK(median <= 600.0);
}

TEST_CASE("fit_joint separation and symmetry") {
  Rng rng(101);
  const auto sites = line_sites(6, 80.0);
  const auto obs = separated(6, 40, rng);
  const auto post = fit_joint(obs, sites, short_run(3));
  REQUIRE(post.summaries.size() == 6);
  for (const auto& s : post.summaries) CHECK(s.w_mean > 0.9);
  CHECK(post.samples.size() == std::size_t(short_run().retained()));
  for (const auto& f : post.samples) {
    CHECK(f.tau2 > 0.0);
    CHECK(f.rho > 0.0);
  }

  std::vector<EnsembleObservation> sym;
  for (int s = 0; s < 6; ++s)
    for (int t = 0; t < 40; ++t) {
      const double y = rng.normal(15, 3);
      sym.push_back({std::size_t(s), t + 1, y, {15.0, 9.0, true}, {15.0, 9.0, true}});
    }
  const auto sym_post = fit_joint(sym, sites, short_run(5));
  for (const auto& s : sym_post.summaries) {
    CHECK(s.w_mean >= 0.3);
    CHECK(s.w_mean <= 0.7);
  }
}

TEST_CASE("fit_site_weight with z fixed at one gives Beta(10, 1)") {
  std::vector<EnsembleObservation> obs;
  for (int t = 0; t < 9; ++t) obs.push_back({0, t + 1, 10.0, {10.0, 1e-4, true}, {1000.0, 1.0, true}});
  MCMCConfig c = short_run();
  c.n_iter = 41000;
  const auto site = fit_site_weight(obs, c, 7);
  CHECK(site.median == doctest::Approx(std::pow(0.5, 0.1)).epsilon(0.01));
  CHECK(site.mean == doctest::Approx(10.0 / 11.0).epsilon(1e-12));
  CHECK(site.lo == doctest::Approx(std::pow(0.025, 0.1)).epsilon(0.01));
}

TEST_CASE("fit_two_stage leaves sites without data out of the field") {
  Rng rng(103);
  const auto sites = line_sites(5, 60.0);
  auto obs = separated(5, 30, rng);
  std::erase_if(obs, [](const EnsembleObservation& o) { return o.site == 2; });
  obs.push_back({2, 1, 12.0, {12.0, 1.0, true}, {0.0, 0.0, false}});
  const auto post = fit_two_stage(obs, sites, short_run(9));
  CHECK(post.variant == EnsembleVariant::TwoStage);
  CHECK(post.field_sites.size() == 4);
  for (const auto& f : post.field_sites) CHECK(f.id != "S2");
  REQUIRE(post.summaries.size() == 5);
  for (std::size_t s = 0; s < 5; ++s) {
    CHECK(post.summaries[s].w_mean > 0.0);
    CHECK(post.summaries[s].w_mean < 1.0);
    if (s != 2) CHECK(post.summaries[s].w_mean > 0.9);
  }
}

TEST_CASE("two-stage and joint agree on a synthetic scene") {
  SceneConfig cfg;
  cfg.n_sites = 25;
  cfg.n_days = 120;
  cfg.seed = 107;
  const auto truth = generate_scene(cfg);
  const auto joint = fit_joint(truth.ensemble, truth.sites, short_run(11));
  const auto two = fit_two_stage(truth.ensemble, truth.sites, short_run(11));
  double mad = 0.0;
  std::vector<double> est, tru;
  for (int s = 0; s < cfg.n_sites; ++s) {
    mad += std::abs(joint.summaries[s].w_mean - two.summaries[s].w_mean);
    est.push_back(joint.summaries[s].w_mean);
    tru.push_back(truth.w(s));
  }
  CHECK(mad / cfg.n_sites < 0.15);
  CHECK(correlation(est, tru) > 0.5);
}

TEST_CASE("krige_weights exactness, reversion and bookkeeping") {
  Rng rng(109);
  const auto sites = line_sites(6, 80.0);
  const auto obs = separated(6, 40, rng);
  const auto post = fit_joint(obs, sites, short_run(13));

  const auto at_sites = krige_weights(post, sites, 17);
  for (int s = 0; s < 6; ++s) CHECK(std::abs(at_sites[s].w_mean - post.summaries[s].w_mean) < 0.05);

  const std::vector<Location> far{{"far", 1e6, 1e6}};
  const auto at_far = krige_weights(post, far, 17);
  CHECK(at_far[0].w_mean == doctest::Approx(0.5).epsilon(0.1));
  CHECK(at_far[0].w_hi - at_far[0].w_lo > 0.5);

  const auto cells = cell_centers(GridSpec{-100, -100, 20, 25, 40, Source::Sat});
  const auto grid = krige_weights(post, cells, 17, 2);
  REQUIRE(grid.size() == 1000);
  for (const auto& g : grid) {
    CHECK(g.w_mean > 0.0);
    CHECK(g.w_mean < 1.0);
    CHECK(g.w_lo <= g.w_mean);
    CHECK(g.w_mean <= g.w_hi);
  }
  const auto again = krige_weights(post, cells, 17, 1);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(again[i].w_mean == grid[i].w_mean);
}

TEST_CASE("predict_mixture") {
  const PredictiveInput ctm{10.0, 4.0, true}, sat{20.0, 4.0, true}, none{0.0, 0.0, false};
  auto m = predict_mixture(ctm, sat, 1.0);
  CHECK(m.mean() == doctest::Approx(10.0));
  CHECK(m.variance() == doctest::Approx(4.0));
  m = predict_mixture(ctm, sat, 0.5);
  CHECK(m.mean() == doctest::Approx(15.0));
  CHECK(m.variance() == doctest::Approx(29.0));
  m = predict_mixture(ctm, none, 0.3);
  CHECK(m.w == 1.0);
  CHECK(m.mean() == doctest::Approx(10.0));
  m = predict_mixture(none, sat, 0.3);
  CHECK(m.mean() == doctest::Approx(20.0));
  CHECK_THROWS_AS(predict_mixture(none, none, 0.5), NoInputs);

  Rng rng(113);
  for (int i = 0; i < 200; ++i) {
    const auto mix = predict_mixture({rng.normal(10, 5), 1 + rng.uniform(), true},
                                     {rng.normal(10, 5), 1 + rng.uniform(), true}, rng.uniform());
    const double med = mix.quantile(0.5);
    CHECK(mix.quantile(0.025) <= med);
    CHECK(med <= mix.quantile(0.975));
  }
}

TEST_CASE("variant names") {
  CHECK(parse_variant("joint") == EnsembleVariant::Joint);
  CHECK(parse_variant("two_stage") == EnsembleVariant::TwoStage);
  CHECK(to_string(EnsembleVariant::TwoStage) == "two_stage");
  CHECK_THROWS(parse_variant("bma"));
}
