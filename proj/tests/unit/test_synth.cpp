#include <doctest.h>

#include <cmath>

#include "pmfuse/kernels.hpp"
#include "pmfuse/random.hpp"
#include "pmfuse/synth.hpp"

using namespace pmfuse;

namespace {

SceneConfig small(int sites, int days, std::uint64_t seed) {
  SceneConfig c;
  c.n_sites = sites;
  c.n_days = days;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("scene layout") {
  const auto truth = generate_scene(small(15, 20, 301));
  CHECK(truth.sites.size() == 15);
  CHECK(truth.table.records.size() == 300);
  CHECK(truth.ensemble.size() == 300);
  CHECK(truth.z.size() == 300);
  CHECK(truth.ctm_grid.n_rows == 50);
  CHECK(truth.sat_grid.n_rows == 100);
  CHECK(truth.ctm.n_days == 20);
  for (const auto& s : truth.sites) {
    CHECK(s.x >= 0.0);
    CHECK(s.x < 600.0);
    CHECK(s.y >= 0.0);
    CHECK(s.y < 600.0);
  }
  for (Eigen::Index s = 0; s < truth.w.size(); ++s) {
    CHECK(truth.w(s) > 0.0);
    CHECK(truth.w(s) < 1.0);
    CHECK(truth.w(s) == doctest::Approx(inv_logit(truth.q(s))));
  }
  truth.table.validate();
}

TEST_CASE("missingness follows the configured rate") {
  auto cfg = small(30, 100, 303);
  cfg.sat_missing_rate = 0.0;
  auto truth = generate_scene(cfg);
  for (const auto& r : truth.table.records) CHECK_FALSE(is_missing(r.x_sat));
  for (double v : truth.sat.values) CHECK_FALSE(is_missing(v));
  for (const auto& o : truth.ensemble) CHECK(o.sat.available);

  cfg.sat_missing_rate = 0.61;
  truth = generate_scene(cfg);
  std::size_t missing = 0;
  for (const auto& r : truth.table.records) missing += is_missing(r.x_sat);
  const double rate = double(missing) / double(truth.table.records.size());
  CHECK(rate == doctest::Approx(0.61).epsilon(0.06));
  for (std::size_t i = 0; i < truth.ensemble.size(); ++i)
    CHECK(truth.ensemble[i].sat.available == !is_missing(truth.table.records[i].x_sat));
}

TEST_CASE("noiseless identity") {
  auto cfg = small(10, 30, 307);
  cfg.sigma2_y = 0.0;
  cfg.gamma = {};
  cfg.intercept = 0.0;
  cfg.slope = 1.0;
  cfg.a11 = cfg.a21 = cfg.a22 = 0.0;
  cfg.sigma2_alpha0 = 0.0;
  cfg.sigma2_beta0 = 0.0;
  const auto truth = generate_scene(cfg);
  for (const auto& r : truth.table.records) CHECK(r.y == r.x_ctm);
}

TEST_CASE("regenerating with the same seed is bit-identical") {
  const auto cfg = small(12, 25, 311);
  const auto a = generate_scene(cfg);
  const auto b = generate_scene(cfg);
  REQUIRE(a.table.records.size() == b.table.records.size());
  for (std::size_t i = 0; i < a.table.records.size(); ++i) {
    const auto& ra = a.table.records[i];
    const auto& rb = b.table.records[i];
    CHECK(ra.y == rb.y);
    CHECK(ra.x_ctm == rb.x_ctm);
    CHECK((ra.x_sat == rb.x_sat || (is_missing(ra.x_sat) && is_missing(rb.x_sat))));
    CHECK(ra.z == rb.z);
  }
  CHECK(a.q == b.q);
  CHECK(a.v1 == b.v1);
  CHECK(a.alpha0 == b.alpha0);
  CHECK(a.z == b.z);
  CHECK(std::equal(a.ctm.values.begin(), a.ctm.values.end(), b.ctm.values.begin()));
  for (std::size_t i = 0; i < a.ensemble.size(); ++i) CHECK(a.ensemble[i].y == b.ensemble[i].y);

  auto other = cfg;
  other.seed = 312;
  CHECK(generate_scene(other).q != a.q);
}

TEST_CASE("half-split weights") {
  auto cfg = small(40, 10, 313);
  cfg.weight_pattern = WeightPattern::HalfSplit;
  cfg.half_split_q = 3.0;
  const auto truth = generate_scene(cfg);
  for (std::size_t s = 0; s < truth.sites.size(); ++s) {
    const double expected = truth.sites[s].x < 300.0 ? 3.0 : -3.0;
    CHECK(truth.q(s) == expected);
  }
}

TEST_CASE("GP weight field has the configured variogram") {
  auto cfg = small(200, 2, 317);
  const auto truth = generate_scene(cfg);
  const auto fit = fit_exponential_variogram(truth.sites, truth.q);
  CHECK(fit.range > 150.0);
  CHECK(fit.range < 600.0);
}

TEST_CASE("variogram oracle recovers a dense GP") {
  std::vector<Location> locs;
  Rng rng(319);
  for (int i = 0; i < 400; ++i) locs.push_back({"p" + std::to_string(i), 2000 * rng.uniform(), 2000 * rng.uniform()});
  const auto v = sample_exp_gp(locs, 2.0, 100.0, 321);
  const auto fit = fit_exponential_variogram(locs, v);
  CHECK(fit.range == doctest::Approx(100.0).epsilon(0.5));
  CHECK(fit.sill == doctest::Approx(2.0).epsilon(0.3));
}

TEST_CASE("brute-force weight posterior") {
  std::vector<EnsembleObservation> sym;
  Rng rng(323);
  for (int t = 0; t < 15; ++t) sym.push_back({0, t, rng.normal(10, 2), {10.0, 4.0, true}, {10.0, 4.0, true}});
  auto post = brute_force_weight_posterior(sym);
  REQUIRE(post.grid.size() == 2000);
  for (std::size_t k = 0; k < 1000; ++k) CHECK(post.prob[k] == doctest::Approx(post.prob[1999 - k]).epsilon(1e-10));
  CHECK(post.mean() == doctest::Approx(0.5));

  std::vector<EnsembleObservation> sep;
  for (int t = 0; t < 20; ++t) {
    const double y = rng.normal(10, 2);
    sep.push_back({0, t, y, {y, 0.01, true}, {10.0, 400.0, true}});
  }
  post = brute_force_weight_posterior(sep);
  CHECK(post.mass_above(0.8) > 0.95);
  double total = 0.0;
  for (double p : post.prob) total += p;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("brute-force mixture cdf and grid quantile") {
  const MixtureDistribution m{0.4, 0.0, 1.0, 6.0, 4.0};
  CHECK(brute_force_mixture_cdf(m, -1e3) == doctest::Approx(0.0));
  CHECK(brute_force_mixture_cdf(m, 1e3) == doctest::Approx(1.0));
  CHECK(brute_force_mixture_cdf(m, m.quantile(0.5)) == doctest::Approx(0.5).epsilon(1e-10));
  Rng rng(327);
  for (int i = 0; i < 50; ++i) {
    const MixtureDistribution r{rng.uniform(), rng.normal(10, 5), 0.5 + 5 * rng.uniform(), rng.normal(10, 5),
                                0.5 + 5 * rng.uniform()};
    for (double p : {0.025, 0.5, 0.975}) {
      const double g = grid_mixture_quantile(r, p);
      CHECK(std::abs(brute_force_mixture_cdf(r, g) - p) < 1e-8);
      CHECK(std::abs(g - r.quantile(p)) / r.sd() < 1e-6);
    }
  }
}
