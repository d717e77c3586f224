#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "pmfuse/downscaler.hpp"
#include "pmfuse/error.hpp"
#include "pmfuse/threads.hpp"

namespace pmfuse {

namespace {

constexpr std::size_t kChunk = 512;

/// Per-sample parameters laid out for the prediction inner loop.
struct SamplePack {
  std::size_t k = 0;
  std::size_t n_cov = 0;
  std::vector<double> intercept, slope, a11, a21, a22, sigma2_y;
  std::vector<double> gamma;   // k-major: gamma[k * n_cov + j]
  std::vector<double> alpha0;  // day-major: alpha0[t * K + k]
  std::vector<double> beta0;

  explicit SamplePack(const DownscalerFit& fit) : k(fit.samples.size()), n_cov(fit.n_cov) {
    intercept.resize(k);
    slope.resize(k);
    a11.resize(k);
    a21.resize(k);
    a22.resize(k);
    sigma2_y.resize(k);
    gamma.resize(k * n_cov);
    alpha0.resize(fit.n_days * k);
    beta0.resize(fit.n_days * k);
    for (std::size_t s = 0; s < k; ++s) {
      const auto& st = fit.samples[s];
      intercept[s] = st.fixed(0);
      slope[s] = st.fixed(1);
      a11[s] = st.a11;
      a21[s] = st.a21;
      a22[s] = st.a22;
      sigma2_y[s] = st.sigma2_y;
      for (std::size_t j = 0; j < n_cov; ++j) gamma[s * n_cov + j] = st.fixed(2 + static_cast<Eigen::Index>(j));
      for (std::size_t t = 0; t < fit.n_days; ++t) {
        alpha0[t * k + s] = st.alpha0(static_cast<Eigen::Index>(t));
        beta0[t * k + s] = st.beta0(static_cast<Eigen::Index>(t));
      }
    }
  }
};

/// Latent spatial effects at one location for every sample: conditional means
/// of alpha1, beta1 and conditional variances of v1, v2.
struct LocationEffects {
  std::vector<double> alpha1, beta1, var1, var2;
  void resize(std::size_t k) {
    alpha1.assign(k, 0.0);
    beta1.assign(k, 0.0);
    var1.assign(k, 0.0);
    var2.assign(k, 0.0);
  }
};

/// Cholesky factors of the latent GP correlation at training sites, per sample.
struct KrigingCache {
  std::vector<CholeskyFactor> factor1, factor2;
  std::vector<Eigen::VectorXd> white1, white2;  // L^{-1} v
};

PredictiveInput accumulate(const SamplePack& pack, const LocationEffects& eff, std::size_t day,
                           double x, std::span<const double> z_std) {
  const std::size_t K = pack.k;
  const double* a0 = &pack.alpha0[day * K];
  const double* b0 = &pack.beta0[day * K];
  double shift = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;
  double extra = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double m = pack.intercept[k] + a0[k] + eff.alpha1[k] + (pack.slope[k] + b0[k] + eff.beta1[k]) * x;
    for (std::size_t j = 0; j < pack.n_cov; ++j) m += pack.gamma[k * pack.n_cov + j] * z_std[j];
    if (k == 0) shift = m;
    const double d = m - shift;
    sum += d;
    sum_sq += d * d;
    const double c1 = pack.a11[k] + pack.a21[k] * x;
    const double c2 = pack.a22[k] * x;
    extra += pack.sigma2_y[k] + eff.var1[k] * c1 * c1 + eff.var2[k] * c2 * c2;
  }
  const double inv_k = 1.0 / static_cast<double>(K);
  const double mean_d = sum * inv_k;
  PredictiveInput out;
  out.mu = shift + mean_d;
  out.var = std::max(0.0, sum_sq * inv_k - mean_d * mean_d) + extra * inv_k;
  out.available = true;
  return out;
}

}  // namespace

std::vector<PredictiveInput> predict_at(const DownscalerFit& fit,
                                        std::span<const Location> locations,
                                        std::span<const PredictionTarget> targets, int threads) {
  if (fit.samples.empty()) throw EmptyInput("predict_at: fit has no samples");
  const std::size_t K = fit.samples.size();
  const std::size_t n_cov = fit.n_cov;
  std::vector<PredictiveInput> out(targets.size());

  std::unordered_map<std::string_view, std::size_t> training;
  for (std::size_t s = 0; s < fit.sites.size(); ++s) training.emplace(fit.sites[s].id, s);

  // Group targets by location.
  std::vector<std::vector<std::size_t>> by_location(locations.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    if (t.location >= locations.size()) throw DomainError("prediction target has a bad location index");
    if (t.day < fit.day_lo || t.day >= fit.day_lo + static_cast<int>(fit.n_days)) {
      throw OutOfDomain("prediction day " + std::to_string(t.day) + " outside the fitted range");
    }
    if (is_missing(t.x)) continue;  // unavailable source
    by_location[t.location].push_back(i);
  }

  std::vector<std::size_t> known;
  std::vector<std::size_t> unknown;
  std::vector<long> site_of(locations.size(), -1);
  for (std::size_t l = 0; l < locations.size(); ++l) {
    if (by_location[l].empty()) continue;
    if (auto it = training.find(locations[l].id); it != training.end()) {
      site_of[l] = static_cast<long>(it->second);
      known.push_back(l);
    } else {
      unknown.push_back(l);
    }
  }

  const SamplePack pack(fit);

  auto predict_location = [&](std::size_t l, const LocationEffects& eff) {
    std::vector<double> z_std(n_cov);
    for (auto i : by_location[l]) {
      const auto& t = targets[i];
      for (std::size_t j = 0; j < n_cov; ++j) {
        z_std[j] = (t.z[j] - fit.cov_mean(static_cast<Eigen::Index>(j))) / fit.cov_sd(static_cast<Eigen::Index>(j));
      }
      out[i] = accumulate(pack, eff, static_cast<std::size_t>(t.day - fit.day_lo), t.x, z_std);
    }
  };

  const std::size_t known_chunks = (known.size() + kChunk - 1) / kChunk;
  parallel_for(known_chunks, threads, [&](std::size_t c) {
    LocationEffects eff;
    eff.resize(K);
    for (std::size_t idx = c * kChunk; idx < std::min(known.size(), (c + 1) * kChunk); ++idx) {
      const std::size_t l = known[idx];
      const auto s = static_cast<Eigen::Index>(site_of[l]);
      for (std::size_t k = 0; k < K; ++k) {
        const auto& st = fit.samples[k];
        eff.alpha1[k] = st.alpha1(s);
        eff.beta1[k] = st.beta1(s);
      }
      predict_location(l, eff);
    }
  });

  if (unknown.empty()) return out;

  // Per-sample factors of the latent correlations at the training sites.
  const Eigen::MatrixXd site_dist = distance_matrix(fit.sites);
  KrigingCache cache;
  cache.factor1.resize(K);
  cache.factor2.resize(K);
  cache.white1.resize(K);
  cache.white2.resize(K);
  parallel_for(K, threads, [&](std::size_t k) {
    const auto& st = fit.samples[k];
    cache.factor1[k] = CholeskyFactor(exp_cov_matrix(site_dist, {1.0, st.theta1}));
    cache.factor2[k] = CholeskyFactor(exp_cov_matrix(site_dist, {1.0, st.theta2}));
    cache.white1[k] = cache.factor1[k].half_solve(st.v1);
    cache.white2[k] = cache.factor2[k].half_solve(st.v2);
  });

  const std::size_t chunks = (unknown.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(unknown.size(), begin + kChunk);
    std::vector<Location> chunk_locs;
    for (std::size_t idx = begin; idx < end; ++idx) chunk_locs.push_back(locations[unknown[idx]]);
    const auto n_loc = static_cast<Eigen::Index>(chunk_locs.size());
    const Eigen::MatrixXd dist = cross_distances(fit.sites, chunk_locs);
    std::vector<LocationEffects> effects(chunk_locs.size());
    for (auto& e : effects) e.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& st = fit.samples[k];
      const Eigen::MatrixXd w1 = cache.factor1[k].half_solve((-dist.array() / st.theta1).exp().matrix());
      const Eigen::MatrixXd w2 = cache.factor2[k].half_solve((-dist.array() / st.theta2).exp().matrix());
      const Eigen::VectorXd m1 = w1.transpose() * cache.white1[k];
      const Eigen::VectorXd m2 = w2.transpose() * cache.white2[k];
      for (Eigen::Index j = 0; j < n_loc; ++j) {
        auto& e = effects[static_cast<std::size_t>(j)];
        e.alpha1[k] = st.a11 * m1(j);
        e.beta1[k] = st.a21 * m1(j) + st.a22 * m2(j);
        e.var1[k] = std::max(0.0, 1.0 - w1.col(j).squaredNorm());
        e.var2[k] = std::max(0.0, 1.0 - w2.col(j).squaredNorm());
      }
    }
    for (std::size_t idx = begin; idx < end; ++idx) predict_location(unknown[idx], effects[idx - begin]);
  });
  return out;
}

std::vector<PredictiveInput> cv_predict(const ObservationTable& table, const FoldPlan& plan,
                                        Source source, const MCMCConfig& config, int threads) {
  if (plan.assignment.size() != table.records.size()) {
    throw DomainError("fold plan does not match the observation table");
  }
  const auto [lo, hi] = table.day_range();
  const DayRange days{lo, hi};
  std::vector<PredictiveInput> out(table.records.size());
  // Folds run concurrently; prediction inside a fold stays single-threaded.
  const int outer = std::min(threads, plan.n_folds);
  const int inner = outer > 1 ? 1 : threads;
  parallel_for(static_cast<std::size_t>(plan.n_folds), outer, [&](std::size_t f) {
    const auto fold = static_cast<int>(f);
    const auto held = plan.members(fold);
    if (held.empty()) return;
    const auto train = plan.complement(fold);
    MCMCConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, f);
    const DownscalerFit fit = fit_downscaler(table.subset(train), source, fold_config, days);
    const auto targets = record_targets(table, held, source);
    const auto preds = predict_at(fit, table.sites, targets, inner);
    for (std::size_t i = 0; i < held.size(); ++i) out[held[i]] = preds[i];
  });
  return out;
}

}  // namespace pmfuse
