#include "pmfuse/cv_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pmfuse/error.hpp"
#include "pmfuse/random.hpp"

namespace pmfuse {

namespace {
constexpr double kZ975 = 1.959963984540054;
}

std::vector<std::size_t> FoldPlan::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::complement(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) out.push_back(i);
  }
  return out;
}

FoldPlan make_folds(std::span<const RecordKey> records, FoldKind kind, int k, std::uint64_t seed) {
  FoldPlan plan;
  plan.kind = kind;
  plan.seed = seed;
  plan.assignment.assign(records.size(), -1);

  if (kind == FoldKind::SpatialLomo) {
    std::map<std::string, int> site_fold;
    for (const auto& r : records) site_fold.emplace(r.site_id, 0);
    if (site_fold.size() < 2) throw TooFewRecords("leave-one-monitor-out needs at least two sites");
    int next = 0;
    for (auto& [id, fold] : site_fold) fold = next++;
    for (std::size_t i = 0; i < records.size(); ++i) {
      plan.assignment[i] = site_fold.at(records[i].site_id);
    }
    plan.n_folds = next;
    return plan;
  }

  if (k < 2 || static_cast<std::size_t>(k) > records.size()) {
    throw TooFewRecords("k-fold needs 2 <= k <= number of records");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].site_id != records[b].site_id) return records[a].site_id < records[b].site_id;
    return records[a].day < records[b].day;
  });
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    plan.assignment[order[rank]] = static_cast<int>(rank % static_cast<std::size_t>(k));
  }
  plan.n_folds = k;
  return plan;
}

HeldOutPrediction HeldOutPrediction::from(double y, const MixtureDistribution& m) {
  return {y, m.mean(), m.sd(), m.quantile(0.025), m.quantile(0.975)};
}

HeldOutPrediction HeldOutPrediction::from(double y, const GaussianSummary& g) {
  const double sd = std::sqrt(g.variance);
  return {y, g.mean, sd, g.mean - kZ975 * sd, g.mean + kZ975 * sd};
}

EvalReport evaluate(std::span<const HeldOutPrediction> held_out) {
  if (held_out.empty()) throw EmptyInput("evaluate: no held-out predictions");
  const auto n = static_cast<double>(held_out.size());
  double sq = 0.0;
  double covered = 0.0;
  double sd_sum = 0.0;
  double my = 0.0;
  double mp = 0.0;
  for (const auto& h : held_out) {
    sq += (h.y - h.mean) * (h.y - h.mean);
    if (h.y >= h.lower && h.y <= h.upper) covered += 1.0;
    sd_sum += h.sd;
    my += h.y;
    mp += h.mean;
  }
  my /= n;
  mp /= n;
  double syy = 0.0;
  double spp = 0.0;
  double syp = 0.0;
  for (const auto& h : held_out) {
    syy += (h.y - my) * (h.y - my);
    spp += (h.mean - mp) * (h.mean - mp);
    syp += (h.y - my) * (h.mean - mp);
  }
  EvalReport report;
  report.n = held_out.size();
  report.rmse = std::sqrt(sq / n);
  report.coverage95 = 100.0 * covered / n;
  report.avg_posterior_sd = sd_sum / n;
  report.r2 = (syy > 0.0 && spp > 0.0) ? (syp * syp) / (syy * spp) : std::nan("");
  return report;
}

}  // namespace pmfuse
