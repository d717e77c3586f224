#include "pmfuse/data.hpp"

#include <algorithm>
#include <set>

#include "pmfuse/error.hpp"

namespace pmfuse {

void ObservationTable::validate() const {
  validate_locations(sites);
  std::set<std::pair<std::size_t, int>> seen;
  for (const auto& r : records) {
    if (r.site >= sites.size()) throw DomainError("observation references an unknown site");
    const auto& id = sites[r.site].id;
    if (!std::isfinite(r.y)) throw DomainError("non-finite PM2.5 at site '" + id + "'");
    if (!std::isfinite(r.x_ctm)) throw DomainError("missing CTM value at site '" + id + "'");
    if (!seen.emplace(r.site, r.day).second) {
      throw DomainError("duplicate record for site '" + id + "' day " + std::to_string(r.day));
    }
  }
}

std::pair<int, int> ObservationTable::day_range() const {
  if (records.empty()) throw EmptyInput("observation table is empty");
  int lo = records.front().day;
  int hi = lo;
  for (const auto& r : records) {
    lo = std::min(lo, r.day);
    hi = std::max(hi, r.day);
  }
  return {lo, hi};
}

ObservationTable ObservationTable::subset(std::span<const std::size_t> indices) const {
  ObservationTable out;
  out.sites = sites;
  out.records.reserve(indices.size());
  for (auto i : indices) out.records.push_back(records.at(i));
  return out;
}

}  // namespace pmfuse
