#include "pmfuse/geo.hpp"

#include <cmath>
#include <unordered_set>

#include "pmfuse/error.hpp"

namespace pmfuse {

void validate_locations(std::span<const Location> locations) {
  std::unordered_set<std::string_view> seen;
  for (const auto& loc : locations) {
    if (!std::isfinite(loc.x) || !std::isfinite(loc.y)) {
      throw DomainError("location '" + loc.id + "' has non-finite coordinates");
    }
    if (!seen.insert(loc.id).second) {
      throw DomainError("duplicate location id '" + loc.id + "'");
    }
  }
}

std::string_view to_string(Source source) { return source == Source::Ctm ? "ctm" : "sat"; }

Source parse_source(std::string_view text) {
  if (text == "ctm" || text == "CTM" || text == "1") return Source::Ctm;
  if (text == "sat" || text == "SAT" || text == "2") return Source::Sat;
  throw DomainError("unknown source '" + std::string(text) + "'");
}

void GridSpec::validate() const {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw DomainError("grid cell_size must be positive");
  }
  if (n_rows < 1 || n_cols < 1) throw DomainError("grid must have at least one row and column");
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) {
    throw DomainError("grid origin must be finite");
  }
}

CellIndex link_point_to_cell(double x, double y, const GridSpec& grid) {
  grid.validate();
  const double col = std::floor((x - grid.origin_x) / grid.cell_size);
  const double row = std::floor((y - grid.origin_y) / grid.cell_size);
  if (!(col >= 0.0 && col < grid.n_cols && row >= 0.0 && row < grid.n_rows)) {
    throw OutOfDomain("point (" + std::to_string(x) + ", " + std::to_string(y) +
                      ") lies outside the " + std::string(to_string(grid.source)) + " grid");
  }
  return {static_cast<int>(row), static_cast<int>(col)};
}

GridLink::GridLink(std::span<const Location> sites, const GridSpec& ctm, const GridSpec& sat) {
  ctm_.reserve(sites.size());
  sat_.reserve(sites.size());
  for (const auto& site : sites) {
    try {
      ctm_.push_back(link_point_to_cell(site, ctm));
      sat_.push_back(link_point_to_cell(site, sat));
    } catch (const OutOfDomain& e) {
      throw OutOfDomain("monitor '" + site.id + "': " + e.what());
    }
  }
}

Eigen::MatrixXd distance_matrix(std::span<const Location> locations) {
  const auto n = static_cast<Eigen::Index>(locations.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      const double dist = std::hypot(locations[i].x - locations[j].x, locations[i].y - locations[j].y);
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return d;
}

Eigen::MatrixXd cross_distances(std::span<const Location> from, std::span<const Location> to) {
  Eigen::MatrixXd d(static_cast<Eigen::Index>(from.size()), static_cast<Eigen::Index>(to.size()));
  for (std::size_t j = 0; j < to.size(); ++j) {
    for (std::size_t i = 0; i < from.size(); ++i) {
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::hypot(from[i].x - to[j].x, from[i].y - to[j].y);
    }
  }
  return d;
}

double domain_diameter(std::span<const Location> locations) {
  double best = 0.0;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      best = std::max(best, std::hypot(locations[i].x - locations[j].x, locations[i].y - locations[j].y));
    }
  }
  return best;
}

std::vector<Location> cell_centers(const GridSpec& grid) {
  grid.validate();
  std::vector<Location> out;
  out.reserve(grid.cell_count());
  for (int r = 0; r < grid.n_rows; ++r) {
    for (int c = 0; c < grid.n_cols; ++c) {
      out.push_back({"r" + std::to_string(r) + "c" + std::to_string(c), grid.center_x(c), grid.center_y(r)});
    }
  }
  return out;
}

}  // namespace pmfuse
