#pragma once

#include <compare>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace pmfuse {

/// A monitor or prediction site in projected planar coordinates (km).
struct Location {
  std::string id;
  double x = 0.0;
  double y = 0.0;
};

/// Throws DomainError on duplicate ids or non-finite coordinates.
void validate_locations(std::span<const Location> locations);

enum class Source { Ctm, Sat };

std::string_view to_string(Source source);
Source parse_source(std::string_view text);

struct CellIndex {
  int row = 0;
  int col = 0;
  auto operator<=>(const CellIndex&) const = default;
};

/// Regular grid. Cell (row, col) covers the half-open box
/// [origin_x + col*cell_size, origin_x + (col+1)*cell_size) x
/// [origin_y + row*cell_size, origin_y + (row+1)*cell_size).
struct GridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 1.0;
  int n_rows = 1;
  int n_cols = 1;
  Source source = Source::Ctm;

  void validate() const;
  std::size_t cell_count() const { return static_cast<std::size_t>(n_rows) * n_cols; }
  std::size_t flat_index(CellIndex cell) const {
    return static_cast<std::size_t>(cell.row) * n_cols + cell.col;
  }
  double center_x(int col) const { return origin_x + (col + 0.5) * cell_size; }
  double center_y(int row) const { return origin_y + (row + 0.5) * cell_size; }
  bool operator==(const GridSpec&) const = default;
};

/// Returns the unique cell containing (x, y); throws OutOfDomain otherwise.
CellIndex link_point_to_cell(double x, double y, const GridSpec& grid);
inline CellIndex link_point_to_cell(const Location& loc, const GridSpec& grid) {
  return link_point_to_cell(loc.x, loc.y, grid);
}

/// Site id -> containing cell for both proxy grids.
class GridLink {
 public:
  GridLink(std::span<const Location> sites, const GridSpec& ctm, const GridSpec& sat);

  CellIndex ctm_cell(std::size_t site) const { return ctm_[site]; }
  CellIndex sat_cell(std::size_t site) const { return sat_[site]; }
  CellIndex cell(std::size_t site, Source source) const {
    return source == Source::Ctm ? ctm_[site] : sat_[site];
  }
  std::size_t size() const { return ctm_.size(); }

 private:
  std::vector<CellIndex> ctm_;
  std::vector<CellIndex> sat_;
};

/// Symmetric matrix of Euclidean distances between locations (km).
Eigen::MatrixXd distance_matrix(std::span<const Location> locations);
/// Rectangular |from| x |to| distance matrix.
Eigen::MatrixXd cross_distances(std::span<const Location> from, std::span<const Location> to);

/// Largest pairwise distance (0 for fewer than two points).
double domain_diameter(std::span<const Location> locations);

/// Centroids of every cell of a grid, row-major, with ids "r<row>c<col>".
std::vector<Location> cell_centers(const GridSpec& grid);

}  // namespace pmfuse
