#include <doctest.h>

#include <cmath>

#include "pmfuse/error.hpp"
#include "pmfuse/geo.hpp"
#include "pmfuse/random.hpp"

using namespace pmfuse;

namespace {

GridSpec grid_12km() { return GridSpec{0.0, 0.0, 12.0, 10, 10, Source::Ctm}; }

std::vector<Location> random_locations(int n, double extent, Rng& rng) {
  std::vector<Location> out;
  for (int i = 0; i < n; ++i) out.push_back({"p" + std::to_string(i), extent * rng.uniform(), extent * rng.uniform()});
  return out;
}

}  // namespace

TEST_CASE("link_point_to_cell examples") {
  const auto g = grid_12km();
  CHECK(link_point_to_cell(6.0, 6.0, g) == CellIndex{0, 0});
  CHECK(link_point_to_cell(12.0, 0.0, g) == CellIndex{0, 1});
  CHECK_THROWS_AS(link_point_to_cell(-1.0, 5.0, g), OutOfDomain);
  CHECK_THROWS_AS(link_point_to_cell(5.0, 120.0, g), OutOfDomain);
  CHECK(link_point_to_cell(119.999, 119.999, g) == CellIndex{9, 9});
}

TEST_CASE("link_point_to_cell agrees with floor over random grids") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    GridSpec g{rng.normal(0, 50), rng.normal(0, 50), 0.5 + 10 * rng.uniform(), 1 + int(20 * rng.uniform()),
               1 + int(20 * rng.uniform()), Source::Sat};
    for (int k = 0; k < 20; ++k) {
      const double x = g.origin_x + g.n_cols * g.cell_size * rng.uniform();
      const double y = g.origin_y + g.n_rows * g.cell_size * rng.uniform();
      const auto c = link_point_to_cell(x, y, g);
      CHECK(c.col == int(std::floor((x - g.origin_x) / g.cell_size)));
      CHECK(c.row == int(std::floor((y - g.origin_y) / g.cell_size)));
      const auto again = link_point_to_cell(g.center_x(c.col), g.center_y(c.row), g);
      CHECK(again == c);
    }
  }
}

TEST_CASE("distance_matrix examples") {
  std::vector<Location> one{{"a", 3.0, 4.0}};
  const auto d1 = distance_matrix(one);
  CHECK(d1.rows() == 1);
  CHECK(d1(0, 0) == 0.0);

  std::vector<Location> two{{"a", 0.0, 0.0}, {"b", 3.0, 4.0}};
  const auto d2 = distance_matrix(two);
  CHECK(d2(0, 1) == doctest::Approx(5.0));
  CHECK(d2(1, 0) == doctest::Approx(5.0));
}

TEST_CASE("distance_matrix matches a scalar loop and is symmetric") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto locs = random_locations(10, 500.0, rng);
    const auto d = distance_matrix(locs);
    for (int i = 0; i < 10; ++i) {
      CHECK(d(i, i) == 0.0);
      for (int j = 0; j < 10; ++j) {
        const double dx = locs[i].x - locs[j].x, dy = locs[i].y - locs[j].y;
        CHECK(d(i, j) == doctest::Approx(std::sqrt(dx * dx + dy * dy)).epsilon(1e-14));
        CHECK(d(i, j) == d(j, i));
      }
    }
  }
}

TEST_CASE("cross_distances and diameter") {
  std::vector<Location> a{{"a", 0, 0}, {"b", 6, 8}};
  std::vector<Location> b{{"c", 0, 3}};
  const auto d = cross_distances(a, b);
  CHECK(d.rows() == 2);
  CHECK(d.cols() == 1);
  CHECK(d(0, 0) == doctest::Approx(3.0));
  CHECK(d(1, 0) == doctest::Approx(std::sqrt(36.0 + 25.0)));
  CHECK(domain_diameter(a) == doctest::Approx(10.0));
  CHECK(domain_diameter(b) == 0.0);
}

TEST_CASE("cell_centers are row-major with ids") {
  GridSpec g{10.0, 20.0, 2.0, 2, 3, Source::Sat};
  const auto c = cell_centers(g);
  REQUIRE(c.size() == 6);
  CHECK(c[0].id == "r0c0");
  CHECK(c[0].x == doctest::Approx(11.0));
  CHECK(c[0].y == doctest::Approx(21.0));
  CHECK(c[4].id == "r1c1");
  CHECK(c[4].x == doctest::Approx(13.0));
  CHECK(c[4].y == doctest::Approx(23.0));
}

TEST_CASE("validation rejects bad input") {
  GridSpec bad{0, 0, 0.0, 10, 10, Source::Ctm};
  CHECK_THROWS(bad.validate());
  std::vector<Location> dup{{"a", 0, 0}, {"a", 1, 1}};
  CHECK_THROWS_AS(validate_locations(dup), DomainError);
  std::vector<Location> nan{{"a", std::nan(""), 0}};
  CHECK_THROWS_AS(validate_locations(nan), DomainError);
  CHECK(parse_source("ctm") == Source::Ctm);
  CHECK(parse_source("sat") == Source::Sat);
  CHECK_THROWS(parse_source("aod"));
}
