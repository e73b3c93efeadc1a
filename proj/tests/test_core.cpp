#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rainrecon/core.hpp"
#include "rainrecon/errors.hpp"
#include "rainrecon/params.hpp"

using namespace rainrecon;

namespace {

const GridGeoref kTen(0.0, 0.0, 10.0, 10.0, 10, 10);

StationSet stations_at(const std::vector<std::pair<double, double>>& xy) {
  StationSet s;
  for (std::size_t i = 0; i < xy.size(); ++i) s.push_back({"S" + std::to_string(i), xy[i].first, xy[i].second});
  return s;
}

// Brute force: sort every other node by (distance, index), keep k, close symmetrically.
std::vector<std::vector<int>> brute_knn(const StationSet& s, int k) {
  const int n = static_cast<int>(s.size());
  std::vector<std::vector<int>> out(n);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> cand;
    for (int j = 0; j < n; ++j) {
      if (j != i) cand.push_back({std::hypot(s[i].x - s[j].x, s[i].y - s[j].y), j});
    }
    std::sort(cand.begin(), cand.end());
    for (int m = 0; m < k; ++m) {
      out[i].push_back(cand[m].second);
      out[cand[m].second].push_back(i);
    }
  }
  for (auto& l : out) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
  return out;
}

}  // namespace

TEST_CASE("grid_cell_of corner and edge cases") {
  CHECK(grid_cell_of(kTen, 0.5, 0.5) == CellIndex{0, 0});
  CHECK(grid_cell_of(kTen, 9.99, 9.99) == CellIndex{9, 9});
  CHECK(grid_cell_of(kTen, 5.0, 0.0) == CellIndex{0, 5});
  CHECK(grid_cell_of(kTen, 10.0, 10.0) == CellIndex{9, 9});
}

TEST_CASE("grid_cell_of names the offending axis") {
  try {
    grid_cell_of(kTen, 11.0, 5.0);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("x") != std::string::npos);
  }
  try {
    grid_cell_of(kTen, 5.0, -0.1);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("y") != std::string::npos);
  }
}

TEST_CASE("grid_cell_of inverts cell centres") {
  const GridGeoref g(-3.0, 2.0, 4.0, 7.0, 5, 7);
  for (int r = 0; r < g.height(); ++r) {
    for (int c = 0; c < g.width(); ++c) {
      CHECK(grid_cell_of(g, g.cell_center_x(c), g.cell_center_y(r)) == CellIndex{r, c});
    }
  }
}

TEST_CASE("knn_adjacency hand examples") {
  SUBCASE("collinear triple, k = 1") {
    const auto adj = knn_adjacency(stations_at({{0, 0}, {1, 0}, {2, 0}}), 1);
    CHECK(adj.neighbors[1] == std::vector<int>{0, 2});
    CHECK(adj.neighbors[0] == std::vector<int>{1});
    CHECK(adj.neighbors[2] == std::vector<int>{1});
  }
  SUBCASE("two stations") {
    const auto adj = knn_adjacency(stations_at({{0, 0}, {3, 4}}), 1);
    CHECK(adj.neighbors[0] == std::vector<int>{1});
    CHECK(adj.neighbors[1] == std::vector<int>{0});
  }
  SUBCASE("unit square corners, k = 2") {
    const auto adj = knn_adjacency(stations_at({{0, 0}, {1, 0}, {1, 1}, {0, 1}}), 2);
    CHECK(adj.neighbors[0] == std::vector<int>{1, 3});
    CHECK(adj.neighbors[1] == std::vector<int>{0, 2});
    CHECK(adj.neighbors[2] == std::vector<int>{1, 3});
    CHECK(adj.neighbors[3] == std::vector<int>{0, 2});
    CHECK_FALSE(adj.linked(0, 2));
  }
  SUBCASE("k >= N rejected") {
    CHECK_THROWS_AS(knn_adjacency(stations_at({{0, 0}, {1, 0}}), 2), DomainError);
  }
}

TEST_CASE("knn_adjacency matches brute force, is symmetric and loop-free") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<double, double>> xy(12);
    for (auto& p : xy) p = {u(rng), u(rng)};
    const auto s = stations_at(xy);
    const int k = 1 + trial % 5;
    const auto adj = knn_adjacency(s, k);
    CHECK(adj.neighbors == brute_knn(s, k));
    for (int i = 0; i < 12; ++i) {
      for (int j : adj.neighbors[i]) {
        CHECK(j != i);
        CHECK(adj.linked(j, i));
      }
    }
  }
}

TEST_CASE("knn_adjacency is equivariant under station reordering") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<std::pair<double, double>> xy(15);
  for (auto& p : xy) p = {u(rng), u(rng)};
  const auto base = knn_adjacency(stations_at(xy), 4);
  std::vector<int> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::pair<double, double>> shuffled(15);
  for (int i = 0; i < 15; ++i) shuffled[i] = xy[perm[i]];
  const auto moved = knn_adjacency(stations_at(shuffled), 4);
  for (int i = 0; i < 15; ++i) {
    for (int j = 0; j < 15; ++j) CHECK(moved.linked(i, j) == base.linked(perm[i], perm[j]));
  }
}

TEST_CASE("rain normalization") {
  const RainNormalizer n;
  CHECK(n.normalize(0.0) == 0.0);
  CHECK(n.normalize(std::exp(1.0) - 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : {0.0, 1.0, 50.0}) CHECK(std::abs(n.denormalize(n.normalize(v)) - v) <= 1e-9);
  CHECK_THROWS_AS(n.normalize(-0.1), DomainError);
  const RainNormalizer id(RainScaling::identity, 10.0);
  CHECK(std::abs(id.denormalize(id.normalize(7.5)) - 7.5) <= 1e-12);
}

TEST_CASE("station validation") {
  auto s = stations_at({{1, 1}, {2, 2}});
  CHECK_NOTHROW(validate_stations(s, kTen));
  s[1].id = "S0";
  CHECK_THROWS_AS(validate_stations(s, kTen), DomainError);
  CHECK_THROWS_AS(validate_stations(stations_at({{11, 1}}), kTen), DomainError);
}
