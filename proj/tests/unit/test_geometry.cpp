#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "shapeset/error.hpp"
#include "shapeset/geometry.hpp"

using namespace shapeset;

TEST_CASE("normalize_to_unit_cube: cube corners") {
  PointCloud c;
  for (int i = 0; i < 8; ++i) c.push_back({i & 1 ? 2.0 : -2.0, i & 2 ? 2.0 : -2.0, i & 4 ? 2.0 : -2.0});
  const auto [out, t] = normalize_to_unit_cube(c);
  CHECK(t.scale == 0.5);
  CHECK(t.offset == Point3{0, 0, 0});
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(out[i] == c[i] * 0.5);
}

TEST_CASE("normalize_to_unit_cube: already normalized is identity") {
  const PointCloud c{{-1, -1, -0.5}, {1, 0.5, 0.5}, {0, 1, 0}};
  const auto [out, t] = normalize_to_unit_cube(c);
  CHECK(t.scale == 1.0);
  CHECK(t.offset == Point3{0, 0, 0});
  CHECK(out == c);
}

TEST_CASE("normalize_to_unit_cube: hand-evaluated segment") {
  const PointCloud c{{0, 0, 0}, {4, 0, 0}};
  const auto [out, t] = normalize_to_unit_cube(c);
  CHECK(t.scale == 0.5);
  CHECK(t.offset == Point3{-2, 0, 0});
  CHECK(out[0] == Point3{-1, 0, 0});
  CHECK(out[1] == Point3{1, 0, 0});
}

TEST_CASE("normalize_to_unit_cube: degenerate and round trip") {
  CHECK_THROWS_AS(normalize_to_unit_cube(PointCloud{{1, 2, 3}, {1, 2, 3}}), NumericalError);
  CHECK_THROWS_AS(normalize_to_unit_cube(PointCloud{}), ValidationError);

  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-7.0, 3.0);
  PointCloud c;
  for (int i = 0; i < 500; ++i) c.push_back({u(gen), 0.1 * u(gen), 2.0 * u(gen)});
  const auto [out, t] = normalize_to_unit_cube(c);
  const auto box = bounding_box(out);
  bool touches = false;
  for (int k = 0; k < 3; ++k) {
    CHECK(box.lo[k] >= -1.0 - 1e-12);
    CHECK(box.hi[k] <= 1.0 + 1e-12);
    touches = touches || std::abs(box.hi[k] - 1.0) < 1e-12 || std::abs(box.lo[k] + 1.0) < 1e-12;
  }
  CHECK(touches);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Point3 back = t.restore(out[i]);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(back[k] - c[i][k]) < 1e-9);
  }
}

TEST_CASE("nearest_neighbor: spec examples") {
  const PointCloud target{{1, 0, 0}, {0, 2, 0}};
  const auto r = nearest_neighbor({0, 0, 0}, target);
  CHECK(r.index == 0);
  CHECK(r.squared_distance == 1.0);
  CHECK(nearest_neighbor({0, 2, 0}, target).index == 1);
  CHECK(nearest_neighbor({0, 2, 0}, target).squared_distance == 0.0);
  CHECK(nearest_neighbor({0, 0, 0}, PointCloud{{1, 0, 0}, {-1, 0, 0}}).index == 0);
  CHECK_THROWS_AS(nearest_neighbor({0, 0, 0}, PointCloud{}), ValidationError);
}

TEST_CASE("nearest_neighbor agrees with exhaustive scan on 1000 queries") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud target;
  for (int i = 0; i < 700; ++i) target.push_back({u(gen), u(gen), u(gen)});
  // Exact duplicates exercise the tie rule inside the tree.
  for (int i = 0; i < 50; ++i) target.push_back(target[static_cast<std::size_t>(i * 7)]);
  const KdTree tree(target);
  for (int i = 0; i < 1000; ++i) {
    const Point3 q = i % 10 == 0 ? target[static_cast<std::size_t>(i % 700)] : Point3{u(gen), u(gen), u(gen)};
    const auto [idx, d2] = oracle::nearest(q, target);
    const auto a = nearest_neighbor(q, target);
    const auto b = tree.nearest(q);
    CHECK(a.index == idx);
    CHECK(b.index == idx);
    CHECK(a.squared_distance == d2);
    CHECK(nearest_neighbor_scan(q, target).index == idx);
  }
}

TEST_CASE("kd tree tie rule on a lattice") {
  PointCloud grid;
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; ++z) grid.push_back({double(x), double(y), double(z)});
  const KdTree tree(grid);
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> u(0, 13);
  for (int i = 0; i < 500; ++i) {
    // Half-integer queries sit equidistant from several lattice points.
    const Point3 q{u(gen) * 0.5, u(gen) * 0.5, u(gen) * 0.5};
    CHECK(tree.nearest(q).index == oracle::nearest(q, grid).first);
  }
}
