#include <map>
#include <utility>

#include "doctest.h"
#include "nuiworld/geometry.hpp"
#include "test_support.hpp"

using namespace nuiworld;
using namespace nuiworld::geo;

namespace {

OccupancyGrid random_grid(int x, int y, int z, double p, uint64_t seed, bool keep_border_empty) {
  OccupancyGrid g(x, y, z, 0.125f);
  Rng rng(seed);
  for (int k = 0; k < z; ++k)
    for (int j = 0; j < y; ++j)
      for (int i = 0; i < x; ++i) {
        const bool border = i == 0 || j == 0 || k == 0 || i == x - 1 || j == y - 1 || k == z - 1;
        if (keep_border_empty && border) continue;
        g.set(i, j, k, rng.bernoulli(p));
      }
  return g;
}

ColoredPointCloud random_cloud(size_t n, float extent_x, float extent_y, float extent_z, uint64_t seed) {
  Rng rng(seed);
  ColoredPointCloud pc;
  pc.points.resize(static_cast<Eigen::Index>(n), 3);
  pc.colors.resize(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < pc.points.rows(); ++i) {
    pc.points(i, 0) = static_cast<float>(rng.uniform(0, extent_x));
    pc.points(i, 1) = static_cast<float>(rng.uniform(0, extent_y));
    pc.points(i, 2) = static_cast<float>(rng.uniform(0, extent_z));
    for (int d = 0; d < 3; ++d) pc.colors(i, d) = static_cast<float>(rng.uniform());
  }
  return pc;
}

}  // namespace

TEST_CASE("partition_scene tiles exactly divisible scenes") {
  OccupancyGrid g = random_grid(32, 16, 32, 0.3, 1, false);
  g.voxel_edge = chunk_voxel_edge(16);
  const auto pc = random_cloud(500, 4.0f, 2.0f, 4.0f, 2);
  const auto chunks = partition_scene(g, pc, 16);
  REQUIRE(chunks.size() == 4);
  size_t points = 0;
  for (const auto& c : chunks) {
    CHECK(c.occupancy.dims == std::array<int, 3>{16, 16, 16});
    points += c.surface.size();
    for (Eigen::Index i = 0; i < c.surface.points.rows(); ++i) {
      CHECK(c.surface.points(i, 0) >= 0.0f);
      CHECK(c.surface.points(i, 0) <= 2.0f);
      CHECK(c.surface.points(i, 2) >= 0.0f);
      CHECK(c.surface.points(i, 2) <= 2.0f);
    }
  }
  CHECK(points == 500);
}

TEST_CASE("partition_scene at paper chunk size") {
  OccupancyGrid g(120, 40, 120, chunk_voxel_edge(60));
  g.set(0, 0, 0, true);
  const auto chunks = partition_scene(g, ColoredPointCloud{}, 60);
  REQUIRE(chunks.size() == 4);
  for (const auto& c : chunks) CHECK(c.occupancy.dims == std::array<int, 3>{60, 40, 60});
}

TEST_CASE("partition_scene pads non-divisible scenes losslessly") {
  const OccupancyGrid g = random_grid(33, 16, 32, 0.4, 3, false);
  const auto chunks = partition_scene(g, ColoredPointCloud{}, 16);
  REQUIRE(chunks.size() == 6);
  // Reassemble and compare against the padded original.
  OccupancyGrid rebuilt(48, 16, 32, g.voxel_edge);
  for (const auto& c : chunks)
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          rebuilt.set(c.grid_coords[0] * 16 + x, y, c.grid_coords[1] * 16 + z, c.occupancy.at(x, y, z));
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 48; ++x) CHECK(rebuilt.at(x, y, z) == (x < 33 && g.at(x, y, z)));
}

TEST_CASE("partition_scene rejects oversized chunks") {
  const OccupancyGrid g(8, 4, 8, 0.25f);
  CHECK_THROWS_AS(partition_scene(g, ColoredPointCloud{}, 16), Error);
  CHECK_THROWS_AS(partition_scene(g, ColoredPointCloud{}, 2), Error);
}

TEST_CASE("marching_cubes on empty and full grids") {
  OccupancyGrid g(4, 4, 4, 0.5f);
  CHECK(marching_cubes(g).empty());
  std::fill(g.data.begin(), g.data.end(), 1);
  CHECK(marching_cubes(g).empty());
}

TEST_CASE("marching_cubes single voxel is a closed sphere-like surface") {
  OccupancyGrid g(5, 5, 5, 0.25f);
  g.set(2, 2, 2, true);
  const TriMesh m = marching_cubes(g);
  m.validate();
  CHECK(testing::euler_characteristic(m) == 2);
  CHECK(testing::signed_volume(m) > 0.0);
  CHECK(testing::boundary_edge_count(m) == 0);
}

TEST_CASE("marching_cubes 2x2x2 block volume") {
  OccupancyGrid g(6, 6, 6, 0.25f);
  for (int z = 2; z < 4; ++z)
    for (int y = 2; y < 4; ++y)
      for (int x = 2; x < 4; ++x) g.set(x, y, z, true);
  const TriMesh m = marching_cubes(g);
  const double expected = std::pow(2.0 * 0.25, 3);
  const double vol = testing::signed_volume(m);
  CHECK(vol > 0.7 * expected);
  CHECK(vol < 1.3 * expected);
  CHECK(testing::euler_characteristic(m) == 2);
}

TEST_CASE("marching_cubes is watertight and consistently oriented on random grids") {
  for (uint64_t seed = 0; seed < 40; ++seed) {
    const bool border_empty = seed % 2 == 0;
    const OccupancyGrid g = random_grid(7, 6, 8, 0.2 + 0.015 * static_cast<double>(seed), 100 + seed, border_empty);
    const TriMesh m = marching_cubes(g);
    if (m.empty()) continue;
    m.validate();
    CHECK(testing::boundary_edge_count(m) == 0);
    // Each directed edge appears once: orientation is consistent across faces.
    std::map<std::pair<int, int>, int> directed;
    for (Eigen::Index f = 0; f < m.faces.rows(); ++f)
      for (int k = 0; k < 3; ++k) ++directed[{m.faces(f, k), m.faces(f, (k + 1) % 3)}];
    for (const auto& [e, n] : directed) CHECK(n == 1);
    CHECK(testing::signed_volume(m) > 0.0);
  }
}

TEST_CASE("sample_surface_points is area uniform and deterministic") {
  TriMesh sq;
  sq.vertices.resize(4, 3);
  sq.vertices << 0, 0, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1;
  sq.faces.resize(2, 3);
  sq.faces << 0, 1, 2, 0, 2, 3;
  const auto pc = sample_surface_points(sq, 10000, 7);
  // Points below the diagonal x > z belong to face 0.
  size_t face0 = 0;
  for (Eigen::Index i = 0; i < pc.points.rows(); ++i) face0 += pc.points(i, 0) > pc.points(i, 2);
  CHECK(face0 > 4750);
  CHECK(face0 < 5250);
  const auto again = sample_surface_points(sq, 10000, 7);
  CHECK(pc.points == again.points);

  sq.vertex_colors.resize(4, 3);
  sq.vertex_colors.setZero();
  sq.vertex_colors.col(0).setOnes();
  const auto red = sample_surface_points(sq, 1000, 9);
  for (Eigen::Index i = 0; i < red.colors.rows(); ++i) {
    CHECK(red.colors(i, 0) == 1.0f);
    CHECK(red.colors(i, 1) == 0.0f);
    CHECK(red.colors(i, 2) == 0.0f);
  }
  CHECK_THROWS_AS(sample_surface_points(TriMesh{}, 10, 1), Error);
}

TEST_CASE("nearest_color_transfer examples") {
  TriMesh m;
  m.vertices.resize(3, 3);
  m.vertices << 1, 0, 0, 9, 0, 0, 5, 0, 0;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;

  ColoredPointCloud one;
  one.points.resize(1, 3);
  one.points << 3, 3, 3;
  one.colors.resize(1, 3);
  one.colors << 0.2f, 0.4f, 0.6f;
  const auto a = nearest_color_transfer(m, one);
  for (int i = 0; i < 3; ++i) CHECK(a.vertex_colors.row(i) == one.colors.row(0));

  ColoredPointCloud two;
  two.points.resize(2, 3);
  two.points << 0, 0, 0, 10, 0, 0;
  two.colors.resize(2, 3);
  two.colors << 1, 0, 0, 0, 0, 1;
  const auto b = nearest_color_transfer(m, two);
  CHECK(b.vertex_colors.row(0) == two.colors.row(0));
  CHECK(b.vertex_colors.row(1) == two.colors.row(1));
  CHECK(b.vertex_colors.row(2) == two.colors.row(0));  // x=5 is equidistant: lowest index wins

  ColoredPointCloud bare;
  bare.points = two.points;
  CHECK_THROWS_AS(nearest_color_transfer(m, bare), Error);
}

TEST_CASE("nearest_color_transfer agrees with brute force") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const size_t mcount = 1 + rng.below(200), ncount = 1 + rng.below(200);
    // Snap to a coarse lattice so exact ties actually occur.
    auto lattice = [&](size_t n) {
      ColoredPointCloud pc = random_cloud(n, 1, 1, 1, rng.next_u64());
      pc.points = (pc.points * 4.0f).array().round() / 4.0f;
      return pc;
    };
    const ColoredPointCloud verts = lattice(mcount);
    const ColoredPointCloud colored = lattice(ncount);
    TriMesh m;
    m.vertices = verts.points;
    const auto out = nearest_color_transfer(m, colored);
    for (Eigen::Index i = 0; i < m.vertices.rows(); ++i) {
      const auto nn = testing::brute_nearest(colored.points, m.vertices.row(i));
      CHECK(out.vertex_colors.row(i) == colored.colors.row(nn));
    }
  }
}

TEST_CASE("sample_occupancy_queries examples") {
  OccupancyGrid half(8, 8, 8, 0.25f);
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 8; ++x) half.set(x, y, z, true);
  const auto q = sample_occupancy_queries(half, 1000, 0, 0.0f, 5);
  CHECK(std::count(q.labels.begin(), q.labels.end(), 1) == 500);

  const auto q2 = sample_occupancy_queries(half, 100, 400, 0.1f, 5);
  const auto q3 = sample_occupancy_queries(half, 100, 400, 0.1f, 5);
  CHECK(q2.coords == q3.coords);
  CHECK(q2.labels == q3.labels);

  // Labels agree with an independent voxel lookup.
  for (Eigen::Index i = 0; i < 100; ++i) {
    const int x = static_cast<int>(q2.coords(i, 0) / 0.25f), y = static_cast<int>(q2.coords(i, 1) / 0.25f),
              z = static_cast<int>(q2.coords(i, 2) / 0.25f);
    CHECK(q2.labels[static_cast<size_t>(i)] == (half.at(x, y, z) ? 1 : 0));
  }

  // sigma = 0: labels are those of the voxel under each exact surface sample.
  const auto q0 = sample_occupancy_queries(half, 0, 200, 0.0f, 11);
  const auto surf = sample_surface_points(marching_cubes(half), 200, derive_seed(11, 2));
  for (Eigen::Index i = 0; i < 200; ++i) {
    const auto ext = half.extent();
    float p[3];
    for (int d = 0; d < 3; ++d) p[d] = std::min(surf.points(i, d), std::nextafter(ext[static_cast<size_t>(d)], 0.0f));
    CHECK(q0.labels[static_cast<size_t>(i)] == (half.occupied_at(p[0], p[1], p[2]) ? 1 : 0));
  }

  OccupancyGrid empty(4, 4, 4, 0.5f);
  CHECK_THROWS_AS(sample_occupancy_queries(empty, 10, 0, 0.1f, 1), Error);
}

TEST_CASE("PointIndex matches brute force") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto pc = random_cloud(300, 1, 2, 3, seed);
    const PointIndex index(pc.points);
    const auto queries = random_cloud(100, 1, 2, 3, seed + 1000);
    for (Eigen::Index i = 0; i < queries.points.rows(); ++i) {
      const auto hit = index.nearest(queries.points(i, 0), queries.points(i, 1), queries.points(i, 2));
      CHECK(hit.index == testing::brute_nearest(pc.points, queries.points.row(i)));
    }
  }
}
