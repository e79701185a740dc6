#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "nuiworld/forge.hpp"
#include "nuiworld/formats.hpp"

using namespace nuiworld;
using namespace nuiworld::forge;

namespace {

ForgeConfig bare_config() {
  ForgeConfig c = builtin_theme("medieval");
  c.density = {0, 0, 0, 0, 0};
  c.points_per_chunk = 256;
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nuiworld_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Kolmogorov-Smirnov statistic of samples against Uniform(0, 1).
double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  double d = 0.0;
  const double n = static_cast<double>(u.size());
  for (size_t i = 0; i < u.size(); ++i)
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - u[i], u[i] - static_cast<double>(i) / n});
  return d;
}

}  // namespace

TEST_CASE("forge with zero densities yields the ground slab only") {
  const ForgeConfig c = bare_config();
  const auto scene = forge_scene(c, 2, 3, 4);
  CHECK(scene.grid.dims == std::array<int, 3>{48, 16, 32});
  const double rate = static_cast<double>(scene.grid.count_occupied()) / static_cast<double>(scene.grid.size());
  CHECK(scene.grid.count_occupied() == static_cast<size_t>(48 * 32 * c.ground_thickness));
  CHECK(rate == doctest::Approx(static_cast<double>(c.ground_thickness) / c.height));
  CHECK(scene.surface.size() == 6u * 256u);
  CHECK(scene.surface.has_colors());
}

TEST_CASE("forge is deterministic per seed") {
  const ForgeConfig c = builtin_theme("desert");
  const auto a = forge_scene(c, 2, 2, 99);
  const auto b = forge_scene(c, 2, 2, 99);
  CHECK(a.grid == b.grid);
  CHECK(a.surface.points == b.surface.points);
  CHECK(a.surface.colors == b.surface.colors);
  const auto other = forge_scene(c, 2, 2, 100);
  CHECK_FALSE(other.grid == a.grid);
}

TEST_CASE("tower density 1 puts a tower in every chunk") {
  ForgeConfig c = bare_config();
  c.density_of(Element::Tower) = 1.0;
  c.density_of(Element::Terrain) = 0.5;
  const auto scene = forge_scene(c, 2, 2, 5);
  const int s = c.chunk_size;
  const int relief = static_cast<int>(std::lround(0.5 * std::max(1, (c.height - c.ground_thickness) / 4)));
  const int terrain_max = c.ground_thickness + relief;
  for (int v = 0; v < 2; ++v)
    for (int u = 0; u < 2; ++u) {
      int tall_columns = 0;
      for (int z = v * s; z < (v + 1) * s; ++z)
        for (int x = u * s; x < (u + 1) * s; ++x) {
          int top = 0;
          for (int y = 0; y < c.height; ++y)
            if (scene.grid.at(x, y, z)) top = y + 1;
          tall_columns += top > terrain_max;
        }
      CHECK(tall_columns > 0);
    }
}

TEST_CASE("every forged chunk contains ground") {
  for (const auto& id : builtin_theme_ids()) {
    const ForgeConfig c = builtin_theme(id);
    const auto scene = forge_scene(c, 2, 3, 17);
    const auto chunks = geo::partition_scene(scene.grid, scene.surface, c.chunk_size);
    for (const auto& ch : chunks)
      for (int z = 0; z < c.chunk_size; ++z)
        for (int x = 0; x < c.chunk_size; ++x) CHECK(ch.occupancy.at(x, 0, z));
  }
}

TEST_CASE("forge rejects invalid configs") {
  ForgeConfig c = bare_config();
  c.height = 2;
  CHECK_THROWS_AS(forge_scene(c, 1, 1, 0), Error);
  c = bare_config();
  c.density_of(Element::Tree) = 1.5;
  CHECK_THROWS_AS(forge_scene(c, 1, 1, 0), Error);
  c = bare_config();
  c.palette.clear();
  CHECK_THROWS_AS(forge_scene(c, 1, 1, 0), Error);
}

TEST_CASE("layout rounding rule") {
  CHECK(layout_from_area(225.0, std::nullopt) == LayoutSpec{15, 15});
  CHECK(layout_from_area(450.0, 2.0) == LayoutSpec{15, 30});
  CHECK(layout_from_area(300.0, 3.0) == LayoutSpec{15, 20});  // R clamps to 15
}

TEST_CASE("sample_layout statistics") {
  const LayoutSampler sp{225.0, 625.0, 0.3, {1.0, 3.0}, 15};
  const int n = 100000;
  int square = 0, violations = 0;
  std::vector<double> u;
  for (int i = 0; i < n; ++i) {
    const auto d = draw_layout(sp, static_cast<uint64_t>(i));
    square += d.square_branch;
    violations += !(d.layout.cols >= d.layout.rows && d.layout.rows >= 15);
    if (d.square_branch) CHECK(d.layout.rows == d.layout.cols);
    u.push_back((std::log(d.area) - std::log(sp.area_min)) / (std::log(sp.area_max) - std::log(sp.area_min)));
  }
  CHECK(violations == 0);
  const double frac = static_cast<double>(square) / n;
  CHECK(frac >= 0.29);
  CHECK(frac <= 0.31);
  CHECK(ks_uniform(u) < 0.02);
}

TEST_CASE("sample_layout rejects unsatisfiable bounds") {
  CHECK_THROWS_AS(sample_layout(LayoutSampler{200.0, 625.0, 0.3, {1.0, 3.0}, 15}, 0), Error);
  CHECK_THROWS_AS(sample_layout(LayoutSampler{300.0, 250.0, 0.3, {1.0, 3.0}, 15}, 0), Error);
  CHECK_THROWS_AS(sample_layout(LayoutSampler{225.0, 625.0, 0.3, {0.5, 3.0}, 15}, 0), Error);
  CHECK_NOTHROW(sample_layout(LayoutSampler{16.0, 64.0, 0.3, {1.0, 3.0}, 4}, 0));
}

TEST_CASE("ks helper sanity") {
  std::vector<double> grid;
  for (int i = 0; i < 1000; ++i) grid.push_back((i + 0.5) / 1000.0);
  CHECK(ks_uniform(grid) < 0.001);
}

TEST_CASE("bootstrap dataset persists deterministic scene records") {
  ForgeConfig c = builtin_theme("medieval");
  c.points_per_chunk = 128;
  const auto dir_a = scratch_dir("boot_a");
  const auto dir_b = scratch_dir("boot_b");
  const auto a = build_bootstrap_dataset(c, 2, {1, 2}, 7, dir_a);
  build_bootstrap_dataset(c, 2, {1, 2}, 7, dir_b);
  REQUIRE(a.size() == 2);
  CHECK(a[1].seed == 8);
  for (int i = 0; i < 2; ++i) {
    const auto name = "scene_" + std::to_string(i) + ".nwchunk";
    CHECK(io::read_bytes(dir_a / name) == io::read_bytes(dir_b / name));
    CHECK(io::read_bytes(dir_a / (name + ".json")) == io::read_bytes(dir_b / (name + ".json")));
    const auto chunks = io::read_chunks(dir_a / name);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[1].occupancy == a[static_cast<size_t>(i)].chunks[1].occupancy);
    CHECK(chunks[1].surface.points == a[static_cast<size_t>(i)].chunks[1].surface.points);
  }
  const auto single = build_bootstrap_dataset(c, 1, {1, 1}, 3);
  REQUIRE(single.size() == 1);
  CHECK(single[0].chunks.size() == 1);
}

TEST_CASE("latent block round trip") {
  SceneLatentGrid g({2, 3}, 2, 4, Provenance::NuiSceneSynthesized);
  Rng rng(1);
  for (Eigen::Index i = 0; i < g.tokens.size(); ++i) g.tokens.data()[i] = static_cast<float>(rng.normal());
  const auto dir = scratch_dir("lat");
  io::write_latents(dir / "a.nwlat", g);
  const auto back = io::read_latents(dir / "a.nwlat");
  CHECK(back.tokens == g.tokens);
  CHECK(back.layout == g.layout);
  CHECK(back.provenance == Provenance::NuiSceneSynthesized);
  const auto bytes = io::read_bytes(dir / "a.nwlat");
  CHECK(std::string(bytes.begin(), bytes.begin() + 10) == std::string("NUIW\0\1LATS", 10));
}
