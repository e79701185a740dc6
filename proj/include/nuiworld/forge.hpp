#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nuiworld/geometry.hpp"

namespace nuiworld::forge {

using Rgb = std::array<float, 3>;

enum class Element { Terrain, Tower, Tree, Wall, Road };
inline constexpr std::array<Element, 5> kAllElements = {Element::Terrain, Element::Tower, Element::Tree, Element::Wall,
                                                        Element::Road};
std::string_view element_name(Element e);

/// Palette slots, in order. Shorter palettes wrap around.
enum class PaletteRole { Ground, Terrain, Tower, Roof, Trunk, Foliage, Wall, Road };

struct ForgeConfig {
  std::string theme = "medieval";
  int chunk_size = 16;
  int height = 16;
  int ground_thickness = 2;
  std::vector<Rgb> palette;
  std::array<double, 5> density{};  // indexed by Element
  /// Surface samples drawn per chunk footprint for the scene point cloud.
  int points_per_chunk = 2048;

  double density_of(Element e) const { return density[static_cast<size_t>(e)]; }
  double& density_of(Element e) { return density[static_cast<size_t>(e)]; }
  Rgb color(PaletteRole role) const;
  void validate() const;
};

/// Three stand-in themes with distinct palettes and element mixes.
ForgeConfig builtin_theme(const std::string& id);
std::vector<std::string> builtin_theme_ids();
/// Reads a JSON theme file: {"<id>": {"palette": [[r,g,b],...], "density": {"tower": 0.5, ...},
/// "chunk_size": 16, "height": 16, "points_per_chunk": 2048}, ...}.
ForgeConfig load_theme(const std::filesystem::path& path, const std::string& id);

struct ForgedScene {
  geo::OccupancyGrid grid;
  geo::ColoredPointCloud surface;
  int rows = 0;  // chunk rows along z
  int cols = 0;  // chunk columns along x
};

ForgedScene forge_scene(const ForgeConfig& config, int rows, int cols, uint64_t seed);

/// Surface mesh of a voxel grid with each vertex colored by its adjacent
/// occupied voxel.
geo::TriMesh colored_surface_mesh(const geo::OccupancyGrid& grid, const std::vector<Rgb>& voxel_colors);

struct LayoutSpec {
  int rows = 0;  // R
  int cols = 0;  // C
  int area() const { return rows * cols; }
  bool operator==(const LayoutSpec&) const = default;
};

struct LayoutSampler {
  double area_min = 225.0;
  double area_max = 625.0;
  double p_square = 0.3;
  std::array<double, 2> ratio_range{1.0, 3.0};
  int min_side = 15;
};

/// Dimensions for a target area; square when ratio is absent.
LayoutSpec layout_from_area(double area, std::optional<double> ratio, int min_side = 15);

struct LayoutDraw {
  LayoutSpec layout;
  double area = 0.0;
  bool square_branch = false;
  double ratio = 1.0;  // unused on the square branch
};
LayoutDraw draw_layout(const LayoutSampler& sampler, uint64_t seed);
LayoutSpec sample_layout(const LayoutSampler& sampler, uint64_t seed);

struct BootstrapScene {
  ForgedScene scene;
  std::vector<geo::SceneChunkSample> chunks;
  uint64_t seed = 0;
};

/// M forged scenes with derived seeds seed + i. Writes one `.nwchunk` file
/// per scene plus a sidecar manifest when out_dir is given.
std::vector<BootstrapScene> build_bootstrap_dataset(const ForgeConfig& config, int count, LayoutSpec layout,
                                                    uint64_t seed,
                                                    const std::optional<std::filesystem::path>& out_dir = {});

}  // namespace nuiworld::forge
