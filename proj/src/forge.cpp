#include "nuiworld/forge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "nuiworld/formats.hpp"

namespace nuiworld::forge {

std::string_view element_name(Element e) {
  switch (e) {
    case Element::Terrain: return "terrain";
    case Element::Tower: return "tower";
    case Element::Tree: return "tree";
    case Element::Wall: return "wall";
    case Element::Road: return "road";
  }
  return "?";
}

Rgb ForgeConfig::color(PaletteRole role) const {
  return palette[static_cast<size_t>(role) % palette.size()];
}

void ForgeConfig::validate() const {
  require(chunk_size >= 8, ErrorKind::InvalidArgument, "forged chunks need chunk_size >= 8");
  require(!palette.empty(), ErrorKind::InvalidArgument, "palette must not be empty");
  for (double d : density) require(d >= 0.0 && d <= 1.0, ErrorKind::InvalidArgument, "densities must lie in [0, 1]");
  require(ground_thickness >= 1, ErrorKind::InvalidArgument, "ground thickness must be positive");
  require(height > ground_thickness, ErrorKind::InvalidArgument, "height too small to hold the ground layer");
  require(points_per_chunk >= 1, ErrorKind::InvalidArgument, "points_per_chunk must be positive");
}

ForgeConfig builtin_theme(const std::string& id) {
  ForgeConfig c;
  c.theme = id;
  auto set = [&](double terrain, double tower, double tree, double wall, double road) {
    c.density = {terrain, tower, tree, wall, road};
  };
  if (id == "medieval") {
    c.palette = {{0.36f, 0.55f, 0.25f}, {0.45f, 0.60f, 0.30f}, {0.62f, 0.60f, 0.56f}, {0.60f, 0.20f, 0.15f},
                 {0.40f, 0.26f, 0.13f}, {0.18f, 0.42f, 0.16f}, {0.50f, 0.48f, 0.44f}, {0.70f, 0.62f, 0.45f}};
    set(0.5, 0.35, 0.45, 0.3, 0.3);
  } else if (id == "desert") {
    c.palette = {{0.86f, 0.74f, 0.50f}, {0.80f, 0.66f, 0.42f}, {0.76f, 0.56f, 0.36f}, {0.90f, 0.86f, 0.78f},
                 {0.50f, 0.40f, 0.22f}, {0.35f, 0.55f, 0.25f}, {0.70f, 0.52f, 0.32f}, {0.55f, 0.45f, 0.35f}};
    set(0.8, 0.25, 0.15, 0.35, 0.2);
  } else if (id == "cyberpunk") {
    c.palette = {{0.15f, 0.15f, 0.20f}, {0.22f, 0.22f, 0.28f}, {0.30f, 0.30f, 0.45f}, {0.95f, 0.20f, 0.70f},
                 {0.20f, 0.80f, 0.90f}, {0.10f, 0.90f, 0.60f}, {0.40f, 0.40f, 0.50f}, {0.95f, 0.85f, 0.20f}};
    set(0.1, 0.6, 0.1, 0.2, 0.5);
  } else {
    fail(ErrorKind::InvalidArgument, "unknown built-in theme '" + id + "'");
  }
  return c;
}

std::vector<std::string> builtin_theme_ids() { return {"medieval", "desert", "cyberpunk"}; }

ForgeConfig load_theme(const std::filesystem::path& path, const std::string& id) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::Persistence, "cannot open theme file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidArgument, "malformed theme file " + path.string() + ": " + e.what());
  }
  require(doc.contains(id), ErrorKind::InvalidArgument, "theme '" + id + "' not found in " + path.string());
  const auto& t = doc.at(id);
  ForgeConfig c;
  c.theme = id;
  c.chunk_size = t.value("chunk_size", c.chunk_size);
  c.height = t.value("height", c.height);
  c.ground_thickness = t.value("ground_thickness", c.ground_thickness);
  c.points_per_chunk = t.value("points_per_chunk", c.points_per_chunk);
  for (const auto& rgb : t.at("palette")) c.palette.push_back({rgb.at(0).get<float>(), rgb.at(1).get<float>(), rgb.at(2).get<float>()});
  if (t.contains("density"))
    for (Element e : kAllElements) c.density_of(e) = t.at("density").value(std::string(element_name(e)), 0.0);
  c.validate();
  return c;
}

namespace {

class SceneBuilder {
 public:
  SceneBuilder(const ForgeConfig& cfg, int rows, int cols)
      : grid_(cols * cfg.chunk_size, cfg.height, rows * cfg.chunk_size, geo::chunk_voxel_edge(cfg.chunk_size)),
        colors_(grid_.size(), Rgb{1.0f, 1.0f, 1.0f}) {}

  void fill(int x, int y, int z, Rgb c) {
    if (!grid_.in_bounds(x, y, z)) return;
    const size_t i = grid_.index(x, y, z);
    grid_.data[i] = 1;
    colors_[i] = c;
  }
  void paint(int x, int y, int z, Rgb c) {
    if (grid_.in_bounds(x, y, z) && grid_.at(x, y, z)) colors_[grid_.index(x, y, z)] = c;
  }
  void box(int x0, int x1, int y0, int y1, int z0, int z1, Rgb c) {
    for (int z = z0; z < z1; ++z)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) fill(x, y, z, c);
  }
  geo::OccupancyGrid& grid() { return grid_; }
  std::vector<Rgb>& colors() { return colors_; }

 private:
  geo::OccupancyGrid grid_;
  std::vector<Rgb> colors_;
};

double lattice_value(uint64_t seed, int ix, int iz) {
  const uint64_t h = derive_seed(seed, static_cast<uint64_t>(static_cast<uint32_t>(ix)),
                                 static_cast<uint64_t>(static_cast<uint32_t>(iz)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Smooth value noise in [0, 1).
double value_noise(uint64_t seed, double x, double z) {
  const int ix = static_cast<int>(std::floor(x)), iz = static_cast<int>(std::floor(z));
  const double fx = x - ix, fz = z - iz;
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double sx = smooth(fx), sz = smooth(fz);
  const double a = lattice_value(seed, ix, iz), b = lattice_value(seed, ix + 1, iz);
  const double c = lattice_value(seed, ix, iz + 1), d = lattice_value(seed, ix + 1, iz + 1);
  return (a * (1 - sx) + b * sx) * (1 - sz) + (c * (1 - sx) + d * sx) * sz;
}

}  // namespace

ForgedScene forge_scene(const ForgeConfig& config, int rows, int cols, uint64_t seed) {
  config.validate();
  require(rows >= 1 && cols >= 1, ErrorKind::InvalidArgument, "rows and cols must be at least 1");
  const int s = config.chunk_size, ny = config.height, g = config.ground_thickness;
  const int nx = cols * s, nz = rows * s;
  SceneBuilder b(config, rows, cols);
  Rng rng(derive_seed(seed, 0xF0F0));

  b.box(0, nx, 0, g, 0, nz, config.color(PaletteRole::Ground));

  // Heightfield terrain on top of the ground slab.
  const int max_relief = std::max(1, (ny - g) / 4);
  const int relief = static_cast<int>(std::lround(config.density_of(Element::Terrain) * max_relief));
  std::vector<int> surface_top(static_cast<size_t>(nx) * nz, g);
  if (relief > 0) {
    const uint64_t noise_seed = derive_seed(seed, 0x7E77);
    const double freq = 2.0 / s;
    for (int z = 0; z < nz; ++z)
      for (int x = 0; x < nx; ++x) {
        const int h = static_cast<int>(value_noise(noise_seed, x * freq, z * freq) * (relief + 1));
        b.box(x, x + 1, g, g + h, z, z + 1, config.color(PaletteRole::Terrain));
        surface_top[static_cast<size_t>(z) * nx + x] = g + h;
      }
  }
  const int terrain_max = g + relief;

  // Roads: color-only strips across the chunk center lines.
  const int half = s / 2;
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u) {
      if (!rng.bernoulli(config.density_of(Element::Road))) continue;
      const bool along_x = rng.bernoulli(0.5);
      for (int t = 0; t < s; ++t)
        for (int w = -1; w < 1; ++w) {
          const int x = along_x ? u * s + t : u * s + half + w;
          const int z = along_x ? v * s + half + w : v * s + t;
          b.paint(x, surface_top[static_cast<size_t>(z) * nx + x] - 1, z, config.color(PaletteRole::Road));
        }
    }

  // Walls run along chunk center lines so neighbouring chunks can join them.
  const int wall_top = std::min(ny, terrain_max + 3);
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u) {
      if (!rng.bernoulli(config.density_of(Element::Wall))) continue;
      const bool along_x = rng.bernoulli(0.5);
      if (along_x)
        b.box(u * s, (u + 1) * s, g, wall_top, v * s + half, v * s + half + 1, config.color(PaletteRole::Wall));
      else
        b.box(u * s + half, u * s + half + 1, g, wall_top, v * s, (v + 1) * s, config.color(PaletteRole::Wall));
    }

  // Towers and trees occupy lattice slots at the chunk quarter points.
  const int q = s / 4;
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u)
      for (int slot = 0; slot < 4; ++slot) {
        const int cx = u * s + q + (slot % 2) * 2 * q;
        const int cz = v * s + q + (slot / 2) * 2 * q;
        if (rng.bernoulli(config.density_of(Element::Tower))) {
          const int lo = std::min(ny, terrain_max + 2);
          const int top = lo + static_cast<int>(rng.below(static_cast<uint64_t>(std::max(1, ny - lo + 1))));
          const int r = std::max(1, s / 16);
          b.box(cx - r, cx + r + 1, g, std::max(g, top - 1), cz - r, cz + r + 1, config.color(PaletteRole::Tower));
          b.box(cx - r, cx + r + 1, std::max(g, top - 1), top, cz - r, cz + r + 1, config.color(PaletteRole::Roof));
        } else if (rng.bernoulli(config.density_of(Element::Tree))) {
          const int base = surface_top[static_cast<size_t>(cz) * nx + cx];
          const int trunk_top = std::min(ny, base + 2 + static_cast<int>(rng.below(2)));
          b.box(cx, cx + 1, base, trunk_top, cz, cz + 1, config.color(PaletteRole::Trunk));
          b.box(cx - 1, cx + 2, trunk_top, std::min(ny, trunk_top + 2), cz - 1, cz + 2, config.color(PaletteRole::Foliage));
        }
      }

  ForgedScene out;
  out.rows = rows;
  out.cols = cols;
  out.grid = std::move(b.grid());
  const geo::TriMesh mesh = colored_surface_mesh(out.grid, b.colors());
  out.surface = geo::sample_surface_points(mesh, static_cast<size_t>(config.points_per_chunk) * rows * cols,
                                           derive_seed(seed, 0x5A5A));
  return out;
}

geo::TriMesh colored_surface_mesh(const geo::OccupancyGrid& grid, const std::vector<Rgb>& voxel_colors) {
  require(voxel_colors.size() == grid.size(), ErrorKind::InvalidArgument, "one color per voxel required");
  geo::TriMesh mesh = geo::marching_cubes(grid);
  mesh.vertex_colors.resize(mesh.vertices.rows(), 3);
  const float probe = grid.voxel_edge * 0.25f;
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    // A vertex sits on the face between one occupied and one empty voxel; probe both sides of each axis.
    Rgb c{1.0f, 1.0f, 1.0f};
    bool found = false;
    for (int axis = 0; axis < 3 && !found; ++axis)
      for (float sign : {-1.0f, 1.0f}) {
        float p[3] = {mesh.vertices(i, 0), mesh.vertices(i, 1), mesh.vertices(i, 2)};
        p[axis] += sign * probe;
        const int x = static_cast<int>(std::floor(p[0] / grid.voxel_edge));
        const int y = static_cast<int>(std::floor(p[1] / grid.voxel_edge));
        const int z = static_cast<int>(std::floor(p[2] / grid.voxel_edge));
        if (grid.in_bounds(x, y, z) && grid.at(x, y, z)) {
          c = voxel_colors[grid.index(x, y, z)];
          found = true;
          break;
        }
      }
    mesh.vertex_colors.row(i) << c[0], c[1], c[2];
  }
  return mesh;
}

LayoutSpec layout_from_area(double area, std::optional<double> ratio, int min_side) {
  if (!ratio) {
    const int side = static_cast<int>(std::lround(std::sqrt(area)));
    return {side, side};
  }
  const int r = std::max(min_side, static_cast<int>(std::lround(std::sqrt(area / *ratio))));
  const int c = std::max(r, static_cast<int>(std::lround(area / r)));
  return {r, c};
}

LayoutDraw draw_layout(const LayoutSampler& sp, uint64_t seed) {
  require(sp.min_side >= 1, ErrorKind::InvalidArgument, "min_side must be positive");
  require(sp.area_min >= static_cast<double>(sp.min_side) * sp.min_side, ErrorKind::InvalidArgument,
          "area_min cannot satisfy the minimum side length");
  require(sp.area_max >= sp.area_min, ErrorKind::InvalidArgument, "area_max < area_min");
  require(sp.ratio_range[0] >= 1.0 && sp.ratio_range[1] <= 3.0 && sp.ratio_range[0] <= sp.ratio_range[1],
          ErrorKind::InvalidArgument, "ratio range must lie within [1, 3]");
  require(sp.p_square >= 0.0 && sp.p_square <= 1.0, ErrorKind::InvalidArgument, "p_square must be a probability");
  Rng rng(seed);
  LayoutDraw d;
  d.area = std::exp(rng.uniform(std::log(sp.area_min), std::log(sp.area_max)));
  d.square_branch = rng.bernoulli(sp.p_square);
  if (d.square_branch) {
    d.layout = layout_from_area(d.area, std::nullopt, sp.min_side);
    return d;
  }
  d.ratio = std::exp(rng.uniform(std::log(sp.ratio_range[0]), std::log(sp.ratio_range[1])));
  d.layout = layout_from_area(d.area, d.ratio, sp.min_side);
  return d;
}

LayoutSpec sample_layout(const LayoutSampler& sp, uint64_t seed) { return draw_layout(sp, seed).layout; }

std::vector<BootstrapScene> build_bootstrap_dataset(const ForgeConfig& config, int count, LayoutSpec layout,
                                                    uint64_t seed, const std::optional<std::filesystem::path>& out_dir) {
  require(count >= 1, ErrorKind::InvalidArgument, "bootstrap dataset needs at least one scene");
  std::vector<BootstrapScene> scenes;
  scenes.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    BootstrapScene bs;
    bs.seed = seed + static_cast<uint64_t>(i);
    bs.scene = forge_scene(config, layout.rows, layout.cols, bs.seed);
    bs.chunks = geo::partition_scene(bs.scene.grid, bs.scene.surface, config.chunk_size);
    if (out_dir) {
      const auto stem = *out_dir / ("scene_" + std::to_string(i));
      io::write_chunks(stem.string() + ".nwchunk", bs.chunks);
      nlohmann::json manifest = {{"scene", i},
                                 {"theme", config.theme},
                                 {"seed", bs.seed},
                                 {"rows", layout.rows},
                                 {"cols", layout.cols},
                                 {"chunk_size", config.chunk_size},
                                 {"height", config.height},
                                 {"producer", kProducerVersion}};
      io::write_json(stem.string() + ".nwchunk.json", manifest);
    }
    scenes.push_back(std::move(bs));
  }
  return scenes;
}

}  // namespace nuiworld::forge
