#include "nuiworld/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "mc_tables.hpp"

namespace nuiworld::geo {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

OccupancyGrid::OccupancyGrid(int x, int y, int z, float edge) : dims{x, y, z}, voxel_edge(edge) {
  require(x > 0 && y > 0 && z > 0, ErrorKind::InvalidArgument, "occupancy grid dims must be positive");
  require(edge > 0.0f, ErrorKind::InvalidArgument, "voxel_edge must be positive");
  data.assign(static_cast<size_t>(x) * y * z, 0);
}

bool OccupancyGrid::occupied_at(float px, float py, float pz) const {
  const int x = static_cast<int>(std::floor(px / voxel_edge));
  const int y = static_cast<int>(std::floor(py / voxel_edge));
  const int z = static_cast<int>(std::floor(pz / voxel_edge));
  return in_bounds(x, y, z) && at(x, y, z);
}

size_t OccupancyGrid::count_occupied() const {
  return static_cast<size_t>(std::count_if(data.begin(), data.end(), [](uint8_t v) { return v != 0; }));
}

void OccupancyGrid::validate() const {
  require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, ErrorKind::InvalidArgument, "occupancy grid dims must be positive");
  require(data.size() == static_cast<size_t>(dims[0]) * dims[1] * dims[2], ErrorKind::InvalidArgument,
          "occupancy data length must equal X*Y*Z");
  require(voxel_edge > 0.0f, ErrorKind::InvalidArgument, "voxel_edge must be positive");
}

void ColoredPointCloud::validate() const {
  require(!has_colors() || colors.rows() == points.rows(), ErrorKind::InvalidArgument,
          "point and color row counts differ");
  require(points.allFinite(), ErrorKind::InvalidArgument, "non-finite point coordinates");
}

void TriMesh::validate() const {
  const auto m = vertices.rows();
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    require(a >= 0 && b >= 0 && c >= 0 && a < m && b < m && c < m, ErrorKind::InvalidArgument,
            "face index out of range");
    require(a != b && b != c && a != c, ErrorKind::InvalidArgument, "degenerate face");
  }
  require(!has_colors() || vertex_colors.rows() == m, ErrorKind::InvalidArgument, "vertex color count mismatch");
}

OccupancyGrid pad_to_multiple(const OccupancyGrid& grid, int s) {
  require(s > 0, ErrorKind::InvalidArgument, "chunk size must be positive");
  const int px = (grid.dims[0] + s - 1) / s * s;
  const int pz = (grid.dims[2] + s - 1) / s * s;
  if (px == grid.dims[0] && pz == grid.dims[2]) return grid;
  OccupancyGrid out(px, grid.dims[1], pz, grid.voxel_edge);
  for (int z = 0; z < grid.dims[2]; ++z)
    for (int y = 0; y < grid.dims[1]; ++y)
      for (int x = 0; x < grid.dims[0]; ++x) out.data[out.index(x, y, z)] = grid.data[grid.index(x, y, z)];
  return out;
}

std::vector<SceneChunkSample> partition_scene(const OccupancyGrid& grid, const ColoredPointCloud& surface, int s) {
  grid.validate();
  surface.validate();
  require(s >= 4, ErrorKind::InvalidArgument, "chunk size must be at least 4");
  require(s <= grid.dims[0] && s <= grid.dims[2], ErrorKind::InvalidArgument, "chunk size exceeds scene extent");

  const OccupancyGrid padded = pad_to_multiple(grid, s);
  const int nu = padded.dims[0] / s;
  const int nv = padded.dims[2] / s;
  const int ny = padded.dims[1];
  const float chunk_len = static_cast<float>(s) * padded.voxel_edge;

  std::vector<SceneChunkSample> chunks(static_cast<size_t>(nu) * nv);
  for (int v = 0; v < nv; ++v) {
    for (int u = 0; u < nu; ++u) {
      auto& c = chunks[static_cast<size_t>(v) * nu + u];
      c.grid_coords = {u, v};
      c.occupancy = OccupancyGrid(s, ny, s, padded.voxel_edge);
      for (int z = 0; z < s; ++z)
        for (int y = 0; y < ny; ++y)
          for (int x = 0; x < s; ++x)
            c.occupancy.data[c.occupancy.index(x, y, z)] = padded.data[padded.index(u * s + x, y, v * s + z)];
    }
  }

  // Assign each point to exactly one chunk; points on the far scene face go to the last chunk.
  const auto n = static_cast<Eigen::Index>(surface.size());
  std::vector<int> owner(static_cast<size_t>(n));
  std::vector<Eigen::Index> counts(chunks.size(), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int u = std::clamp(static_cast<int>(std::floor(surface.points(i, 0) / chunk_len)), 0, nu - 1);
    const int v = std::clamp(static_cast<int>(std::floor(surface.points(i, 2) / chunk_len)), 0, nv - 1);
    owner[static_cast<size_t>(i)] = v * nu + u;
    ++counts[static_cast<size_t>(v * nu + u)];
  }
  for (size_t k = 0; k < chunks.size(); ++k) {
    chunks[k].surface.points.resize(counts[k], 3);
    if (surface.has_colors()) chunks[k].surface.colors.resize(counts[k], 3);
  }
  std::vector<Eigen::Index> fill(chunks.size(), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(owner[static_cast<size_t>(i)]);
    auto& c = chunks[k];
    const Eigen::Index row = fill[k]++;
    c.surface.points(row, 0) = surface.points(i, 0) - static_cast<float>(c.grid_coords[0]) * chunk_len;
    c.surface.points(row, 1) = surface.points(i, 1);
    c.surface.points(row, 2) = surface.points(i, 2) - static_cast<float>(c.grid_coords[1]) * chunk_len;
    if (surface.has_colors()) c.surface.colors.row(row) = surface.colors.row(i);
  }
  return chunks;
}

namespace {

// (start corner, axis) of each cube edge in the table layout.
constexpr std::array<std::array<int, 4>, 12> kEdgeLattice = {{
    {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
    {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
    {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2},
}};
constexpr std::array<std::array<int, 3>, 8> kCorner = {{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};

}  // namespace

TriMesh marching_cubes(const OccupancyGrid& grid, float iso) {
  grid.validate();
  require(iso > 0.0f && iso < 1.0f, ErrorKind::InvalidArgument, "iso must lie in (0, 1)");
  TriMesh mesh;
  const size_t occupied = grid.count_occupied();
  if (occupied == 0 || occupied == grid.size()) return mesh;

  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const float e = grid.voxel_edge;
  auto value = [&](int x, int y, int z) -> float { return grid.in_bounds(x, y, z) && grid.at(x, y, z) ? 1.0f : 0.0f; };

  // Lattice points run from -1 to dim (inclusive) so the surface closes at the grid border.
  const size_t sx = static_cast<size_t>(nx) + 2, sy = static_cast<size_t>(ny) + 2;
  auto lattice_key = [&](int x, int y, int z, int axis) {
    return ((static_cast<size_t>(x + 1) + sx * (static_cast<size_t>(y + 1) + sy * static_cast<size_t>(z + 1))) * 3) + axis;
  };
  std::vector<int32_t> edge_vertex(sx * sy * (static_cast<size_t>(nz) + 2) * 3, -1);
  std::vector<float> verts;
  std::vector<int32_t> faces;

  for (int z = -1; z < nz; ++z) {
    for (int y = -1; y < ny; ++y) {
      for (int x = -1; x < nx; ++x) {
        float vals[8];
        int cube = 0;
        for (int k = 0; k < 8; ++k) {
          vals[k] = value(x + kCorner[k][0], y + kCorner[k][1], z + kCorner[k][2]);
          if (vals[k] < iso) cube |= 1 << k;
        }
        if (detail::kEdgeTable[cube] == 0) continue;
        int32_t ids[12];
        for (int ed = 0; ed < 12; ++ed) {
          if (!(detail::kEdgeTable[cube] & (1 << ed))) continue;
          const auto& el = kEdgeLattice[static_cast<size_t>(ed)];
          const int lx = x + el[0], ly = y + el[1], lz = z + el[2], axis = el[3];
          const size_t key = lattice_key(lx, ly, lz, axis);
          if (edge_vertex[key] < 0) {
            const float a = value(lx, ly, lz);
            const float b = value(lx + (axis == 0), ly + (axis == 1), lz + (axis == 2));
            const float t = (iso - a) / (b - a);
            float p[3] = {(lx + 0.5f) * e, (ly + 0.5f) * e, (lz + 0.5f) * e};
            p[axis] += t * e;
            edge_vertex[key] = static_cast<int32_t>(verts.size() / 3);
            verts.insert(verts.end(), p, p + 3);
          }
          ids[ed] = edge_vertex[key];
        }
        for (const int* t = detail::kTriTable[cube]; *t != -1; t += 3) {
          // With occupied = inside, table winding is already outward-facing.
          faces.push_back(ids[t[0]]);
          faces.push_back(ids[t[1]]);
          faces.push_back(ids[t[2]]);
        }
      }
    }
  }
  mesh.vertices = Eigen::Map<Points>(verts.data(), static_cast<Eigen::Index>(verts.size() / 3), 3);
  mesh.faces = Eigen::Map<Faces>(faces.data(), static_cast<Eigen::Index>(faces.size() / 3), 3);
  return mesh;
}

ColoredPointCloud sample_surface_points(const TriMesh& mesh, size_t n, uint64_t seed) {
  require(!mesh.empty(), ErrorKind::EmptyInput, "cannot sample an empty mesh");
  require(n >= 1, ErrorKind::InvalidArgument, "sample count must be positive");
  const auto nf = mesh.faces.rows();
  std::vector<double> cdf(static_cast<size_t>(nf));
  double total = 0.0;
  for (Eigen::Index f = 0; f < nf; ++f) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0)).cast<double>().transpose();
    const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1)).cast<double>().transpose();
    const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2)).cast<double>().transpose();
    total += 0.5 * (b - a).cross(c - a).norm();
    cdf[static_cast<size_t>(f)] = total;
  }
  require(total > 0.0, ErrorKind::EmptyInput, "mesh has zero surface area");

  Rng rng(seed);
  ColoredPointCloud out;
  out.points.resize(static_cast<Eigen::Index>(n), 3);
  if (mesh.has_colors()) out.colors.resize(static_cast<Eigen::Index>(n), 3);
  for (size_t i = 0; i < n; ++i) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
    const auto f = static_cast<Eigen::Index>(std::min<ptrdiff_t>(it - cdf.begin(), nf - 1));
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const double w[3] = {1.0 - r1, r1 * (1.0 - r2), r1 * r2};
    const auto row = static_cast<Eigen::Index>(i);
    for (int d = 0; d < 3; ++d) {
      double p = 0.0, col = 0.0;
      for (int k = 0; k < 3; ++k) {
        p += w[k] * mesh.vertices(mesh.faces(f, k), d);
        if (mesh.has_colors()) col += w[k] * mesh.vertex_colors(mesh.faces(f, k), d);
      }
      out.points(row, d) = static_cast<float>(p);
      if (mesh.has_colors()) out.colors(row, d) = static_cast<float>(col);
    }
  }
  if (mesh.has_colors()) {
    for (size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      out.colors.row(row) = out.colors.row(row).cwiseMax(0.0f).cwiseMin(1.0f);
    }
  }
  return out;
}

TriMesh nearest_color_transfer(const TriMesh& mesh, const ColoredPointCloud& colored) {
  require(colored.size() > 0, ErrorKind::EmptyInput, "colored point cloud is empty");
  require(colored.has_colors(), ErrorKind::InvalidArgument, "point cloud carries no colors");
  TriMesh out = mesh;
  out.vertex_colors.resize(mesh.vertices.rows(), 3);
  const PointIndex index(colored.points);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    const auto hit = index.nearest(mesh.vertices(i, 0), mesh.vertices(i, 1), mesh.vertices(i, 2));
    out.vertex_colors.row(i) = colored.colors.row(hit.index);
  }
  return out;
}

OccupancyQueries sample_occupancy_queries(const OccupancyGrid& grid, size_t n_uniform, size_t n_near, float sigma,
                                          uint64_t seed) {
  grid.validate();
  require(sigma >= 0.0f, ErrorKind::InvalidArgument, "sigma must be non-negative");
  std::vector<uint32_t> occupied, empty;
  for (size_t i = 0; i < grid.size(); ++i) (grid.data[i] ? occupied : empty).push_back(static_cast<uint32_t>(i));
  require(!occupied.empty() && !empty.empty(), ErrorKind::DegenerateInput,
          "balanced occupancy sampling needs both occupied and empty voxels");

  OccupancyQueries q;
  q.coords.resize(static_cast<Eigen::Index>(n_uniform + n_near), 3);
  q.labels.resize(n_uniform + n_near);
  Rng rng(derive_seed(seed, 1));
  const int nx = grid.dims[0], ny = grid.dims[1];
  const float e = grid.voxel_edge;
  const size_t n_occ = n_uniform / 2;
  for (size_t i = 0; i < n_uniform; ++i) {
    const auto& pool = i < n_occ ? occupied : empty;
    const uint32_t vox = pool[rng.below(pool.size())];
    const int x = static_cast<int>(vox % static_cast<uint32_t>(nx));
    const int y = static_cast<int>((vox / static_cast<uint32_t>(nx)) % static_cast<uint32_t>(ny));
    const int z = static_cast<int>(vox / (static_cast<uint32_t>(nx) * static_cast<uint32_t>(ny)));
    const int cell[3] = {x, y, z};
    for (int d = 0; d < 3; ++d) {
      // Stay strictly inside the voxel so float rounding cannot move the point across a face.
      const double offset = 0.5 + (rng.uniform() - 0.5) * 0.998;
      q.coords(static_cast<Eigen::Index>(i), d) = static_cast<float>((cell[d] + offset) * e);
    }
  }
  if (n_near > 0) {
    const TriMesh mesh = marching_cubes(grid);
    const ColoredPointCloud surf = sample_surface_points(mesh, n_near, derive_seed(seed, 2));
    const auto ext = grid.extent();
    for (size_t i = 0; i < n_near; ++i) {
      const auto row = static_cast<Eigen::Index>(n_uniform + i);
      for (int d = 0; d < 3; ++d) {
        float p = surf.points(static_cast<Eigen::Index>(i), d) + static_cast<float>(rng.normal() * sigma);
        q.coords(row, d) = std::clamp(p, 0.0f, std::nextafter(ext[static_cast<size_t>(d)], 0.0f));
      }
    }
  }
  for (Eigen::Index i = 0; i < q.coords.rows(); ++i)
    q.labels[static_cast<size_t>(i)] = grid.occupied_at(q.coords(i, 0), q.coords(i, 1), q.coords(i, 2)) ? 1 : 0;
  return q;
}

PointIndex::PointIndex(const Points& points) : points_(points) {
  std::vector<int32_t> idx(static_cast<size_t>(points_.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(idx.size());
  if (!idx.empty()) root_ = build(idx, 0, idx.size(), 0);
}

int32_t PointIndex::build(std::vector<int32_t>& idx, size_t lo, size_t hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const size_t mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + static_cast<ptrdiff_t>(lo), idx.begin() + static_cast<ptrdiff_t>(mid),
                   idx.begin() + static_cast<ptrdiff_t>(hi), [&](int32_t a, int32_t b) {
                     const float va = points_(a, axis), vb = points_(b, axis);
                     return va < vb || (va == vb && a < b);
                   });
  const auto id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back({idx[mid], -1, -1, static_cast<int8_t>(axis)});
  const int32_t left = build(idx, lo, mid, depth + 1);
  const int32_t right = build(idx, mid + 1, hi, depth + 1);
  nodes_[static_cast<size_t>(id)].left = left;
  nodes_[static_cast<size_t>(id)].right = right;
  return id;
}

void PointIndex::search(int32_t node, const float* q, Hit& best) const {
  if (node < 0) return;
  const Node& nd = nodes_[static_cast<size_t>(node)];
  const float dx = points_(nd.point, 0) - q[0];
  const float dy = points_(nd.point, 1) - q[1];
  const float dz = points_(nd.point, 2) - q[2];
  const float d2 = dx * dx + dy * dy + dz * dz;
  if (best.index < 0 || d2 < best.dist2 || (d2 == best.dist2 && nd.point < best.index)) best = {nd.point, d2};
  const float diff = q[nd.axis] - points_(nd.point, nd.axis);
  const int32_t near_side = diff < 0 ? nd.left : nd.right;
  const int32_t far_side = diff < 0 ? nd.right : nd.left;
  search(near_side, q, best);
  if (diff * diff <= best.dist2) search(far_side, q, best);
}

PointIndex::Hit PointIndex::nearest(float x, float y, float z) const {
  require(root_ >= 0, ErrorKind::EmptyInput, "nearest-neighbor query on an empty index");
  const float q[3] = {x, y, z};
  Hit best;
  search(root_, q, best);
  return best;
}

TriMesh translate(TriMesh mesh, float dx, float dy, float dz) {
  if (mesh.vertices.rows() > 0) mesh.vertices.rowwise() += Eigen::RowVector3f(dx, dy, dz);
  return mesh;
}

TriMesh merge_meshes(const std::vector<TriMesh>& parts) {
  Eigen::Index nv = 0, nf = 0;
  bool colored = false;
  for (const auto& m : parts) {
    nv += m.vertices.rows();
    nf += m.faces.rows();
    colored |= m.has_colors();
  }
  TriMesh out;
  out.vertices.resize(nv, 3);
  out.faces.resize(nf, 3);
  if (colored) out.vertex_colors.setOnes(nv, 3);
  Eigen::Index v = 0, f = 0;
  for (const auto& m : parts) {
    if (m.vertices.rows() == 0) continue;
    out.vertices.middleRows(v, m.vertices.rows()) = m.vertices;
    if (m.has_colors()) out.vertex_colors.middleRows(v, m.vertices.rows()) = m.vertex_colors;
    if (m.faces.rows() > 0) out.faces.middleRows(f, m.faces.rows()) = m.faces.array() + static_cast<int32_t>(v);
    v += m.vertices.rows();
    f += m.faces.rows();
  }
  return out;
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::Persistence, "cannot open " + path.string());
  os.precision(7);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    os << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2);
    if (mesh.has_colors())
      os << ' ' << mesh.vertex_colors(i, 0) << ' ' << mesh.vertex_colors(i, 1) << ' ' << mesh.vertex_colors(i, 2);
    os << '\n';
  }
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
    os << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' ' << mesh.faces(f, 2) + 1 << '\n';
  require(static_cast<bool>(os), ErrorKind::Persistence, "write failed for " + path.string());
}

void write_ply(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::Persistence, "cannot open " + path.string());
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "element vertex " << mesh.vertices.rows() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  if (mesh.has_colors()) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "element face " << mesh.faces.rows() << "\n";
  os << "property list uchar int vertex_indices\nend_header\n";
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    os.write(reinterpret_cast<const char*>(&mesh.vertices(i, 0)), 3 * sizeof(float));
    if (mesh.has_colors()) {
      unsigned char rgb[3];
      for (int d = 0; d < 3; ++d)
        rgb[d] = static_cast<unsigned char>(std::lround(std::clamp(mesh.vertex_colors(i, d), 0.0f, 1.0f) * 255.0f));
      os.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
    const unsigned char three = 3;
    os.write(reinterpret_cast<const char*>(&three), 1);
    os.write(reinterpret_cast<const char*>(&mesh.faces(f, 0)), 3 * sizeof(int32_t));
  }
  require(static_cast<bool>(os), ErrorKind::Persistence, "write failed for " + path.string());
}

}  // namespace nuiworld::geo
