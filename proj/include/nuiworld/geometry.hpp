#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "nuiworld/common.hpp"

namespace nuiworld::geo {

using Points = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Binary voxel field, stored one byte per voxel in x-fastest order
/// (index = x + X * (y + Y * z)). Voxel (x, y, z) covers
/// [x*e, (x+1)*e) x [y*e, (y+1)*e) x [z*e, (z+1)*e) with e = voxel_edge.
struct OccupancyGrid {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<uint8_t> data;
  float voxel_edge = 1.0f;

  OccupancyGrid() = default;
  OccupancyGrid(int x, int y, int z, float edge);

  size_t size() const { return data.size(); }
  size_t index(int x, int y, int z) const {
    return static_cast<size_t>(x) + static_cast<size_t>(dims[0]) * (static_cast<size_t>(y) + static_cast<size_t>(dims[1]) * z);
  }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }
  bool at(int x, int y, int z) const { return data[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { data[index(x, y, z)] = v ? 1 : 0; }
  /// Occupancy of the voxel containing a point in the grid frame; points
  /// outside the grid are empty.
  bool occupied_at(float px, float py, float pz) const;
  size_t count_occupied() const;
  std::array<float, 3> extent() const {
    return {dims[0] * voxel_edge, dims[1] * voxel_edge, dims[2] * voxel_edge};
  }
  void validate() const;
  bool operator==(const OccupancyGrid&) const = default;
};

/// Surface samples with optional colors (all rows present or none).
struct ColoredPointCloud {
  Points points;
  Points colors;

  size_t size() const { return static_cast<size_t>(points.rows()); }
  bool has_colors() const { return colors.rows() > 0; }
  void validate() const;
};

struct TriMesh {
  Points vertices;
  Faces faces;
  Points vertex_colors;

  bool empty() const { return faces.rows() == 0; }
  bool has_colors() const { return vertex_colors.rows() > 0; }
  void validate() const;
  bool operator==(const TriMesh& o) const {
    return vertices == o.vertices && faces == o.faces && vertex_colors == o.vertex_colors;
  }
};

struct SceneChunkSample {
  std::array<int, 2> grid_coords{0, 0};  // (u, v): chunk index along x, z
  OccupancyGrid occupancy;
  ColoredPointCloud surface;             // chunk-local frame (origin at chunk min corner)
};

/// Chunk footprint always spans 2 world units.
inline float chunk_voxel_edge(int s) { return 2.0f / static_cast<float>(s); }

/// Pads X and Z with empty voxels on the max side up to multiples of s.
OccupancyGrid pad_to_multiple(const OccupancyGrid& grid, int s);

/// Splits a scene into s x Y x s chunks, row-major over (v, u).
std::vector<SceneChunkSample> partition_scene(const OccupancyGrid& grid, const ColoredPointCloud& surface, int s);

/// Iso-surface of the occupancy field sampled at voxel centers. Values
/// outside the grid count as empty, so the surface is always closed.
/// Vertices are in the grid frame.
TriMesh marching_cubes(const OccupancyGrid& grid, float iso = 0.5f);

ColoredPointCloud sample_surface_points(const TriMesh& mesh, size_t n, uint64_t seed);

TriMesh nearest_color_transfer(const TriMesh& mesh, const ColoredPointCloud& colored);

struct OccupancyQueries {
  Points coords;
  std::vector<uint8_t> labels;
};

OccupancyQueries sample_occupancy_queries(const OccupancyGrid& grid, size_t n_uniform, size_t n_near, float sigma,
                                          uint64_t seed);

/// Static 3-d tree for exact nearest-neighbor queries. Equal distances
/// resolve to the lowest point index.
class PointIndex {
 public:
  explicit PointIndex(const Points& points);
  struct Hit {
    int32_t index = -1;
    float dist2 = 0.0f;
  };
  Hit nearest(float x, float y, float z) const;
  size_t size() const { return static_cast<size_t>(points_.rows()); }

 private:
  struct Node {
    int32_t point = -1;
    int32_t left = -1;
    int32_t right = -1;
    int8_t axis = 0;
  };
  int32_t build(std::vector<int32_t>& idx, size_t lo, size_t hi, int depth);
  void search(int32_t node, const float* q, Hit& best) const;

  Points points_;
  std::vector<Node> nodes_;
  int32_t root_ = -1;
};

TriMesh translate(TriMesh mesh, float dx, float dy, float dz);
/// Concatenation; uncolored parts get white vertices when any part is colored.
TriMesh merge_meshes(const std::vector<TriMesh>& parts);

void write_obj(const TriMesh& mesh, const std::filesystem::path& path);
void write_ply(const TriMesh& mesh, const std::filesystem::path& path);

}  // namespace nuiworld::geo
