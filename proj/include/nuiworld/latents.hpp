#pragma once

#include <Eigen/Core>

#include <string_view>

#include "nuiworld/forge.hpp"

namespace nuiworld {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Provenance : uint8_t { VaeEncoded = 0, NuiSceneSynthesized = 1, WorldModelGenerated = 2 };
std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

/// R x C grid of V x c vector sets. Each chunk is one row of `tokens`
/// (row-major over (row, col)), flattened to V*c channels.
struct SceneLatentGrid {
  forge::LayoutSpec layout;
  int V = 0;
  int c = 0;
  MatF tokens;
  Provenance provenance = Provenance::VaeEncoded;

  SceneLatentGrid() = default;
  SceneLatentGrid(forge::LayoutSpec l, int v, int ch, Provenance p = Provenance::VaeEncoded)
      : layout(l), V(v), c(ch), tokens(MatF::Zero(l.rows * l.cols, v * ch)), provenance(p) {}

  int token_count() const { return static_cast<int>(tokens.rows()); }
  int channels() const { return V * c; }
  MatF chunk(int row, int col) const;
  void set_chunk(int row, int col, const MatF& z);
  void validate() const;
};

}  // namespace nuiworld
