#include "nuiworld/latents.hpp"

namespace nuiworld {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::VaeEncoded: return "vae-encoded";
    case Provenance::NuiSceneSynthesized: return "nuiscene-synthesized";
    case Provenance::WorldModelGenerated: return "world-model-generated";
  }
  return "?";
}

Provenance provenance_from_string(std::string_view s) {
  for (auto p : {Provenance::VaeEncoded, Provenance::NuiSceneSynthesized, Provenance::WorldModelGenerated})
    if (to_string(p) == s) return p;
  fail(ErrorKind::InvalidArgument, "unknown provenance '" + std::string(s) + "'");
}

MatF SceneLatentGrid::chunk(int row, int col) const {
  require(row >= 0 && col >= 0 && row < layout.rows && col < layout.cols, ErrorKind::InvalidArgument,
          "chunk index out of range");
  return Eigen::Map<const MatF>(tokens.row(row * layout.cols + col).data(), V, c);
}

void SceneLatentGrid::set_chunk(int row, int col, const MatF& z) {
  require(row >= 0 && col >= 0 && row < layout.rows && col < layout.cols, ErrorKind::InvalidArgument,
          "chunk index out of range");
  require(z.rows() == V && z.cols() == c, ErrorKind::InvalidArgument, "vector set shape mismatch");
  tokens.row(row * layout.cols + col) = Eigen::Map<const Eigen::RowVectorXf>(z.data(), V * c);
}

void SceneLatentGrid::validate() const {
  require(layout.rows >= 1 && layout.cols >= 1, ErrorKind::InvalidArgument, "empty latent layout");
  require(tokens.rows() == layout.rows * layout.cols && tokens.cols() == V * c, ErrorKind::InvalidArgument,
          "latent grid must hold R*C tokens of V*c channels");
  require(tokens.allFinite(), ErrorKind::InvalidArgument, "non-finite latent values");
}

}  // namespace nuiworld
