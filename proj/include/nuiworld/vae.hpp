#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "nuiworld/geometry.hpp"
#include "nuiworld/latents.hpp"
#include "nuiworld/nn/layers.hpp"

namespace nuiworld::vae {

using nn::Mat;
using nn::Var;

struct VaeConfig {
  int V = 4;
  int c = 16;
  int chunk_size = 16;  // s
  int height = 16;      // Y, in voxels
  int width = 64;       // decoder hidden size h
  int heads = 4;
  int depth = 6;        // decoder self-attention layers
  int upsample_factor = 4;
  int upsample_layers = 3;  // trailing decoder layers that run on upsampled tokens
  int fourier_bands = 6;
  int n_pc = 1024;
  int n_occ = 1024;
  int n_col = 512;
  double lambda_color = 1.0;
  double lambda_height = 0.01;
  double lambda_kl = 1e-6;

  int tokens() const { return upsample_layers > 0 ? V * upsample_factor : V; }
  float voxel_edge() const { return geo::chunk_voxel_edge(chunk_size); }
  void validate() const;
  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

/// Point cloud input rows: x y z r g b in the chunk-local frame.
template <class T>
Mat<T> point_matrix(const geo::ColoredPointCloud& cloud);

/// Graph builders over a parameter store. Queries never interact, so
/// per-query outputs do not depend on which other queries share a batch.
template <class T>
class ChunkVae {
 public:
  ChunkVae(const VaeConfig& cfg, nn::ParameterStore<T>& store) : cfg_(cfg), store_(store) {}

  static void init_params(nn::ParameterStore<T>& store, const VaeConfig& cfg, uint64_t seed);

  struct Posterior {
    Var mean;    // V x c
    Var logvar;  // V x c, clamped to [-30, 20]
  };
  Posterior encode(nn::Graph<T>& g, const Mat<T>& points) const;
  /// mean + exp(logvar / 2) * eps with eps drawn from the seed; the mean
  /// itself when no seed is given.
  Var sample(nn::Graph<T>& g, const Posterior& post, std::optional<uint64_t> seed) const;
  /// Decoder feature tokens (F x h) for a latent z (V x c).
  Var decode_tokens(nn::Graph<T>& g, Var z) const;
  Var occupancy_logits(nn::Graph<T>& g, Var tokens, const Mat<T>& coords) const;  // Q x 1
  Var colors(nn::Graph<T>& g, Var tokens, const Mat<T>& coords) const;            // Q x 3 in [0,1]
  /// Occupied height as a fraction of Y (1 x 1).
  Var height_fraction(nn::Graph<T>& g, Var tokens) const;

  const VaeConfig& config() const { return cfg_; }

 private:
  Mat<T> embed_coords(const Mat<T>& coords) const;
  Var query_head(nn::Graph<T>& g, const std::string& prefix, Var tokens, const Mat<T>& coords) const;

  VaeConfig cfg_;
  nn::ParameterStore<T>& store_;
};

extern template class ChunkVae<float>;
extern template class ChunkVae<double>;

/// Occupied height in voxels: one past the highest occupied layer (0 if empty).
int occupied_height(const geo::OccupancyGrid& grid);

/// One training chunk with pre-sampled supervision pools.
struct VaeSample {
  Mat<float> points;         // n_pc x 6
  Mat<float> occ_coords;     // pool x 3
  Mat<float> occ_labels;     // pool x 1
  Mat<float> color_coords;   // pool x 3
  Mat<float> color_targets;  // pool x 3
  float height_fraction = 0.0f;
  geo::OccupancyGrid grid;
  geo::ColoredPointCloud surface;
};

/// Resamples a cloud to exactly n points (subset without replacement when
/// larger, cyclic repeat of a shuffled order when smaller).
geo::ColoredPointCloud fit_point_count(const geo::ColoredPointCloud& cloud, size_t n, uint64_t seed);

VaeSample prepare_sample(const geo::SceneChunkSample& chunk, const VaeConfig& cfg, uint64_t seed,
                         size_t occ_pool = 8192, size_t color_pool = 4096);

struct LossParts {
  double total = 0, occ_bce = 0, color_l2 = 0, height_l2 = 0, kl = 0;
};

/// KL(N(mean, exp(logvar)) || N(0, I)) summed over all entries.
template <class T>
Var kl_standard_normal(nn::Tape<T>& t, Var mean, Var logvar);

/// Builds the weighted loss for a batch on the tape (mean over the batch)
/// and returns the loss variable; parts receives the component values.
template <class T>
Var vae_loss(nn::Graph<T>& g, const ChunkVae<T>& model, const std::vector<const VaeSample*>& batch, uint64_t seed,
             LossParts* parts = nullptr);

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int warmup = 100;
  double clip_norm = 1.0;
  uint64_t seed = 0;
};

struct TrainLog {
  std::vector<LossParts> steps;
};

/// Trains in place; progress(step, parts) is called after every update.
TrainLog train_vae(nn::ParameterStore<float>& store, const VaeConfig& cfg, const std::vector<VaeSample>& data,
                   const TrainConfig& tc, const std::function<void(int, const LossParts&)>& progress = {});

// Inference on frozen float parameters.
struct Encoded {
  Mat<float> mean;
  Mat<float> logvar;
};
Encoded encode_chunk(const nn::ParameterStore<float>& store, const VaeConfig& cfg, const geo::ColoredPointCloud& surface);
Mat<float> sample_latent(const Encoded& e, std::optional<uint64_t> seed);

/// Decoder features for z; cheap to reuse across many query calls.
Mat<float> decoder_tokens(const nn::ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& z);
std::vector<float> decode_query_occupancy(const nn::ParameterStore<float>& store, const VaeConfig& cfg,
                                          const Mat<float>& tokens, const Mat<float>& coords);
Mat<float> decode_query_color(const nn::ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& tokens,
                              const Mat<float>& coords);
/// Predicted occupied height in voxels, in [1, Y].
int predict_height(const nn::ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& tokens);

/// Dense occupancy over the chunk grid (queries at voxel centers). With a
/// height limit, layers at or above it are forced empty.
geo::OccupancyGrid decode_occupancy_grid(const nn::ParameterStore<float>& store, const VaeConfig& cfg,
                                         const Mat<float>& tokens, std::optional<int> height_limit);

struct MeshOptions {
  bool use_predicted_height = true;
  size_t color_samples = 4096;
  uint64_t seed = 0;
};
geo::TriMesh decode_chunk_mesh(const nn::ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& z,
                               const MeshOptions& opt = {});

/// Chunk (row, col) placed at x = 2 col, z = 2 row; each chunk decodes
/// independently of its neighbors. Latents are in VAE space.
geo::TriMesh decode_scene_mesh(const nn::ParameterStore<float>& store, const VaeConfig& cfg,
                               const SceneLatentGrid& grid, const MeshOptions& opt = {});

}  // namespace nuiworld::vae
