#pragma once

#include <vector>

#include "json.hpp"
#include "nuiworld/latents.hpp"
#include "nuiworld/nn/layers.hpp"

// Rectified-flow pieces shared by the quad and world models. Time runs
// from t = 1 (noise) to t = 0 (data); the velocity target is eps - V0.
namespace nuiworld::flow {

/// sigmoid(g) with g ~ Normal(mean, std).
double sample_timestep(double mean, double std, uint64_t seed);

/// (1 - t) v0 + t eps.
MatF flow_interpolate(const MatF& v0, const MatF& eps, double t);

MatF gaussian(Eigen::Index rows, Eigen::Index cols, uint64_t seed);

/// Dataset-wide scalar normalization applied to latents before either
/// flow model sees them.
struct LatentNorm {
  double mean = 0.0;
  double std = 1.0;

  static LatentNorm fit(const std::vector<SceneLatentGrid>& grids);
  MatF apply(const MatF& z) const;
  MatF invert(const MatF& z) const;
  SceneLatentGrid apply(SceneLatentGrid g) const;
  SceneLatentGrid invert(SceneLatentGrid g) const;
  nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}}; }
  static LatentNorm from_json(const nlohmann::json& j);
};

/// Sinusoid of 1000 t through a two-layer MLP.
template <class T>
void add_time_embedder(nn::ParameterStore<T>& s, const std::string& prefix, int freq_dim, int width, uint64_t seed);
/// One row per timestep, each repeated `repeat` times.
template <class T>
nn::Var time_embedding(nn::Graph<T>& g, const std::string& prefix, const std::vector<double>& ts, int freq_dim,
                       int repeat);

/// Final layer: LN, zero-initialized shift/scale from cond, then a
/// zero-initialized projection, so the network predicts 0 at init.
template <class T>
void add_output_head(nn::ParameterStore<T>& s, const std::string& prefix, int width, int cond_width, int out,
                     uint64_t seed);
template <class T>
nn::Var output_head(nn::Graph<T>& g, const std::string& prefix, nn::Var x, nn::Var cond);

}  // namespace nuiworld::flow
