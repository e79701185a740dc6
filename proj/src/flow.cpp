#include "nuiworld/flow.hpp"

#include <cmath>

namespace nuiworld::flow {

using nn::Graph;
using nn::Mat;
using nn::ParameterStore;
using nn::Var;

double sample_timestep(double mean, double std, uint64_t seed) {
  require(std > 0.0, ErrorKind::InvalidArgument, "timestep std must be positive");
  Rng rng(seed);
  const double g = rng.normal(mean, std);
  // keep strictly inside (0, 1) even for extreme draws
  return std::clamp(1.0 / (1.0 + std::exp(-g)), 1e-7, 1.0 - 1e-7);
}

MatF flow_interpolate(const MatF& v0, const MatF& eps, double t) {
  require(v0.rows() == eps.rows() && v0.cols() == eps.cols(), ErrorKind::InvalidArgument,
          "flow_interpolate: shape mismatch");
  require(t >= 0.0 && t <= 1.0, ErrorKind::InvalidArgument, "flow_interpolate: t outside [0, 1]");
  if (t == 0.0) return v0;
  if (t == 1.0) return eps;
  const float tf = static_cast<float>(t);
  return (1.0f - tf) * v0 + tf * eps;
}

MatF gaussian(Eigen::Index rows, Eigen::Index cols, uint64_t seed) {
  Rng rng(seed);
  MatF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

LatentNorm LatentNorm::fit(const std::vector<SceneLatentGrid>& grids) {
  double sum = 0.0, sq = 0.0;
  size_t n = 0;
  for (const auto& g : grids)
    for (Eigen::Index i = 0; i < g.tokens.size(); ++i) {
      const double v = g.tokens.data()[i];
      sum += v;
      sq += v * v;
      ++n;
    }
  require(n > 0, ErrorKind::EmptyInput, "no latents to normalize");
  LatentNorm out;
  out.mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - out.mean * out.mean;
  out.std = var > 1e-12 ? std::sqrt(var) : 1.0;
  return out;
}

MatF LatentNorm::apply(const MatF& z) const {
  return ((z.array() - static_cast<float>(mean)) / static_cast<float>(std)).matrix();
}

MatF LatentNorm::invert(const MatF& z) const {
  return (z.array() * static_cast<float>(std) + static_cast<float>(mean)).matrix();
}

SceneLatentGrid LatentNorm::apply(SceneLatentGrid g) const {
  g.tokens = apply(g.tokens);
  return g;
}

SceneLatentGrid LatentNorm::invert(SceneLatentGrid g) const {
  g.tokens = invert(g.tokens);
  return g;
}

LatentNorm LatentNorm::from_json(const nlohmann::json& j) {
  LatentNorm n;
  n.mean = j.at("mean").get<double>();
  n.std = j.at("std").get<double>();
  require(n.std > 0.0, ErrorKind::InvalidArgument, "latent std must be positive");
  return n;
}

template <class T>
void add_time_embedder(ParameterStore<T>& s, const std::string& prefix, int freq_dim, int width, uint64_t seed) {
  nn::add_linear(s, prefix + ".fc1", freq_dim, width, seed);
  nn::add_linear(s, prefix + ".fc2", width, width, seed);
}

template <class T>
Var time_embedding(Graph<T>& g, const std::string& prefix, const std::vector<double>& ts, int freq_dim, int repeat) {
  Mat<T> freq(static_cast<Eigen::Index>(ts.size()) * repeat, freq_dim);
  for (size_t i = 0; i < ts.size(); ++i) {
    const Mat<T> e = nn::sinusoidal_embed<T>(1000.0 * ts[i], freq_dim);
    for (int r = 0; r < repeat; ++r) freq.row(static_cast<Eigen::Index>(i) * repeat + r) = e.row(0);
  }
  const Var h = g.tape.silu(nn::linear(g, prefix + ".fc1", g.tape.constant(std::move(freq))));
  return nn::linear(g, prefix + ".fc2", h);
}

template <class T>
void add_output_head(ParameterStore<T>& s, const std::string& prefix, int width, int cond_width, int out,
                     uint64_t seed) {
  nn::add_linear(s, prefix + ".mod", cond_width, 2 * width, seed, true, nn::Init::Zeros);
  nn::add_linear(s, prefix + ".out", width, out, seed, true, nn::Init::Zeros);
}

template <class T>
Var output_head(Graph<T>& g, const std::string& prefix, Var x, Var cond) {
  auto& t = g.tape;
  const int w = t.cols(x);
  const Var mod = nn::linear(g, prefix + ".mod", t.silu(cond));
  const Var shift = t.slice_cols(mod, 0, w);
  const Var scale = t.add_scalar(t.slice_cols(mod, w, w), T(1));
  Var h = t.layer_norm(x);
  if (t.rows(cond) == t.rows(x) && t.rows(cond) != 1)
    h = t.add(t.mul(h, scale), shift);
  else
    h = t.add_row(t.mul_row(h, scale), shift);
  return nn::linear(g, prefix + ".out", h);
}

#define NUIWORLD_FLOW_INST(T)                                                                                     \
  template void add_time_embedder<T>(ParameterStore<T>&, const std::string&, int, int, uint64_t);                \
  template Var time_embedding<T>(Graph<T>&, const std::string&, const std::vector<double>&, int, int);            \
  template void add_output_head<T>(ParameterStore<T>&, const std::string&, int, int, int, uint64_t);             \
  template Var output_head<T>(Graph<T>&, const std::string&, Var, Var);
NUIWORLD_FLOW_INST(float)
NUIWORLD_FLOW_INST(double)
#undef NUIWORLD_FLOW_INST

}  // namespace nuiworld::flow
