#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "nuiworld/flow.hpp"
#include "nuiworld/sketch.hpp"

namespace nuiworld::world {

using nn::Mat;
using nn::Var;

struct WorldConfig {
  int V = 2;
  int c = 16;
  int width = 64;
  int depth = 4;
  int heads = 4;
  int time_freq = 64;
  int sketch_dim = 64;
  double t_mean = 1.0;
  double t_std = 1.0;
  double drop_prob = 0.2;

  int channels() const { return V * c; }
  void validate() const;
  nlohmann::json to_json() const;
  static WorldConfig from_json(const nlohmann::json& j);
};

/// Per-token concat(sin(row), sin(col)) plus a shared sin(R*C) row, both
/// `dim` wide. Token order is row-major over (row, col).
struct PosSizeEmbedding {
  Mat<float> pos;   // (R C) x dim
  Mat<float> size;  // 1 x dim
};
PosSizeEmbedding pos_size_embed(const forge::LayoutSpec& layout, int dim);

struct ForwardStats {
  int tokens = 0;
  int width = 0;
  int64_t peak_attention = 0;
};

template <class T>
class WorldNet {
 public:
  WorldNet(const WorldConfig& cfg, nn::ParameterStore<T>& store) : cfg_(cfg), store_(store) {}
  static void init_params(nn::ParameterStore<T>& store, const WorldConfig& cfg, uint64_t seed);

  /// xt: (R C) x (V c) noisy latents. sketch: S x sketch_dim tokens, or
  /// nullptr for the learned null token.
  Var forward(nn::Graph<T>& g, const Mat<T>& xt, const forge::LayoutSpec& layout, const Mat<T>* sketch, double t,
              ForwardStats* stats = nullptr) const;
  const WorldConfig& config() const { return cfg_; }

 private:
  WorldConfig cfg_;
  nn::ParameterStore<T>& store_;
};

extern template class WorldNet<float>;
extern template class WorldNet<double>;

/// One training scene: normalized latents and the encodings of its sketches.
struct WorldSample {
  SceneLatentGrid latents;
  std::vector<sketch::SketchEncoding> sketches;
};

/// Per-step random choices: which sketch, whether conditioning is
/// dropped, and the flow time.
struct ConditioningDraw {
  int variant = 0;
  bool dropped = false;
  double t = 0.5;
};
ConditioningDraw draw_conditioning(const WorldConfig& cfg, size_t variants, uint64_t seed);

/// Velocity MSE over all tokens and channels for one scene.
template <class T>
Var world_loss(nn::Graph<T>& g, const WorldNet<T>& net, const WorldSample& sample, uint64_t seed,
               ConditioningDraw* draw = nullptr);

struct WorldTrainConfig {
  int steps = 3000;
  int batch = 4;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int warmup = 100;
  double clip_norm = 1.0;
  uint64_t seed = 0;
};

struct WorldTrainLog {
  std::vector<double> loss;
  std::vector<ConditioningDraw> draws;
};

WorldTrainLog train_world(nn::ParameterStore<float>& store, const WorldConfig& cfg, const std::vector<WorldSample>& data,
                          const WorldTrainConfig& tc, const std::function<void(int, double)>& progress = {});

/// v_uncond + g (v_cond - v_uncond).
Mat<float> cfg_velocity(const Mat<float>& v_cond, const Mat<float>& v_uncond, double g);

struct SampleOptions {
  int steps = 25;
  double guidance = 3.0;
  uint64_t seed = 0;
};

/// Euler from unit Gaussian noise at t = 1 to t = 0 with guided velocity;
/// g = 1 evaluates only the conditional branch and g = 0 only the
/// unconditional one. The result holds normalized latents.
SceneLatentGrid generate_world(const nn::ParameterStore<float>& store, const WorldConfig& cfg,
                               const sketch::SketchEncoding* sketch, const forge::LayoutSpec& layout,
                               const SampleOptions& opt, ForwardStats* stats = nullptr);

// Size predictor: 3-layer perceptron from the sketch cls to (ln R, ln C).

struct SizeConfig {
  int sketch_dim = 64;
  int hidden = 64;
  nlohmann::json to_json() const { return {{"sketch_dim", sketch_dim}, {"hidden", hidden}}; }
  static SizeConfig from_json(const nlohmann::json& j);
};

struct SizeSample {
  Mat<float> cls;  // 1 x sketch_dim
  forge::LayoutSpec layout;
};

/// Input standardization statistics are stored as fixed parameters
/// (size.norm.mean, size.norm.std) taken from the training set.
void init_size_params(nn::ParameterStore<float>& store, const SizeConfig& cfg, const std::vector<SizeSample>& data,
                      uint64_t seed);
bool size_model_present(const nn::ParameterStore<float>& store);

/// Explicit layout wins; otherwise the size head predicts one from the
/// sketch (UnavailableModel when no trained head is given).
forge::LayoutSpec resolve_layout(const std::optional<forge::LayoutSpec>& layout,
                                 const nn::ParameterStore<float>* size_store, const sketch::SketchEncoding& sketch);

/// Raw (ln R, ln C) regression output.
template <class T>
Var size_forward(nn::Graph<T>& g, const Mat<T>& cls);

struct SizeTrainConfig {
  int steps = 1500;
  double lr = 3e-3;
  int warmup = 50;
  uint64_t seed = 0;
};
std::vector<double> train_size_predictor(nn::ParameterStore<float>& store, const std::vector<SizeSample>& data,
                                         const SizeTrainConfig& tc);

/// Exponentiated, rounded, clamped so C >= R >= 2. Raises UnavailableModel
/// when the store holds no trained size head.
forge::LayoutSpec predict_size(const nn::ParameterStore<float>& store, const Mat<float>& cls);

/// Mean squared error in log space of the rounded predictions.
double size_error(const nn::ParameterStore<float>& store, const std::vector<SizeSample>& data);

}  // namespace nuiworld::world
