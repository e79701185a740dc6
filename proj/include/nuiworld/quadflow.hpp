#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "nuiworld/flow.hpp"

namespace nuiworld::quad {

using nn::Mat;
using nn::Var;

/// Slots of a 2x2 window: 0 = (row, col), 1 = (row, col + 1),
/// 2 = (row + 1, col), 3 = (row + 1, col + 1).
enum class MaskConfig { All, RightColumn, BottomRow, BottomRight };
inline constexpr std::array<MaskConfig, 4> kMaskConfigs = {MaskConfig::All, MaskConfig::RightColumn,
                                                           MaskConfig::BottomRow, MaskConfig::BottomRight};
/// true = generated, false = conditioning.
std::array<bool, 4> mask_bits(MaskConfig m);
std::string_view to_string(MaskConfig m);

/// Four chunk latents, one flattened V*c row per slot.
struct QuadLatent {
  MatF tokens;  // 4 x (V c)
  int row = 0;  // top-left chunk
  int col = 0;
};

/// Conditioning input for sampling: exactly the slots the mask keeps clean.
using PartialQuad = std::array<std::optional<MatF>, 4>;  // each 1 x (V c)

/// Every 2x2 window of a grid, stride 1.
std::vector<QuadLatent> extract_quads(const SceneLatentGrid& grid);

struct QuadConfig {
  int V = 4;
  int c = 16;
  int width = 128;
  int depth = 4;
  int heads = 4;
  int time_freq = 64;
  double t_mean = 0.0;
  double t_std = 1.0;

  int channels() const { return V * c; }
  void validate() const;
  nlohmann::json to_json() const;
  static QuadConfig from_json(const nlohmann::json& j);
};

/// Tokens are [x slot, clean conditioning slot, flag] per chunk plus a
/// learned corner embedding; each window attends only within itself.
template <class T>
class QuadNet {
 public:
  QuadNet(const QuadConfig& cfg, nn::ParameterStore<T>& store) : cfg_(cfg), store_(store) {}
  static void init_params(nn::ParameterStore<T>& store, const QuadConfig& cfg, uint64_t seed);

  /// inputs: (4 B) x (2 V c + 1), ts: B timesteps. Returns (4 B) x (V c) velocities.
  Var forward(nn::Graph<T>& g, const Mat<T>& inputs, const std::vector<double>& ts) const;

 private:
  QuadConfig cfg_;
  nn::ParameterStore<T>& store_;
};

extern template class QuadNet<float>;
extern template class QuadNet<double>;

/// Network input rows for one window: generated slots carry x in the
/// first block, conditioning slots carry the clean latent in both blocks
/// and flag 1.
template <class T>
Mat<T> quad_inputs(const MatF& x, const std::array<bool, 4>& mask);

/// Mean squared error over generated slots only; pred and target hold
/// consecutive 4-row windows.
template <class T>
Var masked_velocity_mse(nn::Tape<T>& t, Var pred, const MatF& target, const std::array<bool, 4>& mask);

/// Masked-slot velocity MSE for a batch under one mask. Each window draws
/// its own t and eps from the seed.
template <class T>
Var quad_loss(nn::Graph<T>& g, const QuadNet<T>& net, const QuadConfig& cfg, const std::vector<const QuadLatent*>& batch,
              MaskConfig mask, uint64_t seed);

struct QuadTrainConfig {
  int steps = 2000;
  int batch = 32;
  double lr = 5e-4;
  double weight_decay = 0.0;
  int warmup = 100;
  double clip_norm = 1.0;
  uint64_t seed = 0;
};

struct QuadTrainLog {
  std::vector<double> loss;
  std::vector<MaskConfig> masks;
};

QuadTrainLog train_quad(nn::ParameterStore<float>& store, const QuadConfig& cfg, const std::vector<QuadLatent>& data,
                        const QuadTrainConfig& tc, const std::function<void(int, double)>& progress = {});

/// v(x, t) for a 4 x (V c) window state; conditioning rows of x hold the
/// clean latents.
using VelocityField = std::function<MatF(const MatF& x, const std::array<bool, 4>& mask, double t)>;
VelocityField model_field(const nn::ParameterStore<float>& store, const QuadConfig& cfg);

struct VelocityEval {
  double model_mse = 0.0;
  double zero_mse = 0.0;  // predict-zero baseline on the same draws
};
/// Cycles through the four masks; each window is scored once per mask.
VelocityEval evaluate_velocity(const nn::ParameterStore<float>& store, const QuadConfig& cfg,
                               const std::vector<QuadLatent>& quads, uint64_t seed);

/// Euler from t = 1 to t = 0 over masked slots; conditioning slots are
/// copied through untouched.
QuadLatent quad_sample(const VelocityField& field, const PartialQuad& cond, MaskConfig mask, int channels, int steps,
                       uint64_t seed);

struct QuadCall {
  int row = 0;
  int col = 0;
  MaskConfig mask = MaskConfig::All;
};

/// Stride-1 raster over the layout; the result holds normalized latents.
SceneLatentGrid raster_scan_generate(const forge::LayoutSpec& layout, const VelocityField& field, int V, int c,
                                     int steps, uint64_t seed, std::vector<QuadCall>* trace = nullptr);

}  // namespace nuiworld::quad
