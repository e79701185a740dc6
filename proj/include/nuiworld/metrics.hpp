#pragma once

#include <functional>
#include <vector>

#include "json.hpp"
#include "nuiworld/geometry.hpp"
#include "nuiworld/latents.hpp"

namespace nuiworld::metrics {

using geo::Points;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Symmetric Chamfer distance: half the sum of the two mean nearest-neighbor
/// L2 distances (not squared).
double chamfer_distance(const Points& a, const Points& b);

struct FScore {
  double precision = 0, recall = 0, f = 0;
};
/// A point counts as matched when its nearest neighbor is within tau.
FScore f_score(const Points& a, const Points& b, double tau);

/// TP / (TP + FP + FN) over boolean labels; 1 when both label sets are all false.
double iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);

using OccupancyPredictor = std::function<std::vector<uint8_t>(const Points& coords)>;
/// IoU of a predictor on the balanced uniform + near-surface query set.
double occupancy_iou(const OccupancyPredictor& pred, const geo::OccupancyGrid& gt, uint64_t seed,
                     size_t n_uniform = 10000, size_t n_near = 10000);

double rgb_rmse(const Points& pred, const Points& gt);

/// Frozen per-point perceptron (3 -> 64 -> 128 -> 256, ReLU) with max
/// pooling; weights come from a pinned seed.
class PointFeatureNet {
 public:
  static constexpr uint64_t kPinnedSeed = 0x5EEDF00D2048ULL;
  explicit PointFeatureNet(uint64_t seed = kPinnedSeed);
  Eigen::RowVectorXd features(const Points& cloud) const;
  MatD features(const std::vector<Points>& clouds) const;
  int dim() const { return 256; }

 private:
  std::vector<MatD> w_;
  std::vector<Eigen::RowVectorXd> b_;
};

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with eps I added to
/// both covariances. Rows are samples.
double frechet_distance(const MatD& a, const MatD& b, double eps = 1e-6);
/// Unbiased squared MMD with k(x, y) = (x.y / d + 1)^3, unscaled.
double kernel_mmd2(const MatD& a, const MatD& b);

enum class FeatureMode { Frechet, Kernel };
/// Feature distance between two sets of clouds; Kernel mode returns MMD^2 x 10^3.
double feature_distance(const std::vector<Points>& a, const std::vector<Points>& b, FeatureMode mode,
                        const PointFeatureNet& net = PointFeatureNet());

double latent_rmse(const SceneLatentGrid& pred, const SceneLatentGrid& gt);

/// Named scalar results with the settings they were computed under.
struct MetricReport {
  nlohmann::json values = nlohmann::json::object();
  nlohmann::json settings = nlohmann::json::object();
  void set(const std::string& name, double v);
  /// Every value finite and >= 0; IoU/F-score entries also <= 1.
  void validate() const;
  nlohmann::json to_json() const;
};

}  // namespace nuiworld::metrics
