#include "nuiworld/metrics.hpp"

#include <cmath>

namespace nuiworld::metrics {

namespace {

void require_points(const Points& p, const char* what) {
  require(p.rows() > 0, ErrorKind::InvalidArgument, std::string(what) + " is empty");
}

// Mean distance from each point of `from` to its nearest neighbor in `index`,
// recomputed in double from the matched pair.
std::vector<double> nn_distances(const Points& from, const Points& to, const geo::PointIndex& index) {
  std::vector<double> d(static_cast<size_t>(from.rows()));
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    const auto hit = index.nearest(from(i, 0), from(i, 1), from(i, 2));
    d[static_cast<size_t>(i)] = (from.row(i).cast<double>() - to.row(hit.index).cast<double>()).norm();
  }
  return d;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double chamfer_distance(const Points& a, const Points& b) {
  require_points(a, "chamfer_distance: first set");
  require_points(b, "chamfer_distance: second set");
  const geo::PointIndex ia(a), ib(b);
  return 0.5 * (mean(nn_distances(a, b, ib)) + mean(nn_distances(b, a, ia)));
}

FScore f_score(const Points& a, const Points& b, double tau) {
  require(tau > 0, ErrorKind::InvalidArgument, "f_score: tau must be positive");
  require_points(a, "f_score: first set");
  require_points(b, "f_score: second set");
  const geo::PointIndex ia(a), ib(b);
  auto frac = [tau](const std::vector<double>& d) {
    size_t n = 0;
    for (double x : d) n += x <= tau;
    return static_cast<double>(n) / static_cast<double>(d.size());
  };
  FScore s;
  s.precision = frac(nn_distances(a, b, ib));
  s.recall = frac(nn_distances(b, a, ia));
  s.f = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  require(pred.size() == gt.size(), ErrorKind::InvalidArgument, "iou: label counts differ");
  size_t tp = 0, un = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    tp += pred[i] && gt[i];
    un += pred[i] || gt[i];
  }
  return un == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(un);
}

double occupancy_iou(const OccupancyPredictor& pred, const geo::OccupancyGrid& gt, uint64_t seed, size_t n_uniform,
                     size_t n_near) {
  const size_t occ = gt.count_occupied();
  require(occ > 0 && occ < gt.size(), ErrorKind::DegenerateInput,
          "occupancy_iou needs a grid with both occupied and empty voxels");
  const auto q = geo::sample_occupancy_queries(gt, n_uniform, n_near, gt.voxel_edge, seed);
  const auto labels = pred(q.coords);
  require(labels.size() == q.labels.size(), ErrorKind::InvalidArgument, "predictor returned the wrong label count");
  return iou(labels, q.labels);
}

double rgb_rmse(const Points& pred, const Points& gt) {
  require(pred.rows() == gt.rows(), ErrorKind::InvalidArgument, "rgb_rmse: color counts differ");
  require(pred.rows() > 0, ErrorKind::InvalidArgument, "rgb_rmse: no colors");
  return std::sqrt((pred.cast<double>() - gt.cast<double>()).squaredNorm() / static_cast<double>(pred.size()));
}

PointFeatureNet::PointFeatureNet(uint64_t seed) {
  const int widths[4] = {3, 64, 128, 256};
  for (int l = 0; l < 3; ++l) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(l)));
    MatD w(widths[l], widths[l + 1]);
    const double scale = std::sqrt(2.0 / widths[l]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
    Eigen::RowVectorXd b(widths[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.1 * rng.normal();
    w_.push_back(std::move(w));
    b_.push_back(std::move(b));
  }
}

Eigen::RowVectorXd PointFeatureNet::features(const Points& cloud) const {
  require_points(cloud, "point features: cloud");
  MatD h = cloud.cast<double>();
  for (size_t l = 0; l < w_.size(); ++l) {
    MatD next = h * w_[l];
    next.rowwise() += b_[l];
    h = next.cwiseMax(0.0);
  }
  return h.colwise().maxCoeff();
}

MatD PointFeatureNet::features(const std::vector<Points>& clouds) const {
  MatD out(static_cast<Eigen::Index>(clouds.size()), dim());
  for (size_t i = 0; i < clouds.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features(clouds[i]);
  return out;
}

double frechet_distance(const MatD& a, const MatD& b, double eps) {
  require(a.rows() >= 2 && b.rows() >= 2, ErrorKind::InvalidArgument, "frechet_distance needs at least 2 samples per set");
  require(a.cols() == b.cols(), ErrorKind::InvalidArgument, "frechet_distance: feature widths differ");
  const Eigen::RowVectorXd ma = a.colwise().mean(), mb = b.colwise().mean();
  auto cov = [eps](const MatD& x, const Eigen::RowVectorXd& m) {
    const MatD c = x.rowwise() - m;
    MatD s = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
    s.diagonal().array() += eps;
    return s;
  };
  const MatD sa = cov(a, ma), sb = cov(b, mb);
  Eigen::SelfAdjointEigenSolver<MatD> ea(sa);
  const MatD root_a = ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                      ea.eigenvectors().transpose();
  MatD mid = root_a * sb * root_a;
  mid = 0.5 * (mid + mid.transpose());
  Eigen::SelfAdjointEigenSolver<MatD> em(mid, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

double kernel_mmd2(const MatD& a, const MatD& b) {
  require(a.rows() >= 2 && b.rows() >= 2, ErrorKind::InvalidArgument, "kernel_mmd2 needs at least 2 samples per set");
  require(a.cols() == b.cols(), ErrorKind::InvalidArgument, "kernel_mmd2: feature widths differ");
  const double d = static_cast<double>(a.cols());
  auto k = [d](const MatD& x, const MatD& y) { return MatD(((x * y.transpose()).array() / d + 1.0).cube()); };
  const MatD kaa = k(a, a), kbb = k(b, b), kab = k(a, b);
  const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
  const double saa = (kaa.sum() - kaa.trace()) / (m * (m - 1));
  const double sbb = (kbb.sum() - kbb.trace()) / (n * (n - 1));
  return saa + sbb - 2.0 * kab.mean();
}

double feature_distance(const std::vector<Points>& a, const std::vector<Points>& b, FeatureMode mode,
                        const PointFeatureNet& net) {
  require(a.size() >= 2 && b.size() >= 2, ErrorKind::InvalidArgument, "feature_distance needs at least 2 clouds per set");
  const MatD fa = net.features(a), fb = net.features(b);
  return mode == FeatureMode::Frechet ? frechet_distance(fa, fb) : 1e3 * kernel_mmd2(fa, fb);
}

double latent_rmse(const SceneLatentGrid& pred, const SceneLatentGrid& gt) {
  require(pred.layout == gt.layout && pred.V == gt.V && pred.c == gt.c, ErrorKind::InvalidArgument,
          "latent_rmse: layouts or vector-set shapes differ");
  return std::sqrt((pred.tokens.cast<double>() - gt.tokens.cast<double>()).squaredNorm() /
                   static_cast<double>(gt.tokens.size()));
}

void MetricReport::set(const std::string& name, double v) { values[name] = v; }

void MetricReport::validate() const {
  for (const auto& [name, v] : values.items()) {
    if (!v.is_number()) continue;
    const double x = v.get<double>();
    require(std::isfinite(x) && x >= 0.0, ErrorKind::InvalidArgument, "metric " + name + " is negative or not finite");
    if (name.find("iou") != std::string::npos || name.find("fscore") != std::string::npos)
      require(x <= 1.0, ErrorKind::InvalidArgument, "metric " + name + " exceeds 1");
  }
}

nlohmann::json MetricReport::to_json() const { return {{"values", values}, {"settings", settings}}; }

}  // namespace nuiworld::metrics
