#include <cmath>
#include <limits>

#include "doctest.h"
#include "nuiworld/metrics.hpp"

using namespace nuiworld;
using namespace nuiworld::metrics;

namespace {

geo::Points random_cloud(Rng& rng, int n) {
  geo::Points p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return p;
}

double dist(const geo::Points& a, Eigen::Index i, const geo::Points& b, Eigen::Index j) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = static_cast<double>(a(i, k)) - static_cast<double>(b(j, k));
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<double> brute_nn(const geo::Points& from, const geo::Points& to) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j) best = std::min(best, dist(from, i, to, j));
    out.push_back(best);
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double brute_mmd(const MatD& a, const MatD& b) {
  const double d = static_cast<double>(a.cols());
  auto k = [d](auto x, auto y) {
    double dot = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) dot += x(i) * y(i);
    return std::pow(dot / d + 1.0, 3);
  };
  double saa = 0, sbb = 0, sab = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.rows(); ++j)
      if (i != j) saa += k(a.row(i), a.row(j));
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      if (i != j) sbb += k(b.row(i), b.row(j));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) sab += k(a.row(i), b.row(j));
  const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
  return saa / (m * (m - 1)) + sbb / (n * (n - 1)) - 2.0 * sab / (m * n);
}

}  // namespace

TEST_CASE("point metrics agree with brute force") {
  Rng rng(7);
  for (int inst = 0; inst < 50; ++inst) {
    const int na = 1 + static_cast<int>(rng.below(100)), nb = 1 + static_cast<int>(rng.below(100));
    const geo::Points a = random_cloud(rng, na), b = random_cloud(rng, nb);
    const auto dab = brute_nn(a, b), dba = brute_nn(b, a);
    CHECK(std::abs(chamfer_distance(a, b) - 0.5 * (mean(dab) + mean(dba))) < 1e-6);

    const double tau = rng.uniform(0.05, 0.5);
    double p = 0, r = 0;
    for (double x : dab) p += x <= tau;
    for (double x : dba) r += x <= tau;
    p /= na;
    r /= nb;
    const FScore fs = f_score(a, b, tau);
    CHECK(std::abs(fs.precision - p) < 1e-6);
    CHECK(std::abs(fs.recall - r) < 1e-6);
    CHECK(std::abs(fs.f - (p + r > 0 ? 2 * p * r / (p + r) : 0.0)) < 1e-6);

    const int n = 1 + static_cast<int>(rng.below(100));
    std::vector<uint8_t> pl(n), gl(n);
    double inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
      pl[i] = rng.bernoulli(0.5);
      gl[i] = rng.bernoulli(0.5);
      inter += pl[i] && gl[i];
      uni += pl[i] || gl[i];
    }
    CHECK(std::abs(iou(pl, gl) - (uni > 0 ? inter / uni : 1.0)) < 1e-6);

    geo::Points ca(n, 3), cb(n, 3);
    double se = 0.0;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) {
        ca(i, k) = static_cast<float>(rng.uniform());
        cb(i, k) = static_cast<float>(rng.uniform());
        se += std::pow(static_cast<double>(ca(i, k)) - static_cast<double>(cb(i, k)), 2);
      }
    CHECK(std::abs(rgb_rmse(ca, cb) - std::sqrt(se / (3.0 * n))) < 1e-6);

    const int ma = 2 + static_cast<int>(rng.below(40)), mb = 2 + static_cast<int>(rng.below(40));
    const int d = 1 + static_cast<int>(rng.below(16));
    MatD fa(ma, d), fb(mb, d);
    for (Eigen::Index i = 0; i < fa.size(); ++i) fa.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < fb.size(); ++i) fb.data()[i] = rng.normal(0.3, 1.2);
    CHECK(std::abs(kernel_mmd2(fa, fb) - brute_mmd(fa, fb)) < 1e-6);
  }
}

TEST_CASE("metric examples") {
  geo::Points a(1, 3), b(1, 3);
  a << 0, 0, 0;
  b << 3, 4, 0;
  CHECK(chamfer_distance(a, b) == doctest::Approx(5.0));
  CHECK(chamfer_distance(a, a) == 0.0);
  CHECK(f_score(a, a, 0.01).f == 1.0);
  CHECK(f_score(a, b, 1.0).f == 0.0);
  CHECK(iou({0, 0, 0}, {0, 0, 0}) == 1.0);
  CHECK(iou({1, 1, 0, 0}, {1, 0, 1, 0}) == doctest::Approx(1.0 / 3.0));
  geo::Points unit(1, 3), two(2, 3);
  unit << 1, 0, 0;
  two << 0, 0, 0, 5, 0, 0;
  CHECK(chamfer_distance(a, unit) == doctest::Approx(1.0));
  const auto half = f_score(a, two, 0.1);
  CHECK(half.precision == 1.0);
  CHECK(half.recall == 0.5);
  CHECK(half.f == doctest::Approx(2.0 / 3.0));
  CHECK(iou({1, 0, 1, 0}, {0, 1, 0, 1}) == 0.0);
  CHECK_THROWS_AS(chamfer_distance(geo::Points(0, 3), b), Error);
  CHECK_THROWS_AS(f_score(a, b, 0.0), Error);
  CHECK_THROWS_AS(iou({1}, {1, 0}), Error);
}

TEST_CASE("Frechet distance with equal covariances") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 4 + 4 * trial;
    MatD x(200, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::RowVectorXd delta(d);
    for (int k = 0; k < d; ++k) delta(k) = rng.normal(0.0, 0.5);
    const MatD y = x.rowwise() + delta;
    CHECK(std::abs(frechet_distance(x, y) - delta.squaredNorm()) < 1e-4);
  }
  MatD x(50, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  CHECK(std::abs(frechet_distance(x, x)) < 1e-4);
}

TEST_CASE("occupancy IoU") {
  geo::OccupancyGrid gt(8, 8, 8, 0.25f);
  for (int z = 0; z < 8; ++z)
    for (int x = 0; x < 8; ++x)
      for (int y = 0; y < 3; ++y) gt.set(x, y, z, true);
  const OccupancyPredictor exact = [&](const geo::Points& q) {
    std::vector<uint8_t> out(static_cast<size_t>(q.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) out[static_cast<size_t>(i)] = q(i, 1) < 3 * 0.25f;
    return out;
  };
  CHECK(occupancy_iou(exact, gt, 1, 2000, 2000) == doctest::Approx(1.0).epsilon(1e-3));
  const OccupancyPredictor none = [](const geo::Points& q) { return std::vector<uint8_t>(static_cast<size_t>(q.rows()), 0); };
  CHECK(occupancy_iou(none, gt, 1, 2000, 2000) == 0.0);
  CHECK_THROWS_AS(occupancy_iou(exact, geo::OccupancyGrid(8, 8, 8, 0.25f), 1), Error);
}

TEST_CASE("frozen point features") {
  Rng rng(3);
  const geo::Points p = random_cloud(rng, 64);
  const PointFeatureNet net;
  const Eigen::RowVectorXd f = net.features(p);
  CHECK(f.size() == 256);
  CHECK(f == PointFeatureNet().features(p));
  const geo::Points rev = p.colwise().reverse();
  CHECK(f == net.features(rev));
  std::vector<geo::Points> a, b;
  for (int i = 0; i < 6; ++i) {
    a.push_back(random_cloud(rng, 64));
    b.push_back(random_cloud(rng, 64));
  }
  CHECK(feature_distance(a, a, FeatureMode::Kernel) == doctest::Approx(feature_distance(a, a, FeatureMode::Kernel)));
  CHECK(std::isfinite(feature_distance(a, b, FeatureMode::Frechet)));
}

TEST_CASE("latent RMSE and reports") {
  SceneLatentGrid a({2, 3}, 2, 2), b({2, 3}, 2, 2);
  b.tokens.setConstant(0.5f);
  CHECK(latent_rmse(a, b) == doctest::Approx(0.5));
  CHECK_THROWS_AS(latent_rmse(a, SceneLatentGrid({3, 2}, 2, 2)), Error);
  MetricReport r;
  r.set("cd", 0.1);
  r.set("fscore", 0.5);
  CHECK_NOTHROW(r.validate());
  r.set("fscore", 1.5);
  CHECK_THROWS_AS(r.validate(), Error);
  r.set("fscore", -0.1);
  CHECK_THROWS_AS(r.validate(), Error);
}
