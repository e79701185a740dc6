#include <cmath>

#include "doctest.h"
#include "nuiworld/forge.hpp"
#include "nuiworld/nn/gradcheck.hpp"
#include "nuiworld/vae.hpp"

using namespace nuiworld;
using namespace nuiworld::vae;
using nn::ParameterStore;
using nn::Tape;

namespace {

VaeConfig tiny_config() {
  VaeConfig c;
  c.V = 2;
  c.c = 4;
  c.chunk_size = 4;
  c.height = 4;
  c.width = 8;
  c.heads = 2;
  c.depth = 2;
  c.upsample_factor = 2;
  c.upsample_layers = 1;
  c.fourier_bands = 2;
  c.n_pc = 16;
  c.n_occ = 6;
  c.n_col = 5;
  return c;
}

// A 4x4x4 chunk: two-voxel slab plus a one-voxel post, colored points on its surface.
geo::SceneChunkSample tiny_chunk(uint64_t seed) {
  geo::SceneChunkSample ch;
  ch.occupancy = geo::OccupancyGrid(4, 4, 4, 0.5f);
  for (int z = 0; z < 4; ++z)
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 2; ++y) ch.occupancy.set(x, y, z, true);
  ch.occupancy.set(1, 2, 2, true);
  const auto mesh = geo::marching_cubes(ch.occupancy);
  ch.surface = geo::sample_surface_points(mesh, 64, seed);
  ch.surface.colors.resize(64, 3);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < ch.surface.colors.size(); ++i) ch.surface.colors.data()[i] = static_cast<float>(rng.uniform());
  return ch;
}

Mat<double> random_points(int n, uint64_t seed) {
  Rng rng(seed);
  Mat<double> m(n, 6);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) m(i, a) = rng.uniform(0.0, 2.0);
    for (int a = 3; a < 6; ++a) m(i, a) = rng.uniform();
  }
  return m;
}

}  // namespace

TEST_CASE("encoder contracts") {
  VaeConfig cfg = tiny_config();
  ParameterStore<double> store;
  ChunkVae<double>::init_params(store, cfg, 1);
  ChunkVae<double> model(cfg, store);
  SUBCASE("logvar is clamped") {
    store.get("enc.out.b").value.rightCols(cfg.c).setConstant(1e3);
    Tape<double> t;
    nn::Graph<double> g{t, store};
    const auto post = model.encode(g, random_points(16, 2));
    CHECK(t.value(post.logvar).maxCoeff() == 20.0);
    store.get("enc.out.b").value.rightCols(cfg.c).setConstant(-1e3);
    Tape<double> t2;
    nn::Graph<double> g2{t2, store};
    const auto post2 = model.encode(g2, random_points(16, 2));
    CHECK(t2.value(post2.logvar).minCoeff() == -30.0);
  }
  SUBCASE("point order does not matter") {
    ParameterStore<float> fs;
    VaeConfig big;
    ChunkVae<float>::init_params(fs, big, 3);
    auto boot = forge::build_bootstrap_dataset(forge::builtin_theme("medieval"), 1, {1, 1}, 4);
    auto cloud = fit_point_count(boot[0].chunks[0].surface, static_cast<size_t>(big.n_pc), 5);
    const auto a = encode_chunk(fs, big, cloud);
    geo::ColoredPointCloud rev = cloud;
    rev.points = cloud.points.colwise().reverse();
    rev.colors = cloud.colors.colwise().reverse();
    const auto b = encode_chunk(fs, big, rev);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((a.logvar - b.logvar).cwiseAbs().maxCoeff() < 1e-5);
    geo::ColoredPointCloud wrong = fit_point_count(cloud, 10, 1);
    CHECK_THROWS_AS(encode_chunk(fs, big, wrong), Error);
  }
  SUBCASE("mean path when sampling is disabled") {
    Tape<double> t;
    nn::Graph<double> g{t, store};
    const auto post = model.encode(g, random_points(16, 6));
    CHECK(t.value(model.sample(g, post, std::nullopt)) == t.value(post.mean));
    CHECK(t.value(model.sample(g, post, 9)) != t.value(post.mean));
  }
}

TEST_CASE("loss components in closed form") {
  Tape<double> t;
  const Var kl = kl_standard_normal(t, t.constant(Mat<double>::Zero(4, 8)), t.constant(Mat<double>::Zero(4, 8)));
  CHECK(t.scalar(kl) == 0.0);
  const Var kl1 = kl_standard_normal(t, t.constant(Mat<double>::Ones(1, 2)), t.constant(Mat<double>::Zero(1, 2)));
  CHECK(t.scalar(kl1) == doctest::Approx(1.0));
  const Mat<double> labels = (Mat<double>(1, 4) << 0, 1, 1, 0).finished();
  CHECK(t.scalar(t.bce_with_logits(t.constant(Mat<double>::Zero(1, 4)), labels)) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("VAE gradients match finite differences") {
  for (int shape = 0; shape < 3; ++shape) {
    VaeConfig c = tiny_config();
    c.n_occ = 4 + 3 * shape;
    c.n_col = 3 + 2 * shape;
    if (shape == 2) c.upsample_layers = 0;
    ParameterStore<double> store;
    ChunkVae<double>::init_params(store, c, 11);
    nn::randomize(store, 12 + static_cast<uint64_t>(shape), 0.25);
    const VaeSample sample = prepare_sample(tiny_chunk(13), c, 14, 32, 16);
    auto loss = [&](Tape<double>& t, ParameterStore<double>& s, const std::vector<Var>&) {
      nn::Graph<double> g{t, s};
      ChunkVae<double> m(c, s);
      return vae_loss(g, m, {&sample}, 15);
    };
    const auto res = nn::grad_check(loss, store, {}, 16, 6);
    INFO("shape " << shape << " worst " << res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("decoder inference contracts") {
  VaeConfig cfg;
  ParameterStore<float> store;
  ChunkVae<float>::init_params(store, cfg, 21);
  Rng rng(22);
  Mat<float> z(cfg.V, cfg.c);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<float>(rng.normal());
  const Mat<float> tokens = decoder_tokens(store, cfg, z);
  CHECK(tokens.rows() == cfg.tokens());
  Mat<float> coords(1000, 3);
  for (Eigen::Index i = 0; i < coords.size(); ++i) coords.data()[i] = static_cast<float>(rng.uniform(0.0, 2.0));

  SUBCASE("per-query outputs do not depend on the batch") {
    const auto many = decode_query_occupancy(store, cfg, tokens, coords);
    const auto one = decode_query_occupancy(store, cfg, tokens, coords.topRows(1));
    CHECK(one[0] == many[0]);
    const auto tail = decode_query_occupancy(store, cfg, tokens, coords.bottomRows(3));
    CHECK(tail[2] == many[999]);
  }
  SUBCASE("colors lie in the unit cube") {
    store.get("col.out.b").value.setConstant(40.0f);
    const Mat<float> hi = decode_query_color(store, cfg, tokens, coords);
    CHECK(hi.minCoeff() >= 0.0f);
    CHECK(hi.maxCoeff() <= 1.0f);
    store.get("col.out.b").value.setConstant(-40.0f);
    const Mat<float> lo = decode_query_color(store, cfg, tokens, coords);
    CHECK(lo.minCoeff() >= 0.0f);
    CHECK(lo.maxCoeff() <= 1.0f);
  }
  SUBCASE("height prediction is clamped to [1, Y]") {
    store.get("hgt.out.b").value.setConstant(-50.0f);
    CHECK(predict_height(store, cfg, tokens) == 1);
    store.get("hgt.out.b").value.setConstant(50.0f);
    CHECK(predict_height(store, cfg, tokens) == cfg.height);
  }
  SUBCASE("all-negative logits decode to an empty mesh") {
    store.get("occ.out.w").value.setZero();
    store.get("occ.out.b").value.setConstant(-5.0f);
    CHECK(decode_chunk_mesh(store, cfg, z).empty());
  }
  SUBCASE("mesh decoding is deterministic") {
    store.get("occ.out.w").value.setZero();
    store.get("occ.out.w").value(0, 0) = 3.0f;
    const auto a = decode_chunk_mesh(store, cfg, z);
    const auto b = decode_chunk_mesh(store, cfg, z);
    CHECK(a == b);
  }
  SUBCASE("height limit empties the upper layers") {
    store.get("occ.out.w").value.setZero();
    store.get("occ.out.b").value.setConstant(5.0f);
    const auto grid = decode_occupancy_grid(store, cfg, tokens, 3);
    CHECK(grid.count_occupied() == static_cast<size_t>(3 * cfg.chunk_size * cfg.chunk_size));
    CHECK(occupied_height(grid) == 3);
  }
}

TEST_CASE("overfitting a flat single-color chunk") {
  // ground-only chunk, one color everywhere
  forge::ForgeConfig fc = forge::builtin_theme("medieval");
  fc.density = {0, 0, 0, 0, 0};
  fc.palette = {{0.8f, 0.3f, 0.2f}};
  fc.points_per_chunk = 1024;
  const auto boot = forge::build_bootstrap_dataset(fc, 1, {1, 1}, 31);
  VaeConfig cfg;
  cfg.depth = 2;
  cfg.upsample_layers = 1;
  cfg.n_occ = 512;
  cfg.n_col = 128;
  const std::vector<VaeSample> data = {prepare_sample(boot[0].chunks[0], cfg, 32)};
  ParameterStore<float> store;
  ChunkVae<float>::init_params(store, cfg, 33);
  TrainConfig tc;
  tc.steps = 300;
  tc.batch = 1;
  tc.warmup = 20;
  const auto log = train_vae(store, cfg, data, tc);
  CHECK(log.steps.back().total < log.steps.front().total);
  const auto enc = encode_chunk(store, cfg, fit_point_count(data[0].surface, static_cast<size_t>(cfg.n_pc), 34));
  const Mat<float> tokens = decoder_tokens(store, cfg, enc.mean);
  CHECK(std::abs(predict_height(store, cfg, tokens) - fc.ground_thickness) <= 1);
  const Mat<float> colors = decode_query_color(store, cfg, tokens, data[0].surface.points);
  const double rmse = std::sqrt((colors.rowwise() - Eigen::RowVector3f(0.8f, 0.3f, 0.2f)).squaredNorm() /
                                static_cast<double>(colors.size()));
  CHECK(rmse < 0.05);
}
