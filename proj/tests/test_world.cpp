#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "nuiworld/nn/gradcheck.hpp"
#include "nuiworld/vae.hpp"
#include "nuiworld/world.hpp"

using namespace nuiworld;
using namespace nuiworld::world;
using nn::ParameterStore;
using nn::Tape;

namespace {

WorldConfig tiny_world() {
  WorldConfig w;
  w.V = 2;
  w.c = 4;
  w.width = 16;
  w.depth = 2;
  w.heads = 2;
  w.time_freq = 8;
  w.sketch_dim = 8;
  return w;
}

sketch::SketchEncoding random_sketch(int tokens, int dim, uint64_t seed) {
  sketch::SketchEncoding e;
  e.tokens = flow::gaussian(tokens, dim, seed);
  e.cls = e.tokens.colwise().mean();
  return e;
}

WorldSample random_scene(forge::LayoutSpec l, const WorldConfig& cfg, uint64_t seed) {
  WorldSample s;
  s.latents = SceneLatentGrid(l, cfg.V, cfg.c, Provenance::NuiSceneSynthesized);
  s.latents.tokens = flow::gaussian(l.area(), cfg.channels(), seed);
  for (int i = 0; i < 4; ++i) s.sketches.push_back(random_sketch(6, cfg.sketch_dim, derive_seed(seed, static_cast<uint64_t>(i))));
  return s;
}

ParameterStore<float> random_world(const WorldConfig& cfg, uint64_t seed) {
  ParameterStore<double> d;
  WorldNet<double>::init_params(d, cfg, seed);
  nn::randomize(d, seed + 1, 0.3);
  return d.cast<float>();
}

}  // namespace

TEST_CASE("position and size embeddings") {
  const auto e = pos_size_embed({3, 5}, 16);
  CHECK(e.pos.rows() == 15);
  CHECK(e.pos.row(0).head(8) == e.pos.row(1).head(8));
  CHECK(e.pos.row(0).tail(8) != e.pos.row(1).tail(8));
  const auto a = pos_size_embed({15, 16}, 16), b = pos_size_embed({16, 15}, 16);
  CHECK(a.size == b.size);
  CHECK(a.pos != b.pos);
  const auto big = pos_size_embed({7, 9}, 16);
  CHECK(big.pos.row(2 * 9 + 4) == e.pos.row(2 * 5 + 4));
  CHECK(big.size != e.size);
  CHECK_THROWS_AS(pos_size_embed({2, 2}, 10), Error);
}

TEST_CASE("world forward contracts") {
  const WorldConfig cfg = tiny_world();
  const ParameterStore<float> store = random_world(cfg, 1);
  WorldNet<float> net(cfg, const_cast<ParameterStore<float>&>(store));
  const auto sk = random_sketch(6, cfg.sketch_dim, 2);
  for (forge::LayoutSpec l : {forge::LayoutSpec{2, 2}, forge::LayoutSpec{15, 15}, forge::LayoutSpec{18, 51}}) {
    Tape<float> t;
    auto g = nn::frozen_graph(t, store);
    ForwardStats st;
    const MatF x = flow::gaussian(l.area(), cfg.channels(), 3);
    const Var v = net.forward(g, x, l, &sk.tokens, 0.4, &st);
    CHECK(t.rows(v) == l.area());
    CHECK(t.cols(v) == cfg.channels());
    CHECK(st.tokens == l.area());
    CHECK(st.peak_attention == static_cast<int64_t>(cfg.heads) * l.area() * std::max(l.area(), 6));
  }
  SUBCASE("null conditioning is deterministic") {
    const MatF x = flow::gaussian(6, cfg.channels(), 4);
    Tape<float> t1, t2;
    auto g1 = nn::frozen_graph(t1, store);
    auto g2 = nn::frozen_graph(t2, store);
    CHECK(t1.value(net.forward(g1, x, {2, 3}, nullptr, 0.5)) == t2.value(net.forward(g2, x, {2, 3}, nullptr, 0.5)));
  }
  SUBCASE("channel mismatch") {
    Tape<float> t;
    auto g = nn::frozen_graph(t, store);
    CHECK_THROWS_AS(net.forward(g, flow::gaussian(4, 6, 1), {2, 2}, nullptr, 0.5), Error);
    CHECK_THROWS_AS(net.forward(g, flow::gaussian(5, 8, 1), {2, 2}, nullptr, 0.5), Error);
  }
}

TEST_CASE("world model gradients match finite differences") {
  const WorldConfig cfg = tiny_world();
  const std::vector<forge::LayoutSpec> layouts = {{2, 2}, {2, 3}, {3, 2}};
  for (size_t shape = 0; shape < layouts.size(); ++shape) {
    ParameterStore<double> store;
    WorldNet<double>::init_params(store, cfg, 10);
    nn::randomize(store, 11 + shape, 0.3);
    const WorldSample sample = random_scene(layouts[shape], cfg, 12 + shape);
    for (uint64_t seed : {13ULL, 14ULL, 21ULL}) {
      ConditioningDraw d;
      auto loss = [&](Tape<double>& t, ParameterStore<double>& s, const std::vector<Var>&) {
        nn::Graph<double> g{t, s};
        WorldNet<double> net(cfg, s);
        return world_loss(g, net, sample, seed, &d);
      };
      const auto res = nn::grad_check(loss, store, {}, 15, 6);
      INFO("layout " << layouts[shape].rows << "x" << layouts[shape].cols << " dropped " << d.dropped << " worst "
                     << res.worst);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("conditioning draws") {
  const WorldConfig cfg = tiny_world();
  int dropped = 0;
  std::array<int, 4> counts{};
  for (uint64_t i = 0; i < 10000; ++i) {
    const auto d = draw_conditioning(cfg, 4, derive_seed(99, i));
    dropped += d.dropped;
    ++counts[static_cast<size_t>(d.variant)];
    CHECK((d.t > 0.0 && d.t < 1.0));
  }
  CHECK(dropped / 1e4 >= 0.18);
  CHECK(dropped / 1e4 <= 0.22);
  for (int c : counts) CHECK(std::abs(c / 1e4 - 0.25) <= 0.02);
}

TEST_CASE("world loss at init matches the predict-zero baseline") {
  WorldConfig cfg = tiny_world();
  cfg.width = 32;
  ParameterStore<float> store;
  WorldNet<float>::init_params(store, cfg, 5);
  WorldNet<float> net(cfg, store);
  double loss = 0.0, base = 0.0;
  for (uint64_t i = 0; i < 16; ++i) {
    const WorldSample s = random_scene({3, 4}, cfg, 100 + i);
    Tape<float> t;
    nn::Graph<float> g{t, store};
    loss += t.scalar(world_loss(g, net, s, 200 + i));
    const MatF eps = flow::gaussian(12, cfg.channels(), derive_seed(200 + i, 1));
    base += (eps - s.latents.tokens).array().square().mean();
  }
  CHECK(std::abs(loss - base) <= 0.2 * base);
}

TEST_CASE("classifier-free guidance") {
  const MatF vc = MatF::Ones(2, 3), vu = MatF::Zero(2, 3);
  CHECK(cfg_velocity(vc, vu, 1.0) == vc);
  CHECK(cfg_velocity(vc, vu, 0.0) == vu);
  CHECK(cfg_velocity(vc, vu, 2.0) == MatF::Constant(2, 3, 2.0f));
  CHECK_THROWS_AS(cfg_velocity(vc, MatF::Zero(3, 2), 1.0), Error);
}

TEST_CASE("world generation") {
  const WorldConfig cfg = tiny_world();
  const ParameterStore<float> store = random_world(cfg, 30);
  const auto sa = random_sketch(6, cfg.sketch_dim, 31), sb = random_sketch(6, cfg.sketch_dim, 32);
  SampleOptions opt;
  opt.steps = 3;
  opt.seed = 33;
  SUBCASE("token counts follow the layout") {
    for (forge::LayoutSpec l : {forge::LayoutSpec{15, 15}, forge::LayoutSpec{18, 51}}) {
      ForwardStats st;
      SampleOptions o = opt;
      o.steps = 1;
      const auto out = generate_world(store, cfg, &sa, l, o, &st);
      CHECK(out.token_count() == l.rows * l.cols);
      CHECK(st.tokens == l.rows * l.cols);
      CHECK(out.provenance == Provenance::WorldModelGenerated);
    }
  }
  SUBCASE("deterministic") {
    CHECK(generate_world(store, cfg, &sa, {3, 4}, opt).tokens == generate_world(store, cfg, &sa, {3, 4}, opt).tokens);
  }
  SUBCASE("g = 0 ignores the sketch") {
    opt.guidance = 0.0;
    CHECK(generate_world(store, cfg, &sa, {3, 4}, opt).tokens == generate_world(store, cfg, &sb, {3, 4}, opt).tokens);
  }
  SUBCASE("g = 1 is the plain conditional sampler") {
    opt.guidance = 1.0;
    const auto out = generate_world(store, cfg, &sa, {2, 3}, opt);
    WorldNet<float> net(cfg, const_cast<ParameterStore<float>&>(store));
    MatF x = flow::gaussian(6, cfg.channels(), opt.seed);
    const double dt = 1.0 / opt.steps;
    for (int k = 0; k < opt.steps; ++k) {
      Tape<float> t;
      auto g = nn::frozen_graph(t, store);
      x -= static_cast<float>(dt) * t.value(net.forward(g, x, {2, 3}, &sa.tokens, 1.0 - k * dt));
    }
    CHECK(out.tokens == x);
    opt.guidance = 3.0;
    CHECK(generate_world(store, cfg, &sa, {2, 3}, opt).tokens != x);
  }
  SUBCASE("variable layouts run on one parameter set") {
    SampleOptions o = opt;
    o.steps = 1;
    for (forge::LayoutSpec l : {forge::LayoutSpec{2, 2}, forge::LayoutSpec{2, 60}, forge::LayoutSpec{8, 20},
                                forge::LayoutSpec{37, 5}})
      CHECK(generate_world(store, cfg, &sa, l, o).tokens.allFinite());
  }
}

TEST_CASE("size predictor") {
  std::vector<SizeSample> data;
  const std::vector<forge::LayoutSpec> layouts = {{2, 2}, {2, 4}, {3, 3}, {3, 6}, {4, 5}, {2, 7}, {5, 5}, {4, 9}};
  for (size_t i = 0; i < layouts.size(); ++i) data.push_back({flow::gaussian(1, 16, 40 + i), layouts[i]});
  SizeConfig sc;
  sc.sketch_dim = 16;
  sc.hidden = 32;
  ParameterStore<float> store;
  init_size_params(store, sc, data, 41);
  SUBCASE("untrained head is unavailable") {
    CHECK_THROWS_AS(predict_size(store, data[0].cls), Error);
    try {
      predict_size(store, data[0].cls);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnavailableModel);
    }
    CHECK_THROWS_AS(resolve_layout(std::nullopt, nullptr, sketch::SketchEncoding{}), Error);
    CHECK(resolve_layout(forge::LayoutSpec{3, 7}, nullptr, sketch::SketchEncoding{}) == forge::LayoutSpec{3, 7});
  }
  SUBCASE("overfit, clamp and checkpoint round trip") {
    const double before = size_error(store, data);
    SizeTrainConfig tc;
    const auto losses = train_size_predictor(store, data, tc);
    CHECK(losses.back() < losses.front());
    CHECK(size_error(store, data) < before);
    for (const auto& s : data) CHECK(predict_size(store, s.cls) == s.layout);
    for (uint64_t i = 0; i < 50; ++i) {
      const auto l = predict_size(store, flow::gaussian(1, 16, 1000 + i) * 5.0f);
      CHECK(l.rows >= 2);
      CHECK(l.cols >= l.rows);
    }
    const auto path = std::filesystem::temp_directory_path() / "nuiworld_size.ckpt";
    nn::save_checkpoint(store, path, sc.to_json());
    const auto back = nn::load_checkpoint(path);
    for (const auto& s : data) {
      Tape<float> t1, t2;
      auto g1 = nn::frozen_graph(t1, store);
      auto g2 = nn::frozen_graph(t2, back);
      CHECK(t1.value(size_forward(g1, s.cls)) == t2.value(size_forward(g2, s.cls)));
    }
    std::filesystem::remove(path);
  }
}

TEST_CASE("per-chunk decoding ignores the surrounding layout") {
  vae::VaeConfig vc;
  vc.depth = 1;
  vc.upsample_layers = 1;
  ParameterStore<float> store;
  vae::ChunkVae<float>::init_params(store, vc, 50);
  store.get("occ.out.w").value.setZero();
  store.get("occ.out.w").value(0, 0) = 3.0f;
  const MatF z = flow::gaussian(vc.V, vc.c, 51);
  SceneLatentGrid small({2, 2}, vc.V, vc.c), big({4, 12}, vc.V, vc.c);
  small.tokens = flow::gaussian(4, vc.V * vc.c, 52);
  big.tokens = flow::gaussian(48, vc.V * vc.c, 53);
  small.set_chunk(1, 0, z);
  big.set_chunk(3, 7, z);
  const auto a = vae::decode_chunk_mesh(store, vc, small.chunk(1, 0));
  const auto b = vae::decode_chunk_mesh(store, vc, big.chunk(3, 7));
  CHECK(!a.empty());
  CHECK(a == b);
}
