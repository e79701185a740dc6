#include "nuiworld/world.hpp"

#include <cmath>
#include <numeric>

namespace nuiworld::world {

using nn::Graph;
using nn::ParameterStore;
using nn::Tape;

void WorldConfig::validate() const {
  require(V >= 1 && c >= 1, ErrorKind::InvalidArgument, "world: vector set size must be positive");
  require(width >= 2 && width % 2 == 0 && heads >= 1 && width % heads == 0, ErrorKind::InvalidArgument,
          "world: width must be even and divisible by the head count");
  require(width % 4 == 0, ErrorKind::InvalidArgument, "world: width must be a multiple of 4 for the 2-d position code");
  require(depth >= 1, ErrorKind::InvalidArgument, "world: depth must be at least 1");
  require(sketch_dim >= 1 && time_freq >= 2 && time_freq % 2 == 0, ErrorKind::InvalidArgument,
          "world: bad embedding sizes");
  require(t_std > 0.0, ErrorKind::InvalidArgument, "world: timestep std must be positive");
  require(drop_prob >= 0.0 && drop_prob <= 1.0, ErrorKind::InvalidArgument, "world: drop probability outside [0, 1]");
}

nlohmann::json WorldConfig::to_json() const {
  return {{"V", V},
          {"c", c},
          {"width", width},
          {"depth", depth},
          {"heads", heads},
          {"time_freq", time_freq},
          {"sketch_dim", sketch_dim},
          {"t_mean", t_mean},
          {"t_std", t_std},
          {"drop_prob", drop_prob}};
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
  WorldConfig w;
  w.V = j.value("V", w.V);
  w.c = j.value("c", w.c);
  w.width = j.value("width", w.width);
  w.depth = j.value("depth", w.depth);
  w.heads = j.value("heads", w.heads);
  w.time_freq = j.value("time_freq", w.time_freq);
  w.sketch_dim = j.value("sketch_dim", w.sketch_dim);
  w.t_mean = j.value("t_mean", w.t_mean);
  w.t_std = j.value("t_std", w.t_std);
  w.drop_prob = j.value("drop_prob", w.drop_prob);
  w.validate();
  return w;
}

PosSizeEmbedding pos_size_embed(const forge::LayoutSpec& layout, int dim) {
  require(dim >= 4 && dim % 4 == 0, ErrorKind::InvalidArgument, "pos_size_embed: dim must be a multiple of 4");
  require(layout.rows >= 1 && layout.cols >= 1, ErrorKind::InvalidArgument, "pos_size_embed: empty layout");
  PosSizeEmbedding e;
  e.pos.resize(layout.area(), dim);
  const int half = dim / 2;
  for (int r = 0; r < layout.rows; ++r) {
    const Mat<float> re = nn::sinusoidal_embed<float>(r, half);
    for (int c = 0; c < layout.cols; ++c) {
      e.pos.row(r * layout.cols + c).head(half) = re.row(0);
      e.pos.row(r * layout.cols + c).tail(half) = nn::sinusoidal_embed<float>(c, half).row(0);
    }
  }
  e.size = nn::sinusoidal_embed<float>(layout.area(), dim);
  return e;
}

template <class T>
void WorldNet<T>::init_params(ParameterStore<T>& store, const WorldConfig& cfg, uint64_t seed) {
  cfg.validate();
  nn::add_linear(store, "world.in", cfg.channels(), cfg.width, seed);
  flow::add_time_embedder(store, "world.time", cfg.time_freq, cfg.width, seed);
  store.create("world.null", 1, cfg.sketch_dim, nn::Init::Normal, seed, 0.02);
  for (int i = 0; i < cfg.depth; ++i)
    nn::add_modulated_block(store, "world.blk" + std::to_string(i), cfg.width, cfg.width, cfg.sketch_dim, seed);
  flow::add_output_head(store, "world.head", cfg.width, cfg.width, cfg.channels(), seed);
}

template <class T>
Var WorldNet<T>::forward(Graph<T>& g, const Mat<T>& xt, const forge::LayoutSpec& layout, const Mat<T>* sketch,
                         double t, ForwardStats* stats) const {
  auto& tape = g.tape;
  require(t >= 0.0 && t <= 1.0, ErrorKind::InvalidArgument, "world forward: t outside [0, 1]");
  require(xt.rows() == layout.area(), ErrorKind::InvalidArgument, "world forward: token count does not match layout");
  require(xt.cols() == cfg_.channels(), ErrorKind::InvalidArgument,
          "world forward: latent channels " + std::to_string(xt.cols()) + " do not match V*c = " +
              std::to_string(cfg_.channels()));
  if (sketch)
    require(sketch->cols() == cfg_.sketch_dim && sketch->rows() >= 1, ErrorKind::InvalidArgument,
            "world forward: sketch token width mismatch");
  const PosSizeEmbedding emb = pos_size_embed(layout, cfg_.width);
  Mat<T> add = emb.pos.template cast<T>();
  add.rowwise() += emb.size.row(0).template cast<T>();
  Var x = tape.add(nn::linear(g, "world.in", tape.constant(xt)), tape.constant(std::move(add)));
  const Var cond = flow::time_embedding(g, "world.time", {t}, cfg_.time_freq, 1);
  const Var ctx = sketch ? tape.constant(*sketch) : g.p("world.null");
  for (int i = 0; i < cfg_.depth; ++i) x = nn::modulated_block(g, "world.blk" + std::to_string(i), x, cond, cfg_.heads, ctx);
  if (stats) {
    stats->tokens = tape.rows(x);
    stats->width = tape.cols(x);
    stats->peak_attention = tape.peak_attention_elements();
  }
  return flow::output_head(g, "world.head", x, cond);
}

template class WorldNet<float>;
template class WorldNet<double>;

ConditioningDraw draw_conditioning(const WorldConfig& cfg, size_t variants, uint64_t seed) {
  require(variants >= 1, ErrorKind::EmptyInput, "no sketches for this scene");
  Rng rng(seed);
  ConditioningDraw d;
  d.variant = static_cast<int>(rng.below(variants));
  d.dropped = rng.bernoulli(cfg.drop_prob);
  d.t = flow::sample_timestep(cfg.t_mean, cfg.t_std, rng.next_u64());
  return d;
}

template <class T>
Var world_loss(Graph<T>& g, const WorldNet<T>& net, const WorldSample& sample, uint64_t seed, ConditioningDraw* draw) {
  const auto& lat = sample.latents;
  const int d = lat.channels();
  const ConditioningDraw cd = draw_conditioning(net.config(), sample.sketches.size(), derive_seed(seed, 0));
  const MatF eps = flow::gaussian(lat.token_count(), d, derive_seed(seed, 1));
  const MatF xt = flow::flow_interpolate(lat.tokens, eps, cd.t);
  Mat<T> sk;
  if (!cd.dropped) sk = sample.sketches[static_cast<size_t>(cd.variant)].tokens.template cast<T>();
  const Var pred = net.forward(g, xt.template cast<T>(), lat.layout, cd.dropped ? nullptr : &sk, cd.t);
  if (draw) *draw = cd;
  return g.tape.mse(pred, (eps - lat.tokens).template cast<T>());
}

template Var world_loss<float>(Graph<float>&, const WorldNet<float>&, const WorldSample&, uint64_t,
                               ConditioningDraw*);
template Var world_loss<double>(Graph<double>&, const WorldNet<double>&, const WorldSample&, uint64_t,
                                ConditioningDraw*);

namespace {

std::vector<size_t> choose(size_t pool, size_t n, Rng& rng) {
  std::vector<size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), size_t{0});
  const size_t k = std::min(pool, n);
  for (size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(pool - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

WorldTrainLog train_world(ParameterStore<float>& store, const WorldConfig& cfg, const std::vector<WorldSample>& data,
                          const WorldTrainConfig& tc, const std::function<void(int, double)>& progress) {
  require(!data.empty(), ErrorKind::EmptyInput, "no training scenes");
  require(tc.steps >= 1 && tc.batch >= 1, ErrorKind::InvalidArgument, "steps and batch must be positive");
  for (const auto& s : data)
    require(s.latents.V == cfg.V && s.latents.c == cfg.c, ErrorKind::InvalidArgument,
            "training latents do not match the configured vector set shape");
  nn::AdamWConfig opt;
  opt.lr = tc.lr;
  opt.weight_decay = tc.weight_decay;
  opt.total_steps = tc.steps;
  opt.warmup_steps = tc.warmup;
  opt.clip_norm = tc.clip_norm;
  WorldNet<float> net(cfg, store);
  WorldTrainLog log;
  Tape<float> tape;
  for (int step = 0; step < tc.steps; ++step) {
    Rng rng(derive_seed(tc.seed, 0x3011D, static_cast<uint64_t>(step)));
    const auto picks = choose(data.size(), static_cast<size_t>(tc.batch), rng);
    tape.clear();
    Graph<float> g{tape, store};
    std::vector<Var> losses;
    for (size_t i = 0; i < picks.size(); ++i) {
      ConditioningDraw d;
      losses.push_back(world_loss(g, net, data[picks[i]], derive_seed(tc.seed, static_cast<uint64_t>(step), i), &d));
      log.draws.push_back(d);
    }
    Var loss = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) loss = tape.add(loss, losses[i]);
    loss = tape.scale(loss, 1.0f / static_cast<float>(losses.size()));
    store.zero_grad();
    tape.backward(loss);
    nn::adamw_step(store, opt);
    log.loss.push_back(tape.scalar(loss));
    if (progress) progress(step, log.loss.back());
  }
  return log;
}

Mat<float> cfg_velocity(const Mat<float>& v_cond, const Mat<float>& v_uncond, double g) {
  require(v_cond.rows() == v_uncond.rows() && v_cond.cols() == v_uncond.cols(), ErrorKind::InvalidArgument,
          "cfg_velocity: shape mismatch");
  return v_uncond + static_cast<float>(g) * (v_cond - v_uncond);
}

SceneLatentGrid generate_world(const ParameterStore<float>& store, const WorldConfig& cfg,
                               const sketch::SketchEncoding* sketch, const forge::LayoutSpec& layout,
                               const SampleOptions& opt, ForwardStats* stats) {
  require(opt.steps >= 1, ErrorKind::InvalidArgument, "generate_world: steps must be positive");
  require(layout.rows >= 1 && layout.cols >= 1, ErrorKind::InvalidArgument, "generate_world: empty layout");
  WorldNet<float> net(cfg, const_cast<ParameterStore<float>&>(store));
  SceneLatentGrid out(layout, cfg.V, cfg.c, Provenance::WorldModelGenerated);
  MatF x = flow::gaussian(layout.area(), cfg.channels(), opt.seed);
  const bool need_cond = sketch && opt.guidance != 0.0;
  const bool need_uncond = !sketch || opt.guidance != 1.0;
  auto velocity = [&](const Mat<float>* sk, double t) {
    Tape<float> tape;
    auto g = nn::frozen_graph(tape, store);
    ForwardStats fs;
    const MatF v = tape.value(net.forward(g, x, layout, sk, t, &fs));
    if (stats) {
      stats->tokens = fs.tokens;
      stats->width = fs.width;
      stats->peak_attention = std::max(stats->peak_attention, fs.peak_attention);
    }
    return v;
  };
  const double dt = 1.0 / opt.steps;
  for (int k = 0; k < opt.steps; ++k) {
    const double t = 1.0 - k * dt;
    MatF v;
    if (need_cond && need_uncond)
      v = cfg_velocity(velocity(&sketch->tokens, t), velocity(nullptr, t), opt.guidance);
    else if (need_cond)
      v = velocity(&sketch->tokens, t);
    else
      v = velocity(nullptr, t);
    x -= static_cast<float>(dt) * v;
  }
  out.tokens = std::move(x);
  return out;
}

// --- size predictor ---------------------------------------------------------

SizeConfig SizeConfig::from_json(const nlohmann::json& j) {
  SizeConfig s;
  s.sketch_dim = j.value("sketch_dim", s.sketch_dim);
  s.hidden = j.value("hidden", s.hidden);
  require(s.sketch_dim >= 1 && s.hidden >= 1, ErrorKind::InvalidArgument, "size predictor dims must be positive");
  return s;
}

void init_size_params(ParameterStore<float>& store, const SizeConfig& cfg, const std::vector<SizeSample>& data,
                      uint64_t seed) {
  require(!data.empty(), ErrorKind::EmptyInput, "no size training pairs");
  Mat<float> x(static_cast<Eigen::Index>(data.size()), cfg.sketch_dim);
  Eigen::RowVector2d mean_log = Eigen::RowVector2d::Zero();
  for (size_t i = 0; i < data.size(); ++i) {
    require(data[i].cls.rows() == 1 && data[i].cls.cols() == cfg.sketch_dim, ErrorKind::InvalidArgument,
            "size sample cls width mismatch");
    x.row(static_cast<Eigen::Index>(i)) = data[i].cls.row(0);
    mean_log += Eigen::RowVector2d(std::log(data[i].layout.rows), std::log(data[i].layout.cols));
  }
  mean_log /= static_cast<double>(data.size());
  const Mat<float> mu = x.colwise().mean();
  Mat<float> sd = ((x.rowwise() - mu.row(0)).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index i = 0; i < sd.size(); ++i)
    if (!(sd(0, i) > 1e-6f)) sd(0, i) = 1.0f;
  store.add("size.norm.mean", mu);
  store.add("size.norm.std", sd);
  nn::add_linear(store, "size.fc1", cfg.sketch_dim, cfg.hidden, seed);
  nn::add_linear(store, "size.fc2", cfg.hidden, cfg.hidden, seed);
  nn::add_linear(store, "size.out", cfg.hidden, 2, seed, true, nn::Init::Xavier, 0.1);
  store.get("size.out.b").value << static_cast<float>(mean_log(0)), static_cast<float>(mean_log(1));
}

bool size_model_present(const ParameterStore<float>& store) {
  return store.has("size.out.w") && store.has("size.norm.mean") && store.step > 0;
}

template <class T>
Var size_forward(Graph<T>& g, const Mat<T>& cls) {
  auto& t = g.tape;
  const Mat<T>& mu = g.store.get("size.norm.mean").value;
  const Mat<T>& sd = g.store.get("size.norm.std").value;
  require(cls.cols() == mu.cols(), ErrorKind::InvalidArgument, "size predictor: cls width mismatch");
  const Mat<T> x = ((cls.rowwise() - mu.row(0)).array().rowwise() / sd.row(0).array()).matrix();
  Var h = t.gelu(nn::linear(g, "size.fc1", t.constant(x)));
  h = t.gelu(nn::linear(g, "size.fc2", h));
  return nn::linear(g, "size.out", h);
}

template Var size_forward<float>(Graph<float>&, const Mat<float>&);
template Var size_forward<double>(Graph<double>&, const Mat<double>&);

namespace {

Mat<float> stack_cls(const std::vector<SizeSample>& data) {
  Mat<float> x(static_cast<Eigen::Index>(data.size()), data.front().cls.cols());
  for (size_t i = 0; i < data.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = data[i].cls.row(0);
  return x;
}

forge::LayoutSpec round_layout(float ln_r, float ln_c) {
  auto to_int = [](float v) {
    return static_cast<int>(std::lround(std::exp(std::clamp(static_cast<double>(v), -10.0, 10.0))));
  };
  forge::LayoutSpec l;
  l.rows = std::max(2, to_int(ln_r));
  l.cols = std::max(l.rows, to_int(ln_c));
  return l;
}

std::vector<forge::LayoutSpec> predict_all(const ParameterStore<float>& store, const Mat<float>& cls) {
  Tape<float> t;
  auto g = nn::frozen_graph(t, store);
  const Mat<float> out = t.value(size_forward(g, cls));
  std::vector<forge::LayoutSpec> l;
  for (Eigen::Index i = 0; i < out.rows(); ++i) l.push_back(round_layout(out(i, 0), out(i, 1)));
  return l;
}

}  // namespace

std::vector<double> train_size_predictor(ParameterStore<float>& store, const std::vector<SizeSample>& data,
                                         const SizeTrainConfig& tc) {
  require(!data.empty(), ErrorKind::EmptyInput, "no size training pairs");
  require(store.has("size.out.w"), ErrorKind::InvalidArgument, "size predictor parameters not initialized");
  const Mat<float> x = stack_cls(data);
  Mat<float> y(x.rows(), 2);
  for (size_t i = 0; i < data.size(); ++i)
    y.row(static_cast<Eigen::Index>(i)) << static_cast<float>(std::log(data[i].layout.rows)),
        static_cast<float>(std::log(data[i].layout.cols));
  nn::AdamWConfig opt;
  opt.lr = tc.lr;
  opt.total_steps = tc.steps;
  opt.warmup_steps = tc.warmup;
  std::vector<double> losses;
  Tape<float> tape;
  for (int step = 0; step < tc.steps; ++step) {
    tape.clear();
    Graph<float> g{tape, store};
    const Var loss = tape.mse(size_forward(g, x), y);
    store.zero_grad();
    tape.backward(loss);
    nn::adamw_step(store, opt);
    losses.push_back(tape.scalar(loss));
  }
  return losses;
}

forge::LayoutSpec predict_size(const ParameterStore<float>& store, const Mat<float>& cls) {
  require(size_model_present(store), ErrorKind::UnavailableModel, "size predictor has not been trained");
  require(cls.rows() == 1, ErrorKind::InvalidArgument, "predict_size expects one cls row");
  return predict_all(store, cls).front();
}

forge::LayoutSpec resolve_layout(const std::optional<forge::LayoutSpec>& layout, const ParameterStore<float>* size_store,
                                 const sketch::SketchEncoding& sketch) {
  if (layout) return *layout;
  require(size_store != nullptr, ErrorKind::UnavailableModel, "layout prediction requested without a size predictor");
  return predict_size(*size_store, sketch.cls);
}

double size_error(const ParameterStore<float>& store, const std::vector<SizeSample>& data) {
  require(!data.empty(), ErrorKind::EmptyInput, "no size pairs to evaluate");
  const auto pred = predict_all(store, stack_cls(data));
  double err = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    const double dr = std::log(pred[i].rows) - std::log(data[i].layout.rows);
    const double dc = std::log(pred[i].cols) - std::log(data[i].layout.cols);
    err += 0.5 * (dr * dr + dc * dc);
  }
  return err / static_cast<double>(data.size());
}

}  // namespace nuiworld::world
