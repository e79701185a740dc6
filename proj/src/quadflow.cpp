#include "nuiworld/quadflow.hpp"

#include <cmath>
#include <numeric>

namespace nuiworld::quad {

using nn::Graph;
using nn::ParameterStore;
using nn::Tape;

std::array<bool, 4> mask_bits(MaskConfig m) {
  switch (m) {
    case MaskConfig::All: return {true, true, true, true};
    case MaskConfig::RightColumn: return {false, true, false, true};
    case MaskConfig::BottomRow: return {false, false, true, true};
    case MaskConfig::BottomRight: return {false, false, false, true};
  }
  fail(ErrorKind::InvalidArgument, "unknown mask configuration");
}

std::string_view to_string(MaskConfig m) {
  switch (m) {
    case MaskConfig::All: return "all";
    case MaskConfig::RightColumn: return "right-column";
    case MaskConfig::BottomRow: return "bottom-row";
    case MaskConfig::BottomRight: return "bottom-right";
  }
  return "?";
}

namespace {

constexpr std::array<std::array<int, 2>, 4> kSlotOffset = {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};

}  // namespace

std::vector<QuadLatent> extract_quads(const SceneLatentGrid& grid) {
  grid.validate();
  std::vector<QuadLatent> out;
  for (int r = 0; r + 1 < grid.layout.rows; ++r)
    for (int c = 0; c + 1 < grid.layout.cols; ++c) {
      QuadLatent q;
      q.row = r;
      q.col = c;
      q.tokens.resize(4, grid.channels());
      for (int s = 0; s < 4; ++s)
        q.tokens.row(s) = grid.tokens.row((r + kSlotOffset[s][0]) * grid.layout.cols + c + kSlotOffset[s][1]);
      out.push_back(std::move(q));
    }
  return out;
}

void QuadConfig::validate() const {
  require(V >= 1 && c >= 1, ErrorKind::InvalidArgument, "quad: vector set size must be positive");
  require(width >= 2 && heads >= 1 && width % heads == 0, ErrorKind::InvalidArgument,
          "quad: width must be divisible by the head count");
  require(depth >= 1, ErrorKind::InvalidArgument, "quad: depth must be at least 1");
  require(time_freq >= 2 && time_freq % 2 == 0, ErrorKind::InvalidArgument, "quad: time embedding must be even");
  require(t_std > 0.0, ErrorKind::InvalidArgument, "quad: timestep std must be positive");
}

nlohmann::json QuadConfig::to_json() const {
  return {{"V", V},         {"c", c},           {"width", width},   {"depth", depth},
          {"heads", heads}, {"time_freq", time_freq}, {"t_mean", t_mean}, {"t_std", t_std}};
}

QuadConfig QuadConfig::from_json(const nlohmann::json& j) {
  QuadConfig q;
  q.V = j.value("V", q.V);
  q.c = j.value("c", q.c);
  q.width = j.value("width", q.width);
  q.depth = j.value("depth", q.depth);
  q.heads = j.value("heads", q.heads);
  q.time_freq = j.value("time_freq", q.time_freq);
  q.t_mean = j.value("t_mean", q.t_mean);
  q.t_std = j.value("t_std", q.t_std);
  q.validate();
  return q;
}

template <class T>
void QuadNet<T>::init_params(ParameterStore<T>& store, const QuadConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int d = cfg.channels();
  nn::add_linear(store, "quad.in", 2 * d + 1, cfg.width, seed);
  store.create("quad.pos", 4, cfg.width, nn::Init::Normal, seed, 0.02);
  flow::add_time_embedder(store, "quad.time", cfg.time_freq, cfg.width, seed);
  for (int i = 0; i < cfg.depth; ++i)
    nn::add_modulated_block(store, "quad.blk" + std::to_string(i), cfg.width, cfg.width, 0, seed);
  flow::add_output_head(store, "quad.head", cfg.width, cfg.width, d, seed);
}

template <class T>
Var QuadNet<T>::forward(Graph<T>& g, const Mat<T>& inputs, const std::vector<double>& ts) const {
  auto& t = g.tape;
  const auto b = static_cast<Eigen::Index>(ts.size());
  require(b >= 1 && inputs.rows() == 4 * b && inputs.cols() == 2 * cfg_.channels() + 1, ErrorKind::InvalidArgument,
          "quad forward: input shape mismatch");
  Var x = nn::linear(g, "quad.in", t.constant(inputs));
  const Var pos = g.p("quad.pos");
  x = t.add(x, b == 1 ? pos : t.concat_rows(std::vector<Var>(static_cast<size_t>(b), pos)));
  const Var cond = flow::time_embedding(g, "quad.time", ts, cfg_.time_freq, 4);
  for (int i = 0; i < cfg_.depth; ++i)
    x = nn::modulated_block(g, "quad.blk" + std::to_string(i), x, cond, cfg_.heads, Var{}, 4);
  return flow::output_head(g, "quad.head", x, cond);
}

template class QuadNet<float>;
template class QuadNet<double>;

template <class T>
Mat<T> quad_inputs(const MatF& x, const std::array<bool, 4>& mask) {
  require(x.rows() == 4, ErrorKind::InvalidArgument, "quad_inputs: expected four chunk rows");
  const auto d = x.cols();
  Mat<T> in = Mat<T>::Zero(4, 2 * d + 1);
  for (int s = 0; s < 4; ++s) {
    in.row(s).head(d) = x.row(s).template cast<T>();
    if (!mask[s]) {
      in.row(s).segment(d, d) = x.row(s).template cast<T>();
      in(s, 2 * d) = T(1);
    }
  }
  return in;
}

namespace {

template <class T>
struct FlowBatch {
  Mat<T> inputs;
  MatF target;  // eps - V0 on every row
  std::vector<double> ts;
};

template <class T>
FlowBatch<T> make_batch(const QuadConfig& cfg, const std::vector<const QuadLatent*>& batch, MaskConfig mask,
                        uint64_t seed) {
  require(!batch.empty(), ErrorKind::EmptyInput, "empty quad batch");
  const int d = cfg.channels();
  const auto bits = mask_bits(mask);
  const auto n = static_cast<Eigen::Index>(batch.size());
  FlowBatch<T> fb;
  fb.inputs.resize(4 * n, 2 * d + 1);
  fb.target.resize(4 * n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const QuadLatent& q = *batch[static_cast<size_t>(i)];
    require(q.tokens.rows() == 4 && q.tokens.cols() == d, ErrorKind::InvalidArgument, "quad latent shape mismatch");
    const uint64_t s = derive_seed(seed, static_cast<uint64_t>(i));
    const double t = flow::sample_timestep(cfg.t_mean, cfg.t_std, derive_seed(s, 1));
    const MatF eps = flow::gaussian(4, d, derive_seed(s, 2));
    MatF x = flow::flow_interpolate(q.tokens, eps, t);
    for (int r = 0; r < 4; ++r)
      if (!bits[r]) x.row(r) = q.tokens.row(r);
    fb.inputs.middleRows(4 * i, 4) = quad_inputs<T>(x, bits);
    fb.target.middleRows(4 * i, 4) = eps - q.tokens;
    fb.ts.push_back(t);
  }
  return fb;
}

template <class T>
Mat<T> row_weights(Eigen::Index rows, Eigen::Index cols, const std::array<bool, 4>& mask) {
  Mat<T> w = Mat<T>::Zero(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    if (mask[static_cast<size_t>(r % 4)]) w.row(r).setOnes();
  return w;
}

std::vector<size_t> choose(size_t pool, size_t n, Rng& rng) {
  std::vector<size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), size_t{0});
  const size_t k = std::min(pool, n);
  for (size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(pool - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

template <class T>
Var masked_velocity_mse(Tape<T>& t, Var pred, const MatF& target, const std::array<bool, 4>& mask) {
  require(t.rows(pred) == target.rows() && t.cols(pred) == target.cols() && target.rows() % 4 == 0,
          ErrorKind::InvalidArgument, "masked_velocity_mse: shape mismatch");
  const Mat<T> w = row_weights<T>(target.rows(), target.cols(), mask);
  require(w.sum() > 0, ErrorKind::InvalidArgument, "masked_velocity_mse: nothing to generate");
  const Var diff = t.sub(pred, t.constant(target.template cast<T>()));
  return t.scale(t.sum(t.mul_const(t.square(diff), w)), T(1) / w.sum());
}

template <class T>
Var quad_loss(Graph<T>& g, const QuadNet<T>& net, const QuadConfig& cfg, const std::vector<const QuadLatent*>& batch,
              MaskConfig mask, uint64_t seed) {
  const auto fb = make_batch<T>(cfg, batch, mask, seed);
  return masked_velocity_mse(g.tape, net.forward(g, fb.inputs, fb.ts), fb.target, mask_bits(mask));
}

template Mat<float> quad_inputs<float>(const MatF&, const std::array<bool, 4>&);
template Mat<double> quad_inputs<double>(const MatF&, const std::array<bool, 4>&);
template Var masked_velocity_mse<float>(Tape<float>&, Var, const MatF&, const std::array<bool, 4>&);
template Var masked_velocity_mse<double>(Tape<double>&, Var, const MatF&, const std::array<bool, 4>&);
template Var quad_loss<float>(Graph<float>&, const QuadNet<float>&, const QuadConfig&,
                              const std::vector<const QuadLatent*>&, MaskConfig, uint64_t);
template Var quad_loss<double>(Graph<double>&, const QuadNet<double>&, const QuadConfig&,
                               const std::vector<const QuadLatent*>&, MaskConfig, uint64_t);

QuadTrainLog train_quad(ParameterStore<float>& store, const QuadConfig& cfg, const std::vector<QuadLatent>& data,
                        const QuadTrainConfig& tc, const std::function<void(int, double)>& progress) {
  require(!data.empty(), ErrorKind::EmptyInput, "no training quads");
  require(tc.steps >= 1 && tc.batch >= 1, ErrorKind::InvalidArgument, "steps and batch must be positive");
  nn::AdamWConfig opt;
  opt.lr = tc.lr;
  opt.weight_decay = tc.weight_decay;
  opt.total_steps = tc.steps;
  opt.warmup_steps = tc.warmup;
  opt.clip_norm = tc.clip_norm;
  QuadNet<float> net(cfg, store);
  QuadTrainLog log;
  Tape<float> tape;
  for (int step = 0; step < tc.steps; ++step) {
    Rng rng(derive_seed(tc.seed, 0x9A4D, static_cast<uint64_t>(step)));
    const MaskConfig mask = kMaskConfigs[rng.below(4)];
    std::vector<const QuadLatent*> b;
    for (size_t i : choose(data.size(), static_cast<size_t>(tc.batch), rng)) b.push_back(&data[i]);
    tape.clear();
    Graph<float> g{tape, store};
    const Var loss = quad_loss(g, net, cfg, b, mask, derive_seed(tc.seed, 0xF10, static_cast<uint64_t>(step)));
    store.zero_grad();
    tape.backward(loss);
    nn::adamw_step(store, opt);
    log.loss.push_back(tape.scalar(loss));
    log.masks.push_back(mask);
    if (progress) progress(step, log.loss.back());
  }
  return log;
}

VelocityField model_field(const ParameterStore<float>& store, const QuadConfig& cfg) {
  return [&store, cfg](const MatF& x, const std::array<bool, 4>& mask, double t) {
    Tape<float> tape;
    auto g = nn::frozen_graph(tape, store);
    QuadNet<float> net(cfg, g.store);
    return MatF(tape.value(net.forward(g, quad_inputs<float>(x, mask), {t})));
  };
}

VelocityEval evaluate_velocity(const ParameterStore<float>& store, const QuadConfig& cfg,
                               const std::vector<QuadLatent>& quads, uint64_t seed) {
  require(!quads.empty(), ErrorKind::EmptyInput, "no quads to evaluate");
  QuadNet<float> net(cfg, const_cast<ParameterStore<float>&>(store));
  double model = 0.0, zero = 0.0, count = 0.0;
  constexpr size_t kBlock = 64;
  for (size_t m = 0; m < kMaskConfigs.size(); ++m)
    for (size_t start = 0; start < quads.size(); start += kBlock) {
      std::vector<const QuadLatent*> b;
      for (size_t i = start; i < std::min(quads.size(), start + kBlock); ++i) b.push_back(&quads[i]);
      const auto fb = make_batch<float>(cfg, b, kMaskConfigs[m], derive_seed(seed, m, start));
      Tape<float> tape;
      auto g = nn::frozen_graph(tape, store);
      const MatF pred = tape.value(net.forward(g, fb.inputs, fb.ts));
      const MatF w = row_weights<float>(pred.rows(), pred.cols(), mask_bits(kMaskConfigs[m]));
      model += static_cast<double>((pred - fb.target).array().square().cwiseProduct(w.array()).sum());
      zero += static_cast<double>(fb.target.array().square().cwiseProduct(w.array()).sum());
      count += static_cast<double>(w.sum());
    }
  return {model / count, zero / count};
}

QuadLatent quad_sample(const VelocityField& field, const PartialQuad& cond, MaskConfig mask, int channels, int steps,
                       uint64_t seed) {
  require(steps >= 1, ErrorKind::InvalidArgument, "quad_sample: steps must be positive");
  const auto bits = mask_bits(mask);
  MatF x = flow::gaussian(4, channels, seed);
  for (int s = 0; s < 4; ++s) {
    if (bits[s]) {
      require(!cond[s].has_value(), ErrorKind::InvalidArgument,
              "quad_sample: slot " + std::to_string(s) + " is generated but was given as conditioning");
      continue;
    }
    require(cond[s].has_value(), ErrorKind::InvalidArgument,
            "quad_sample: missing conditioning chunk for slot " + std::to_string(s));
    require(cond[s]->rows() == 1 && cond[s]->cols() == channels, ErrorKind::InvalidArgument,
            "quad_sample: conditioning chunk shape mismatch");
    x.row(s) = cond[s]->row(0);
  }
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = 1.0 - k * dt;
    const MatF v = field(x, bits, t);
    require(v.rows() == 4 && v.cols() == channels, ErrorKind::InvalidArgument, "velocity field shape mismatch");
    for (int s = 0; s < 4; ++s)
      if (bits[s]) x.row(s) -= static_cast<float>(dt) * v.row(s);
  }
  QuadLatent out;
  out.tokens = std::move(x);
  return out;
}

SceneLatentGrid raster_scan_generate(const forge::LayoutSpec& layout, const VelocityField& field, int V, int c,
                                     int steps, uint64_t seed, std::vector<QuadCall>* trace) {
  require(layout.rows >= 2 && layout.cols >= 2, ErrorKind::InvalidArgument,
          "raster generation needs a layout of at least 2x2");
  SceneLatentGrid grid(layout, V, c, Provenance::NuiSceneSynthesized);
  const int d = V * c;
  for (int r = 0; r + 1 < layout.rows; ++r)
    for (int col = 0; col + 1 < layout.cols; ++col) {
      const MaskConfig mask = r == 0 && col == 0 ? MaskConfig::All
                              : r == 0           ? MaskConfig::RightColumn
                              : col == 0         ? MaskConfig::BottomRow
                                                 : MaskConfig::BottomRight;
      const auto bits = mask_bits(mask);
      PartialQuad cond;
      for (int s = 0; s < 4; ++s)
        if (!bits[s]) cond[s] = grid.tokens.row((r + kSlotOffset[s][0]) * layout.cols + col + kSlotOffset[s][1]);
      QuadLatent q = quad_sample(field, cond, mask, d, steps,
                                 derive_seed(seed, static_cast<uint64_t>(r), static_cast<uint64_t>(col)));
      for (int s = 0; s < 4; ++s)
        if (bits[s]) grid.tokens.row((r + kSlotOffset[s][0]) * layout.cols + col + kSlotOffset[s][1]) = q.tokens.row(s);
      if (trace) trace->push_back({r, col, mask});
    }
  return grid;
}

}  // namespace nuiworld::quad
