#include "nuiworld/vae.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace nuiworld::vae {

using nn::Graph;
using nn::ParameterStore;
using nn::Tape;

namespace {

// Inference evaluates queries in zero-padded blocks of this size.
constexpr Eigen::Index kQueryBlock = 512;

}  // namespace

void VaeConfig::validate() const {
  require(V >= 1 && c >= 1, ErrorKind::InvalidArgument, "vector set size must be positive");
  require(chunk_size >= 4 && height >= 2, ErrorKind::InvalidArgument, "chunk grid too small");
  require(width >= 2 && heads >= 1 && width % heads == 0, ErrorKind::InvalidArgument,
          "decoder width must be divisible by the head count");
  require(depth >= 1, ErrorKind::InvalidArgument, "decoder depth must be at least 1");
  require(upsample_layers >= 0 && upsample_layers <= depth, ErrorKind::InvalidArgument,
          "upsample layers exceed decoder depth");
  require(upsample_factor >= 1, ErrorKind::InvalidArgument, "upsample factor must be positive");
  require(fourier_bands >= 1, ErrorKind::InvalidArgument, "need at least one frequency band");
  require(n_pc >= 1 && n_occ >= 1 && n_col >= 1, ErrorKind::InvalidArgument, "sample counts must be positive");
  require(lambda_color >= 0 && lambda_height >= 0 && lambda_kl >= 0, ErrorKind::InvalidArgument,
          "loss weights must be non-negative");
}

nlohmann::json VaeConfig::to_json() const {
  return {{"V", V},
          {"c", c},
          {"chunk_size", chunk_size},
          {"height", height},
          {"width", width},
          {"heads", heads},
          {"depth", depth},
          {"upsample_factor", upsample_factor},
          {"upsample_layers", upsample_layers},
          {"fourier_bands", fourier_bands},
          {"n_pc", n_pc},
          {"n_occ", n_occ},
          {"n_col", n_col},
          {"lambda_color", lambda_color},
          {"lambda_height", lambda_height},
          {"lambda_kl", lambda_kl}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.V = j.value("V", c.V);
  c.c = j.value("c", c.c);
  c.chunk_size = j.value("chunk_size", c.chunk_size);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.depth = j.value("depth", c.depth);
  c.upsample_factor = j.value("upsample_factor", c.upsample_factor);
  c.upsample_layers = j.value("upsample_layers", c.upsample_layers);
  c.fourier_bands = j.value("fourier_bands", c.fourier_bands);
  c.n_pc = j.value("n_pc", c.n_pc);
  c.n_occ = j.value("n_occ", c.n_occ);
  c.n_col = j.value("n_col", c.n_col);
  c.lambda_color = j.value("lambda_color", c.lambda_color);
  c.lambda_height = j.value("lambda_height", c.lambda_height);
  c.lambda_kl = j.value("lambda_kl", c.lambda_kl);
  c.validate();
  return c;
}

template <class T>
Mat<T> point_matrix(const geo::ColoredPointCloud& cloud) {
  require(cloud.has_colors(), ErrorKind::InvalidArgument, "VAE input needs colored points");
  Mat<T> m(static_cast<Eigen::Index>(cloud.size()), 6);
  m.leftCols(3) = cloud.points.template cast<T>();
  m.rightCols(3) = cloud.colors.template cast<T>();
  return m;
}

template <class T>
void ChunkVae<T>::init_params(ParameterStore<T>& s, const VaeConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int h = cfg.width;
  const int qdim = 3 + 6 * cfg.fourier_bands;
  nn::add_linear(s, "enc.embed", qdim + 3, h, seed);
  s.create("enc.queries", cfg.V, h, nn::Init::Normal, seed, 1.0);
  nn::add_attention(s, "enc.xattn", h, h, seed);
  nn::add_ffn(s, "enc.ffn", h, 2 * h, seed);
  nn::add_linear(s, "enc.out", h, 2 * cfg.c, seed);
  nn::add_linear(s, "dec.in", cfg.c, h, seed);
  for (int i = 0; i < cfg.depth; ++i) nn::add_transformer_block(s, "dec.blk" + std::to_string(i), h, seed);
  if (cfg.upsample_layers > 0) nn::add_linear(s, "dec.up", h, h * cfg.upsample_factor, seed);
  for (const std::string head : {"occ", "col"}) {
    nn::add_linear(s, head + ".qembed", qdim, h, seed);
    nn::add_attention(s, head + ".xattn", h, h, seed);
    nn::add_ffn(s, head + ".ffn", h, 2 * h, seed);
  }
  nn::add_linear(s, "occ.out", h, 1, seed);
  nn::add_linear(s, "col.fc", h, h, seed);
  nn::add_linear(s, "col.out", h, 3, seed);
  nn::add_linear(s, "hgt.fc", h, h, seed);
  nn::add_linear(s, "hgt.out", h, 1, seed);
}

template <class T>
Mat<T> ChunkVae<T>::embed_coords(const Mat<T>& coords) const {
  require(coords.cols() == 3, ErrorKind::InvalidArgument, "query coordinates must have 3 columns");
  const int bands = cfg_.fourier_bands;
  const T e = static_cast<T>(cfg_.voxel_edge());
  const T center[3] = {T(1), T(0.5) * e * static_cast<T>(cfg_.height), T(1)};
  Mat<T> out(coords.rows(), 3 + 6 * bands);
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    for (int a = 0; a < 3; ++a) {
      const T p = coords(i, a) - center[a];
      out(i, a) = p;
      for (int b = 0; b < bands; ++b) {
        const T w = static_cast<T>(std::numbers::pi * std::ldexp(1.0, b));
        out(i, 3 + 2 * (a * bands + b)) = std::sin(w * p);
        out(i, 3 + 2 * (a * bands + b) + 1) = std::cos(w * p);
      }
    }
  return out;
}

template <class T>
typename ChunkVae<T>::Posterior ChunkVae<T>::encode(Graph<T>& g, const Mat<T>& points) const {
  require(points.cols() == 6, ErrorKind::InvalidArgument, "encoder input must be N x 6 (xyz rgb)");
  require(points.rows() >= 1, ErrorKind::InvalidArgument, "encoder input is empty");
  auto& t = g.tape;
  Mat<T> feats(points.rows(), 3 + 6 * cfg_.fourier_bands + 3);
  feats << embed_coords(points.leftCols(3)), points.rightCols(3);
  const Var kv = nn::linear(g, "enc.embed", t.constant(std::move(feats)));
  Var x = nn::cross_attention(g, "enc.xattn", g.p("enc.queries"), kv, cfg_.heads);
  x = t.add(x, nn::ffn_core(g, "enc.ffn", t.layer_norm(x)));
  const Var out = nn::linear(g, "enc.out", t.layer_norm(x));
  return {t.slice_cols(out, 0, cfg_.c), t.clamp(t.slice_cols(out, cfg_.c, cfg_.c), T(-30), T(20))};
}

template <class T>
Var ChunkVae<T>::sample(Graph<T>& g, const Posterior& post, std::optional<uint64_t> seed) const {
  if (!seed) return post.mean;
  Rng rng(*seed);
  Mat<T> eps(cfg_.V, cfg_.c);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<T>(rng.normal());
  auto& t = g.tape;
  return t.add(post.mean, t.mul_const(t.exp(t.scale(post.logvar, T(0.5))), eps));
}

template <class T>
Var ChunkVae<T>::decode_tokens(Graph<T>& g, Var z) const {
  require(g.tape.rows(z) == cfg_.V && g.tape.cols(z) == cfg_.c, ErrorKind::InvalidArgument,
          "latent shape does not match (V, c)");
  Var x = nn::linear(g, "dec.in", z);
  const int plain = cfg_.depth - cfg_.upsample_layers;
  for (int i = 0; i < cfg_.depth; ++i) {
    if (i == plain && cfg_.upsample_layers > 0) {
      x = nn::linear(g, "dec.up", x);
      x = g.tape.reshape(x, cfg_.V * cfg_.upsample_factor, cfg_.width);
    }
    x = nn::transformer_block(g, "dec.blk" + std::to_string(i), x, cfg_.heads);
  }
  return g.tape.layer_norm(x);
}

template <class T>
Var ChunkVae<T>::query_head(Graph<T>& g, const std::string& prefix, Var tokens, const Mat<T>& coords) const {
  auto& t = g.tape;
  Var x = nn::linear(g, prefix + ".qembed", t.constant(embed_coords(coords)));
  x = nn::cross_attention(g, prefix + ".xattn", x, tokens, cfg_.heads);
  x = t.add(x, nn::ffn_core(g, prefix + ".ffn", t.layer_norm(x)));
  return t.layer_norm(x);
}

template <class T>
Var ChunkVae<T>::occupancy_logits(Graph<T>& g, Var tokens, const Mat<T>& coords) const {
  return nn::linear(g, "occ.out", query_head(g, "occ", tokens, coords));
}

template <class T>
Var ChunkVae<T>::colors(Graph<T>& g, Var tokens, const Mat<T>& coords) const {
  auto& t = g.tape;
  const Var x = query_head(g, "col", tokens, coords);
  return t.sigmoid(nn::linear(g, "col.out", t.gelu(nn::linear(g, "col.fc", x))));
}

template <class T>
Var ChunkVae<T>::height_fraction(Graph<T>& g, Var tokens) const {
  auto& t = g.tape;
  const Var pooled = t.row_mean(tokens);
  return t.sigmoid(nn::linear(g, "hgt.out", t.gelu(nn::linear(g, "hgt.fc", pooled))));
}

template class ChunkVae<float>;
template class ChunkVae<double>;
template Mat<float> point_matrix<float>(const geo::ColoredPointCloud&);
template Mat<double> point_matrix<double>(const geo::ColoredPointCloud&);

int occupied_height(const geo::OccupancyGrid& grid) {
  for (int y = grid.dims[1] - 1; y >= 0; --y)
    for (int z = 0; z < grid.dims[2]; ++z)
      for (int x = 0; x < grid.dims[0]; ++x)
        if (grid.at(x, y, z)) return y + 1;
  return 0;
}

geo::ColoredPointCloud fit_point_count(const geo::ColoredPointCloud& cloud, size_t n, uint64_t seed) {
  require(cloud.size() > 0, ErrorKind::EmptyInput, "cannot resample an empty point cloud");
  std::vector<int32_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  geo::ColoredPointCloud out;
  out.points.resize(static_cast<Eigen::Index>(n), 3);
  if (cloud.has_colors()) out.colors.resize(static_cast<Eigen::Index>(n), 3);
  for (size_t i = 0; i < n; ++i) {
    const auto src = order[i % order.size()];
    out.points.row(static_cast<Eigen::Index>(i)) = cloud.points.row(src);
    if (cloud.has_colors()) out.colors.row(static_cast<Eigen::Index>(i)) = cloud.colors.row(src);
  }
  return out;
}

VaeSample prepare_sample(const geo::SceneChunkSample& chunk, const VaeConfig& cfg, uint64_t seed, size_t occ_pool,
                         size_t color_pool) {
  cfg.validate();
  const auto& grid = chunk.occupancy;
  require(grid.dims == (std::array<int, 3>{cfg.chunk_size, cfg.height, cfg.chunk_size}), ErrorKind::InvalidArgument,
          "chunk grid does not match the VAE chunk size/height");
  require(chunk.surface.has_colors(), ErrorKind::InvalidArgument, "chunk surface needs colors");
  VaeSample s;
  s.grid = grid;
  s.surface = chunk.surface;
  s.points = point_matrix<float>(fit_point_count(chunk.surface, static_cast<size_t>(cfg.n_pc), derive_seed(seed, 1)));
  const auto q = geo::sample_occupancy_queries(grid, occ_pool / 2, occ_pool - occ_pool / 2, grid.voxel_edge,
                                               derive_seed(seed, 2));
  s.occ_coords = q.coords;
  s.occ_labels.resize(static_cast<Eigen::Index>(q.labels.size()), 1);
  for (size_t i = 0; i < q.labels.size(); ++i) s.occ_labels(static_cast<Eigen::Index>(i), 0) = q.labels[i];
  const auto col = fit_point_count(chunk.surface, color_pool, derive_seed(seed, 3));
  s.color_coords = col.points;
  s.color_targets = col.colors;
  s.height_fraction = static_cast<float>(occupied_height(grid)) / static_cast<float>(cfg.height);
  return s;
}

namespace {

std::vector<Eigen::Index> choose(Eigen::Index pool, int n, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(pool));
  std::iota(idx.begin(), idx.end(), 0);
  const size_t k = std::min(idx.size(), static_cast<size_t>(n));
  for (size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(k);
  return idx;
}

template <class T>
Mat<T> gather(const Mat<float>& m, const std::vector<Eigen::Index>& rows) {
  Mat<T> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]).template cast<T>();
  return out;
}

}  // namespace

template <class T>
Var kl_standard_normal(Tape<T>& t, Var mean, Var logvar) {
  return t.scale(t.sum(t.sub(t.add(t.square(mean), t.exp(logvar)), t.add_scalar(logvar, T(1)))), T(0.5));
}

template Var kl_standard_normal<float>(Tape<float>&, Var, Var);
template Var kl_standard_normal<double>(Tape<double>&, Var, Var);

template <class T>
Var vae_loss(Graph<T>& g, const ChunkVae<T>& model, const std::vector<const VaeSample*>& batch, uint64_t seed,
             LossParts* parts) {
  require(!batch.empty(), ErrorKind::EmptyInput, "empty VAE batch");
  const auto& cfg = model.config();
  auto& t = g.tape;
  std::vector<Var> terms;
  LossParts acc;
  for (size_t i = 0; i < batch.size(); ++i) {
    const VaeSample& s = *batch[i];
    const auto post = model.encode(g, s.points.template cast<T>());
    const Var z = model.sample(g, post, derive_seed(seed, 1, i));
    const Var tokens = model.decode_tokens(g, z);

    Rng rng(derive_seed(seed, 2, i));
    const auto oi = choose(s.occ_coords.rows(), cfg.n_occ, rng);
    const Var bce = t.bce_with_logits(model.occupancy_logits(g, tokens, gather<T>(s.occ_coords, oi)),
                                      gather<T>(s.occ_labels, oi));
    const auto ci = choose(s.color_coords.rows(), cfg.n_col, rng);
    const Var col = t.mse(model.colors(g, tokens, gather<T>(s.color_coords, ci)), gather<T>(s.color_targets, ci));
    const Var hgt = t.mse(model.height_fraction(g, tokens), Mat<T>::Constant(1, 1, static_cast<T>(s.height_fraction)));
    const Var kl = kl_standard_normal(t, post.mean, post.logvar);
    Var total = t.add(bce, t.scale(col, static_cast<T>(cfg.lambda_color)));
    total = t.add(total, t.scale(hgt, static_cast<T>(cfg.lambda_height)));
    total = t.add(total, t.scale(kl, static_cast<T>(cfg.lambda_kl)));
    terms.push_back(total);
    acc.occ_bce += static_cast<double>(t.scalar(bce));
    acc.color_l2 += static_cast<double>(t.scalar(col));
    acc.height_l2 += static_cast<double>(t.scalar(hgt));
    acc.kl += static_cast<double>(t.scalar(kl));
  }
  const Var loss = t.scale(t.sum(t.concat_rows(terms)), T(1) / static_cast<T>(batch.size()));
  if (parts) {
    const double n = static_cast<double>(batch.size());
    *parts = {static_cast<double>(t.scalar(loss)), acc.occ_bce / n, acc.color_l2 / n, acc.height_l2 / n, acc.kl / n};
  }
  return loss;
}

template Var vae_loss<float>(Graph<float>&, const ChunkVae<float>&, const std::vector<const VaeSample*>&, uint64_t,
                             LossParts*);
template Var vae_loss<double>(Graph<double>&, const ChunkVae<double>&, const std::vector<const VaeSample*>&, uint64_t,
                              LossParts*);

TrainLog train_vae(ParameterStore<float>& store, const VaeConfig& cfg, const std::vector<VaeSample>& data,
                   const TrainConfig& tc, const std::function<void(int, const LossParts&)>& progress) {
  require(!data.empty(), ErrorKind::EmptyInput, "no training chunks");
  require(tc.steps >= 1 && tc.batch >= 1, ErrorKind::InvalidArgument, "steps and batch must be positive");
  nn::AdamWConfig opt;
  opt.lr = tc.lr;
  opt.weight_decay = tc.weight_decay;
  opt.total_steps = tc.steps;
  opt.warmup_steps = tc.warmup;
  opt.clip_norm = tc.clip_norm;
  ChunkVae<float> model(cfg, store);
  TrainLog log;
  Tape<float> tape;
  const int batch = std::min<int>(tc.batch, static_cast<int>(data.size()));
  for (int step = 0; step < tc.steps; ++step) {
    Rng rng(derive_seed(tc.seed, 0xBA7C, static_cast<uint64_t>(step)));
    std::vector<const VaeSample*> b;
    for (Eigen::Index i : choose(static_cast<Eigen::Index>(data.size()), batch, rng)) b.push_back(&data[static_cast<size_t>(i)]);
    tape.clear();
    Graph<float> g{tape, store};
    LossParts parts;
    const Var loss = vae_loss(g, model, b, derive_seed(tc.seed, 0x105E, static_cast<uint64_t>(step)), &parts);
    store.zero_grad();
    tape.backward(loss);
    nn::adamw_step(store, opt);
    log.steps.push_back(parts);
    if (progress) progress(step, parts);
  }
  return log;
}

Encoded encode_chunk(const ParameterStore<float>& store, const VaeConfig& cfg, const geo::ColoredPointCloud& surface) {
  require(static_cast<int>(surface.size()) == cfg.n_pc, ErrorKind::InvalidArgument,
          "encode_chunk expects exactly n_pc = " + std::to_string(cfg.n_pc) + " points");
  Tape<float> t;
  auto g = nn::frozen_graph(t, store);
  ChunkVae<float> model(cfg, g.store);
  const auto post = model.encode(g, point_matrix<float>(surface));
  return {t.value(post.mean), t.value(post.logvar)};
}

Mat<float> sample_latent(const Encoded& e, std::optional<uint64_t> seed) {
  if (!seed) return e.mean;
  Rng rng(*seed);
  Mat<float> z = e.mean;
  for (Eigen::Index i = 0; i < z.size(); ++i)
    z.data()[i] += std::exp(0.5f * e.logvar.data()[i]) * static_cast<float>(rng.normal());
  return z;
}

Mat<float> decoder_tokens(const ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& z) {
  Tape<float> t;
  auto g = nn::frozen_graph(t, store);
  ChunkVae<float> model(cfg, g.store);
  return t.value(model.decode_tokens(g, t.constant(z)));
}

namespace {

template <class F>
Mat<float> blocked_queries(const Mat<float>& coords, int out_cols, F&& run) {
  Mat<float> out(coords.rows(), out_cols);
  for (Eigen::Index start = 0; start < coords.rows(); start += kQueryBlock) {
    const Eigen::Index n = std::min(kQueryBlock, coords.rows() - start);
    Mat<float> block = Mat<float>::Zero(kQueryBlock, 3);
    block.topRows(n) = coords.middleRows(start, n);
    out.middleRows(start, n) = run(block).topRows(n);
  }
  return out;
}

}  // namespace

std::vector<float> decode_query_occupancy(const ParameterStore<float>& store, const VaeConfig& cfg,
                                          const Mat<float>& tokens, const Mat<float>& coords) {
  const Mat<float> logits = blocked_queries(coords, 1, [&](const Mat<float>& block) {
    Tape<float> t;
    auto g = nn::frozen_graph(t, store);
    ChunkVae<float> model(cfg, g.store);
    return Mat<float>(t.value(model.occupancy_logits(g, t.constant(tokens), block)));
  });
  return {logits.data(), logits.data() + logits.size()};
}

Mat<float> decode_query_color(const ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& tokens,
                              const Mat<float>& coords) {
  return blocked_queries(coords, 3, [&](const Mat<float>& block) {
    Tape<float> t;
    auto g = nn::frozen_graph(t, store);
    ChunkVae<float> model(cfg, g.store);
    return Mat<float>(t.value(model.colors(g, t.constant(tokens), block)));
  });
}

int predict_height(const ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& tokens) {
  Tape<float> t;
  auto g = nn::frozen_graph(t, store);
  ChunkVae<float> model(cfg, g.store);
  const float frac = t.scalar(model.height_fraction(g, t.constant(tokens)));
  return std::clamp(static_cast<int>(std::lround(frac * static_cast<float>(cfg.height))), 1, cfg.height);
}

geo::OccupancyGrid decode_occupancy_grid(const ParameterStore<float>& store, const VaeConfig& cfg,
                                         const Mat<float>& tokens, std::optional<int> height_limit) {
  geo::OccupancyGrid grid(cfg.chunk_size, cfg.height, cfg.chunk_size, cfg.voxel_edge());
  const int ny = height_limit ? std::clamp(*height_limit, 0, cfg.height) : cfg.height;
  if (ny == 0) return grid;
  const float e = grid.voxel_edge;
  Mat<float> coords(static_cast<Eigen::Index>(cfg.chunk_size) * ny * cfg.chunk_size, 3);
  Eigen::Index i = 0;
  for (int z = 0; z < cfg.chunk_size; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < cfg.chunk_size; ++x) coords.row(i++) << (x + 0.5f) * e, (y + 0.5f) * e, (z + 0.5f) * e;
  const auto logits = decode_query_occupancy(store, cfg, tokens, coords);
  i = 0;
  for (int z = 0; z < cfg.chunk_size; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < cfg.chunk_size; ++x) grid.set(x, y, z, logits[static_cast<size_t>(i++)] > 0.0f);
  return grid;
}

geo::TriMesh decode_chunk_mesh(const ParameterStore<float>& store, const VaeConfig& cfg, const Mat<float>& z,
                               const MeshOptions& opt) {
  const Mat<float> tokens = decoder_tokens(store, cfg, z);
  std::optional<int> limit;
  if (opt.use_predicted_height) limit = predict_height(store, cfg, tokens);
  const auto grid = decode_occupancy_grid(store, cfg, tokens, limit);
  geo::TriMesh mesh = geo::marching_cubes(grid);
  if (mesh.empty()) return mesh;
  geo::ColoredPointCloud probe = geo::sample_surface_points(mesh, opt.color_samples, opt.seed);
  probe.colors = decode_query_color(store, cfg, tokens, probe.points);
  return geo::nearest_color_transfer(mesh, probe);
}

geo::TriMesh decode_scene_mesh(const ParameterStore<float>& store, const VaeConfig& cfg, const SceneLatentGrid& grid,
                               const MeshOptions& opt) {
  require(grid.V == cfg.V && grid.c == cfg.c, ErrorKind::InvalidArgument, "scene latents do not match the VAE");
  const float extent = static_cast<float>(cfg.chunk_size) * cfg.voxel_edge();
  std::vector<geo::TriMesh> parts;
  for (int r = 0; r < grid.layout.rows; ++r)
    for (int c = 0; c < grid.layout.cols; ++c)
      parts.push_back(geo::translate(decode_chunk_mesh(store, cfg, grid.chunk(r, c), opt), c * extent, 0.0f, r * extent));
  return geo::merge_meshes(parts);
}

}  // namespace nuiworld::vae
