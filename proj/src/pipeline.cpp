#include "nuiworld/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>

#include "nuiworld/formats.hpp"

namespace nuiworld::pipeline {

using nlohmann::json;
using nn::ParameterStore;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Forge: return "forge";
    case Stage::TrainVae: return "train-vae";
    case Stage::Encode: return "encode";
    case Stage::TrainQuad: return "train-quad";
    case Stage::Synth: return "synth";
    case Stage::Sketch: return "sketch";
    case Stage::TrainWorld: return "train-world";
    case Stage::TrainSize: return "train-size";
    case Stage::Generate: return "generate";
    case Stage::Eval: return "eval";
    case Stage::Export: return "export";
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  for (Stage st : kStages)
    if (to_string(st) == s) return st;
  fail(ErrorKind::InvalidArgument, "unknown stage '" + std::string(s) + "'");
}

std::vector<Stage> upstream(Stage s) {
  switch (s) {
    case Stage::Forge: return {};
    case Stage::TrainVae: return {Stage::Forge};
    case Stage::Encode: return {Stage::Forge, Stage::TrainVae};
    case Stage::TrainQuad: return {Stage::Encode};
    case Stage::Synth: return {Stage::Encode, Stage::TrainQuad};
    case Stage::Sketch: return {Stage::TrainVae, Stage::Synth};
    case Stage::TrainWorld: return {Stage::Encode, Stage::Synth, Stage::Sketch};
    case Stage::TrainSize: return {Stage::Synth, Stage::Sketch};
    case Stage::Generate: return {Stage::Encode, Stage::Synth, Stage::Sketch, Stage::TrainWorld, Stage::TrainSize};
    case Stage::Eval:
      return {Stage::Forge, Stage::TrainVae, Stage::Encode, Stage::TrainQuad, Stage::Synth, Stage::Sketch,
              Stage::TrainSize, Stage::Generate};
    case Stage::Export: return {Stage::TrainVae, Stage::Synth, Stage::Generate};
  }
  return {};
}

// --- configuration ------------------------------------------------------------

namespace {

json theme_json(const forge::ForgeConfig& t) {
  json palette = json::array();
  for (const auto& c : t.palette) palette.push_back({c[0], c[1], c[2]});
  json density = json::object();
  for (size_t i = 0; i < t.density.size(); ++i) density[std::string(forge::element_name(static_cast<forge::Element>(i)))] = t.density[i];
  return {{"id", t.theme},
          {"chunk_size", t.chunk_size},
          {"height", t.height},
          {"ground_thickness", t.ground_thickness},
          {"points_per_chunk", t.points_per_chunk},
          {"palette", palette},
          {"density", density}};
}

json layout_json(const forge::LayoutSpec& l) { return json::array({l.rows, l.cols}); }
forge::LayoutSpec layout_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

template <class TC>
json train_json(const TC& t) {
  return {{"steps", t.steps}, {"batch", t.batch}, {"lr", t.lr}, {"weight_decay", t.weight_decay},
          {"warmup", t.warmup}, {"clip_norm", t.clip_norm}, {"seed", t.seed}};
}

template <class TC>
void train_from_json(TC& t, const json& j) {
  t.steps = j.value("steps", t.steps);
  t.batch = j.value("batch", t.batch);
  t.lr = j.value("lr", t.lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.warmup = j.value("warmup", t.warmup);
  t.clip_norm = j.value("clip_norm", t.clip_norm);
  t.seed = j.value("seed", t.seed);
}

json sampler_json(const forge::LayoutSampler& s) {
  return {{"area_min", s.area_min}, {"area_max", s.area_max}, {"p_square", s.p_square},
          {"ratio_range", {s.ratio_range[0], s.ratio_range[1]}}, {"min_side", s.min_side}};
}

json sketch_json(const sketch::SketchConfig& s) {
  const auto& r = s.render;
  return {{"resolution", r.resolution},  {"azimuth_deg", r.azimuth_deg}, {"elevation_deg", r.elevation_deg},
          {"margin", r.margin},          {"light", r.light},             {"ambient", r.ambient},
          {"base_color", r.base_color},  {"canny_low", s.canny_low},     {"canny_high", s.canny_high},
          {"canny_sigma", s.canny_sigma}};
}

// Object keys from `over` replace those in `base`, recursively.
json merged(json base, const json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it->is_object())
      base[it.key()] = merged(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
  return base;
}

}  // namespace

json EvalConfig::to_json() const {
  return {{"vae_chunks", vae_chunks}, {"scene_points", scene_points}, {"feature_points", feature_points},
          {"fscore_tau", fscore_tau}};
}

EvalConfig EvalConfig::from_json(const json& j) {
  EvalConfig e;
  e.vae_chunks = j.value("vae_chunks", e.vae_chunks);
  e.scene_points = j.value("scene_points", e.scene_points);
  e.feature_points = j.value("feature_points", e.feature_points);
  e.fscore_tau = j.value("fscore_tau", e.fscore_tau);
  return e;
}

PipelineConfig toy_config() {
  PipelineConfig c;
  c.vae.V = c.V;
  c.vae.c = c.c;
  c.vae.upsample_factor = 8;
  c.vae.depth = 4;
  c.vae.upsample_layers = 2;
  c.vae_train.steps = 2000;
  c.quad.V = c.V;
  c.quad.c = c.c;
  c.quad.width = 64;
  c.quad.depth = 3;
  c.quad_train.steps = 2000;
  c.world.V = c.V;
  c.world.c = c.c;
  c.world_train.steps = 4000;
  // the size head overfits a few dozen sketches quickly
  c.size_train.steps = 100;
  c.size_train.warmup = 10;
  c.sample.steps = 25;
  c.sample.guidance = 2.0;
  return c;
}

json PipelineConfig::to_json() const {
  return {{"theme", theme_json(theme)},
          {"V", V},
          {"c", c},
          {"bootstrap_scenes", bootstrap_scenes},
          {"bootstrap_layout", layout_json(bootstrap_layout)},
          {"synth_scenes", synth_scenes},
          {"train_scenes", train_scenes},
          {"sampler", sampler_json(sampler)},
          {"vae", vae.to_json()},
          {"vae_train", train_json(vae_train)},
          {"quad", quad.to_json()},
          {"quad_train", train_json(quad_train)},
          {"quad_sample_steps", quad_sample_steps},
          {"quad_holdout_scenes", quad_holdout_scenes},
          {"sketch", sketch_json(sketch)},
          {"sketch_patch", sketch_patch},
          {"world", world.to_json()},
          {"world_train", train_json(world_train)},
          {"sample", {{"steps", sample.steps}, {"guidance", sample.guidance}, {"seed", sample.seed}}},
          {"size", size.to_json()},
          {"size_train", {{"steps", size_train.steps}, {"lr", size_train.lr}, {"warmup", size_train.warmup},
                          {"seed", size_train.seed}}},
          {"eval", eval.to_json()},
          {"seed", seed}};
}

PipelineConfig PipelineConfig::from_json(const json& doc) {
  PipelineConfig c = toy_config();
  require(doc.is_object(), ErrorKind::InvalidArgument, "pipeline config must be a JSON object");
  const json j = merged(c.to_json(), doc);
  try {
    // theme: builtin id, {"file", "id"}, or an inline definition
    json th = doc.value("theme", json::object());
    if (th.is_string()) th = json{{"id", th}};
    if (th.contains("file")) {
      c.theme = forge::load_theme(th.at("file").get<std::string>(), th.at("id").get<std::string>());
    } else if (th.contains("id")) {
      const auto id = th.at("id").get<std::string>();
      const auto ids = forge::builtin_theme_ids();
      if (std::find(ids.begin(), ids.end(), id) != ids.end()) {
        c.theme = forge::builtin_theme(id);
      } else {
        require(th.contains("palette"), ErrorKind::InvalidArgument, "unknown theme '" + id + "' without a palette");
        c.theme = forge::ForgeConfig{};
        c.theme.theme = id;
      }
    }
    if (th.contains("palette")) {
      c.theme.palette.clear();
      for (const auto& rgb : th.at("palette"))
        c.theme.palette.push_back({rgb.at(0).get<float>(), rgb.at(1).get<float>(), rgb.at(2).get<float>()});
    }
    if (th.contains("density"))
      for (size_t i = 0; i < c.theme.density.size(); ++i)
        c.theme.density[i] = th.at("density").value(std::string(forge::element_name(static_cast<forge::Element>(i))), 0.0);
    c.theme.chunk_size = th.value("chunk_size", c.theme.chunk_size);
    c.theme.height = th.value("height", c.theme.height);
    c.theme.ground_thickness = th.value("ground_thickness", c.theme.ground_thickness);
    c.theme.points_per_chunk = th.value("points_per_chunk", c.theme.points_per_chunk);

    c.V = j.at("V").get<int>();
    c.c = j.at("c").get<int>();
    c.bootstrap_scenes = j.at("bootstrap_scenes").get<int>();
    c.bootstrap_layout = layout_from_json(j.at("bootstrap_layout"));
    c.synth_scenes = j.at("synth_scenes").get<int>();
    c.train_scenes = j.at("train_scenes").get<int>();
    const json& sp = j.at("sampler");
    c.sampler.area_min = sp.at("area_min").get<double>();
    c.sampler.area_max = sp.at("area_max").get<double>();
    c.sampler.p_square = sp.at("p_square").get<double>();
    c.sampler.ratio_range = {sp.at("ratio_range").at(0).get<double>(), sp.at("ratio_range").at(1).get<double>()};
    c.sampler.min_side = sp.at("min_side").get<int>();
    c.vae = vae::VaeConfig::from_json(j.at("vae"));
    train_from_json(c.vae_train, j.at("vae_train"));
    c.quad = quad::QuadConfig::from_json(j.at("quad"));
    train_from_json(c.quad_train, j.at("quad_train"));
    c.quad_sample_steps = j.at("quad_sample_steps").get<int>();
    c.quad_holdout_scenes = j.at("quad_holdout_scenes").get<int>();
    const json& sk = j.at("sketch");
    c.sketch.render.resolution = sk.at("resolution").get<int>();
    c.sketch.render.azimuth_deg = sk.at("azimuth_deg").get<double>();
    c.sketch.render.elevation_deg = sk.at("elevation_deg").get<double>();
    c.sketch.render.margin = sk.at("margin").get<double>();
    c.sketch.render.light = sk.at("light").get<std::array<float, 3>>();
    c.sketch.render.ambient = sk.at("ambient").get<float>();
    c.sketch.render.base_color = sk.at("base_color").get<std::array<float, 3>>();
    c.sketch.canny_low = sk.at("canny_low").get<double>();
    c.sketch.canny_high = sk.at("canny_high").get<double>();
    c.sketch.canny_sigma = sk.at("canny_sigma").get<double>();
    c.sketch_patch = j.at("sketch_patch").get<int>();
    c.world = world::WorldConfig::from_json(j.at("world"));
    train_from_json(c.world_train, j.at("world_train"));
    c.sample.steps = j.at("sample").at("steps").get<int>();
    c.sample.guidance = j.at("sample").at("guidance").get<double>();
    c.sample.seed = j.at("sample").at("seed").get<uint64_t>();
    c.size = world::SizeConfig::from_json(j.at("size"));
    const json& st = j.at("size_train");
    c.size_train.steps = st.at("steps").get<int>();
    c.size_train.lr = st.at("lr").get<double>();
    c.size_train.warmup = st.at("warmup").get<int>();
    c.size_train.seed = st.at("seed").get<uint64_t>();
    c.eval = EvalConfig::from_json(j.at("eval"));
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, std::string("malformed pipeline config: ") + e.what());
  }
  // Shared shapes follow the top-level settings.
  c.vae.V = c.quad.V = c.world.V = c.V;
  c.vae.c = c.quad.c = c.world.c = c.c;
  c.vae.chunk_size = c.theme.chunk_size;
  c.vae.height = c.theme.height;
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  theme.validate();
  require(V >= 1 && c >= 1, ErrorKind::InvalidArgument, "V and c must be positive");
  require(bootstrap_scenes >= 1, ErrorKind::InvalidArgument, "need at least one bootstrap scene");
  require(bootstrap_layout.rows >= 2 && bootstrap_layout.cols >= 2, ErrorKind::InvalidArgument,
          "bootstrap layout needs at least 2x2 chunks");
  require(quad_holdout_scenes >= 1 && quad_holdout_scenes < bootstrap_scenes, ErrorKind::InvalidArgument,
          "quad holdout must leave at least one training scene");
  require(synth_scenes >= 2, ErrorKind::InvalidArgument, "need at least two synthesized scenes");
  // the split is disjoint and exhaustive by construction: [0, train) and [train, synth)
  require(train_scenes >= 1 && train_scenes < synth_scenes, ErrorKind::InvalidArgument,
          "train/val split must leave both sides non-empty");
  require(sampler.min_side >= 2, ErrorKind::InvalidArgument, "synthesized layouts need at least 2x2 chunks");
  require(quad_sample_steps >= 1, ErrorKind::InvalidArgument, "quad sampling steps must be positive");
  require(sketch.render.resolution % sketch_patch == 0, ErrorKind::InvalidArgument,
          "sketch resolution must be a multiple of the patch size");
  require(world.sketch_dim == size.sketch_dim, ErrorKind::InvalidArgument,
          "world and size models must share the sketch width");
  require(eval.scene_points >= 1 && eval.feature_points >= 1 && eval.fscore_tau > 0.0 && eval.vae_chunks >= 1,
          ErrorKind::InvalidArgument, "eval settings must be positive");
  vae.validate();
  quad.validate();
  world.validate();
}

std::string PipelineConfig::stage_hash(Stage s) const {
  const json full = to_json();
  json settings;
  switch (s) {
    case Stage::Forge:
      settings = {{"theme", full["theme"]}, {"scenes", bootstrap_scenes}, {"layout", full["bootstrap_layout"]}};
      break;
    case Stage::TrainVae: settings = {{"vae", full["vae"]}, {"train", full["vae_train"]}}; break;
    case Stage::Encode: settings = {{"latent", "posterior-mean"}}; break;
    case Stage::TrainQuad:
      settings = {{"quad", full["quad"]}, {"train", full["quad_train"]}, {"holdout", quad_holdout_scenes}};
      break;
    case Stage::Synth:
      settings = {{"sampler", full["sampler"]}, {"scenes", synth_scenes}, {"steps", quad_sample_steps}};
      break;
    case Stage::Sketch: settings = {{"sketch", full["sketch"]}, {"patch", sketch_patch}, {"dim", world.sketch_dim}}; break;
    case Stage::TrainWorld:
      settings = {{"world", full["world"]}, {"train", full["world_train"]}, {"split", train_scenes}};
      break;
    case Stage::TrainSize:
      settings = {{"size", full["size"]}, {"train", full["size_train"]}, {"split", train_scenes}};
      break;
    case Stage::Generate: settings = {{"sample", full["sample"]}}; break;
    case Stage::Eval: settings = {{"eval", full["eval"]}}; break;
    case Stage::Export: settings = json::object(); break;
  }
  json up = json::object();
  for (Stage u : upstream(s)) up[std::string(to_string(u))] = stage_hash(u);
  const json doc = {{"stage", std::string(to_string(s))}, {"settings", settings}, {"seed", seed}, {"producer", kProducerVersion},
                    {"upstream", up}};
  return hex64(fnv1a(doc.dump()));
}

// --- manifests ----------------------------------------------------------------

json Manifest::to_json() const {
  return {{"stage", stage}, {"config_hash", config_hash}, {"seed", seed}, {"producer", producer},
          {"upstream", upstream}, {"artifacts", artifacts}};
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  m.stage = j.at("stage").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.producer = j.at("producer").get<std::string>();
  m.upstream = j.at("upstream");
  m.artifacts = j.at("artifacts");
  return m;
}

fs::path stage_dir(const fs::path& out, Stage s) { return out / std::string(to_string(s)); }

Manifest check_stage(const PipelineConfig& cfg, const fs::path& out, Stage s) {
  const std::string name(to_string(s));
  const fs::path path = stage_dir(out, s) / "manifest.json";
  require(fs::exists(path), ErrorKind::Dependency,
          "missing upstream stage '" + name + "': no manifest under " + stage_dir(out, s).string());
  Manifest m;
  try {
    m = Manifest::from_json(io::read_json(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::Persistence, "unreadable manifest " + path.string() + ": " + e.what());
  }
  const std::string want = cfg.stage_hash(s);
  require(m.config_hash == want, ErrorKind::StaleArtifact,
          "stage '" + name + "' was produced with config hash " + m.config_hash + " but the current config expects " +
              want + "; re-run it");
  require(m.producer == kProducerVersion, ErrorKind::StaleArtifact,
          "stage '" + name + "' was produced by " + m.producer);
  for (auto it = m.artifacts.begin(); it != m.artifacts.end(); ++it) {
    const fs::path f = stage_dir(out, s) / it.key();
    require(fs::exists(f), ErrorKind::StaleArtifact, "artifact " + f.string() + " of stage '" + name + "' is gone");
    require(hex64(io::file_hash(f)) == it->get<std::string>(), ErrorKind::StaleArtifact,
            "artifact " + f.string() + " changed after stage '" + name + "' wrote it");
  }
  return m;
}

namespace {

uint64_t stage_seed(const PipelineConfig& cfg, Stage s) {
  return derive_seed(cfg.seed, 0x57A6E, static_cast<uint64_t>(s));
}

void write_manifest(const PipelineConfig& cfg, const fs::path& out, Stage s) {
  Manifest m;
  m.stage = std::string(to_string(s));
  m.config_hash = cfg.stage_hash(s);
  m.seed = cfg.seed;
  m.producer = kProducerVersion;
  for (Stage u : upstream(s)) m.upstream[std::string(to_string(u))] = cfg.stage_hash(u);
  const fs::path dir = stage_dir(out, s);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) m.artifacts[fs::relative(f, dir).generic_string()] = hex64(io::file_hash(f));
  io::write_json(dir / "manifest.json", m.to_json());
}

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d", i);
  return buf;
}

json loss_log(const std::vector<double>& losses) {
  json a = json::array();
  for (double l : losses) a.push_back(l);
  return a;
}

void note(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::function<void(int, double)> every(const Log& log, const std::string& what, int total) {
  const int stride = std::max(1, total / 10);
  return [log, what, total, stride](int step, double loss) {
    if (log && ((step + 1) % stride == 0 || step + 1 == total)) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%s step %d/%d loss %.5f", what.c_str(), step + 1, total, loss);
      log(buf);
    }
  };
}

ParameterStore<float> load_model(const PipelineConfig& cfg, const fs::path& out, Stage s, const std::string& file) {
  check_stage(cfg, out, s);
  return nn::load_checkpoint(stage_dir(out, s) / file);
}

std::vector<SceneLatentGrid> normalized(std::vector<SceneLatentGrid> grids, const flow::LatentNorm& norm) {
  for (auto& g : grids) g = norm.apply(std::move(g));
  return grids;
}

std::vector<quad::QuadLatent> quads_of(const std::vector<SceneLatentGrid>& grids, int begin, int end) {
  std::vector<quad::QuadLatent> q;
  for (int i = begin; i < end; ++i) {
    auto part = quad::extract_quads(grids[static_cast<size_t>(i)]);
    q.insert(q.end(), part.begin(), part.end());
  }
  return q;
}

std::vector<world::SizeSample> size_samples(const PipelineConfig& cfg, const fs::path& out,
                                            const std::vector<SceneLatentGrid>& synth, int begin, int end) {
  std::vector<world::SizeSample> data;
  for (int i = begin; i < end; ++i)
    for (const auto& e : load_sketches(cfg, out, i)) data.push_back({e.cls, synth[static_cast<size_t>(i)].layout});
  return data;
}

// --- stages -------------------------------------------------------------------

void stage_forge(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  forge::build_bootstrap_dataset(cfg.theme, cfg.bootstrap_scenes, cfg.bootstrap_layout, stage_seed(cfg, Stage::Forge),
                                 stage_dir(out, Stage::Forge));
  note(log, "forged " + std::to_string(cfg.bootstrap_scenes) + " scenes");
}

void stage_train_vae(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto chunks = load_bootstrap_chunks(cfg, out);
  const uint64_t seed = stage_seed(cfg, Stage::TrainVae);
  std::vector<vae::VaeSample> data;
  for (size_t i = 0; i < chunks.size(); ++i) data.push_back(vae::prepare_sample(chunks[i], cfg.vae, derive_seed(seed, 1, i)));
  ParameterStore<float> store;
  vae::ChunkVae<float>::init_params(store, cfg.vae, derive_seed(seed, 2));
  vae::TrainConfig tc = cfg.vae_train;
  tc.seed = derive_seed(seed, 3, tc.seed);
  const auto progress = every(log, "vae", tc.steps);
  const auto tl = vae::train_vae(store, cfg.vae, data, tc,
                                 [&](int step, const vae::LossParts& p) { progress(step, p.total); });
  json steps = json::array();
  for (const auto& p : tl.steps)
    steps.push_back({{"total", p.total}, {"occ_bce", p.occ_bce}, {"color_l2", p.color_l2}, {"height_l2", p.height_l2},
                     {"kl", p.kl}});
  const fs::path dir = stage_dir(out, Stage::TrainVae);
  nn::save_checkpoint(store, dir / "vae.ckpt", cfg.vae.to_json());
  io::write_json(dir / "log.json", {{"steps", steps}});
}

void stage_encode(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto store = load_model(cfg, out, Stage::TrainVae, "vae.ckpt");
  const uint64_t seed = stage_seed(cfg, Stage::Encode);
  const fs::path dir = stage_dir(out, Stage::Encode);
  std::vector<SceneLatentGrid> grids;
  for (int i = 0; i < cfg.bootstrap_scenes; ++i) {
    const auto chunks = io::read_chunks(stage_dir(out, Stage::Forge) / ("scene_" + std::to_string(i) + ".nwchunk"));
    SceneLatentGrid g(cfg.bootstrap_layout, cfg.V, cfg.c, Provenance::VaeEncoded);
    require(static_cast<int>(chunks.size()) == g.token_count(), ErrorKind::Persistence,
            "bootstrap scene " + std::to_string(i) + " does not match the configured layout");
    for (size_t k = 0; k < chunks.size(); ++k) {
      const auto [u, v] = chunks[k].grid_coords;
      const auto cloud = vae::fit_point_count(chunks[k].surface, static_cast<size_t>(cfg.vae.n_pc),
                                              derive_seed(seed, static_cast<uint64_t>(i), k));
      g.set_chunk(v, u, vae::encode_chunk(store, cfg.vae, cloud).mean);
    }
    io::write_latents(dir / (scene_name(i) + ".nwlat"), g);
    grids.push_back(std::move(g));
  }
  const auto norm = flow::LatentNorm::fit(grids);
  io::write_json(dir / "norm.json", norm.to_json());
  note(log, "encoded " + std::to_string(grids.size()) + " scenes, latent mean " + std::to_string(norm.mean) + " std " +
                std::to_string(norm.std));
}

void stage_train_quad(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto grids = normalized(load_latents(stage_dir(out, Stage::Encode), "scene", cfg.bootstrap_scenes), load_norm(out));
  const auto train = quads_of(grids, 0, cfg.bootstrap_scenes - cfg.quad_holdout_scenes);
  const uint64_t seed = stage_seed(cfg, Stage::TrainQuad);
  ParameterStore<float> store;
  quad::QuadNet<float>::init_params(store, cfg.quad, derive_seed(seed, 1));
  quad::QuadTrainConfig tc = cfg.quad_train;
  tc.seed = derive_seed(seed, 2, tc.seed);
  const auto tl = quad::train_quad(store, cfg.quad, train, tc, every(log, "quad", tc.steps));
  json masks = json::array();
  for (auto m : tl.masks) masks.push_back(std::string(quad::to_string(m)));
  const fs::path dir = stage_dir(out, Stage::TrainQuad);
  nn::save_checkpoint(store, dir / "quad.ckpt", cfg.quad.to_json());
  io::write_json(dir / "log.json", {{"loss", loss_log(tl.loss)}, {"masks", masks}, {"windows", train.size()}});
}

void stage_synth(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto store = load_model(cfg, out, Stage::TrainQuad, "quad.ckpt");
  const auto norm = load_norm(out);
  const auto field = quad::model_field(store, cfg.quad);
  const uint64_t seed = stage_seed(cfg, Stage::Synth);
  const fs::path dir = stage_dir(out, Stage::Synth);
  json layouts = json::array();
  for (int i = 0; i < cfg.synth_scenes; ++i) {
    const auto layout = forge::sample_layout(cfg.sampler, derive_seed(seed, 1, static_cast<uint64_t>(i)));
    auto g = quad::raster_scan_generate(layout, field, cfg.V, cfg.c, cfg.quad_sample_steps,
                                        derive_seed(seed, 2, static_cast<uint64_t>(i)));
    g = norm.invert(std::move(g));
    g.provenance = Provenance::NuiSceneSynthesized;
    io::write_latents(dir / (scene_name(i) + ".nwlat"), g);
    layouts.push_back(layout_json(layout));
  }
  io::write_json(dir / "layouts.json", layouts);
  note(log, "synthesized " + std::to_string(cfg.synth_scenes) + " scenes");
}

void stage_sketch(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto store = load_model(cfg, out, Stage::TrainVae, "vae.ckpt");
  const auto grids = load_latents(stage_dir(out, Stage::Synth), "scene", cfg.synth_scenes);
  const fs::path dir = stage_dir(out, Stage::Sketch);
  for (int i = 0; i < cfg.synth_scenes; ++i) {
    const auto mesh = scene_mesh(store, cfg.vae, grids[static_cast<size_t>(i)]);
    const int res = cfg.sketch.render.resolution;
    const auto images = mesh.empty() ? std::vector<sketch::Image>(sketch::kVariants.size(), sketch::Image(res, res, 1))
                                     : sketch::sketch_variants(mesh, cfg.sketch);
    for (size_t v = 0; v < images.size(); ++v)
      sketch::write_png(dir / (scene_name(i) + "_" + std::string(sketch::to_string(sketch::kVariants[v])) + ".png"),
                        images[v]);
    if ((i + 1) % 8 == 0) note(log, "sketched " + std::to_string(i + 1) + "/" + std::to_string(cfg.synth_scenes));
  }
}

void stage_train_world(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto norm = load_norm(out);
  const auto grids = normalized(load_latents(stage_dir(out, Stage::Synth), "scene", cfg.synth_scenes), norm);
  std::vector<world::WorldSample> data;
  for (int i = 0; i < cfg.train_scenes; ++i) data.push_back({grids[static_cast<size_t>(i)], load_sketches(cfg, out, i)});
  const uint64_t seed = stage_seed(cfg, Stage::TrainWorld);
  ParameterStore<float> store;
  world::WorldNet<float>::init_params(store, cfg.world, derive_seed(seed, 1));
  world::WorldTrainConfig tc = cfg.world_train;
  tc.seed = derive_seed(seed, 2, tc.seed);
  const auto tl = world::train_world(store, cfg.world, data, tc, every(log, "world", tc.steps));
  const fs::path dir = stage_dir(out, Stage::TrainWorld);
  nn::save_checkpoint(store, dir / "world.ckpt", cfg.world.to_json());
  io::write_json(dir / "log.json", {{"loss", loss_log(tl.loss)}});
}

void stage_train_size(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto grids = load_latents(stage_dir(out, Stage::Synth), "scene", cfg.synth_scenes);
  const auto data = size_samples(cfg, out, grids, 0, cfg.train_scenes);
  const uint64_t seed = stage_seed(cfg, Stage::TrainSize);
  ParameterStore<float> store;
  world::init_size_params(store, cfg.size, data, derive_seed(seed, 1));
  world::SizeTrainConfig tc = cfg.size_train;
  tc.seed = derive_seed(seed, 2, tc.seed);
  const auto losses = world::train_size_predictor(store, data, tc);
  const fs::path dir = stage_dir(out, Stage::TrainSize);
  nn::save_checkpoint(store, dir / "size.ckpt", cfg.size.to_json());
  io::write_json(dir / "log.json", {{"loss", loss_log(losses)}});
  note(log, "size predictor train error " + std::to_string(world::size_error(store, data)));
}

void stage_generate(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto wstore = load_model(cfg, out, Stage::TrainWorld, "world.ckpt");
  const auto sstore = load_model(cfg, out, Stage::TrainSize, "size.ckpt");
  const auto norm = load_norm(out);
  const auto grids = load_latents(stage_dir(out, Stage::Synth), "scene", cfg.synth_scenes);
  const uint64_t seed = stage_seed(cfg, Stage::Generate);
  const fs::path dir = stage_dir(out, Stage::Generate);
  json entries = json::array();
  for (int i = cfg.train_scenes; i < cfg.synth_scenes; ++i) {
    const auto sk = load_sketches(cfg, out, i).front();
    world::SampleOptions opt = cfg.sample;
    opt.seed = derive_seed(seed, static_cast<uint64_t>(i), opt.seed);
    const auto layout = grids[static_cast<size_t>(i)].layout;
    const auto gen = norm.invert(world::generate_world(wstore, cfg.world, &sk, layout, opt));
    const auto predicted = world::resolve_layout(std::nullopt, &sstore, sk);
    const auto gen_pred = norm.invert(world::generate_world(wstore, cfg.world, &sk, predicted, opt));
    io::write_latents(dir / (scene_name(i) + ".nwlat"), gen);
    io::write_latents(dir / (scene_name(i) + "_predicted.nwlat"), gen_pred);
    entries.push_back({{"scene", i},
                       {"layout", layout_json(layout)},
                       {"tokens", gen.token_count()},
                       {"predicted_layout", layout_json(predicted)},
                       {"predicted_tokens", gen_pred.token_count()}});
  }
  io::write_json(dir / "generate.json", entries);
  note(log, "generated " + std::to_string(entries.size()) + " validation scenes");
}

json stage_eval(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const uint64_t seed = stage_seed(cfg, Stage::Eval);
  metrics::MetricReport report;
  const auto vstore = load_model(cfg, out, Stage::TrainVae, "vae.ckpt");

  // chunk VAE reconstruction on training chunks
  {
    const auto chunks = load_bootstrap_chunks(cfg, out);
    std::vector<vae::VaeSample> data;
    const size_t n = std::min(chunks.size(), static_cast<size_t>(cfg.eval.vae_chunks));
    for (size_t i = 0; i < n; ++i) {
      const size_t k = i * chunks.size() / n;
      data.push_back(vae::prepare_sample(chunks[k], cfg.vae, derive_seed(seed, 1, k), 16, 16));
    }
    const auto r = score_reconstruction(vstore, cfg.vae, data, derive_seed(seed, 2));
    report.set("vae.iou_predicted_height", r.iou_predicted_height);
    report.set("vae.iou_true_height", r.iou_true_height);
    report.set("vae.iou_height_gap", std::abs(r.iou_true_height - r.iou_predicted_height));
    report.set("vae.rgb_rmse", r.rgb_rmse);
  }

  const auto norm = load_norm(out);
  {
    const auto qstore = load_model(cfg, out, Stage::TrainQuad, "quad.ckpt");
    const auto grids = normalized(load_latents(stage_dir(out, Stage::Encode), "scene", cfg.bootstrap_scenes), norm);
    const auto held = quads_of(grids, cfg.bootstrap_scenes - cfg.quad_holdout_scenes, cfg.bootstrap_scenes);
    const auto ev = quad::evaluate_velocity(qstore, cfg.quad, held, derive_seed(seed, 3));
    report.set("quad.heldout_velocity_mse", ev.model_mse);
    report.set("quad.heldout_zero_mse", ev.zero_mse);
  }

  const auto truth = load_latents(stage_dir(out, Stage::Synth), "scene", cfg.synth_scenes);
  double rmse = 0.0, zero = 0.0, cd = 0.0, fscore = 0.0;
  int meshes = 0;
  std::vector<geo::Points> gen_clouds, ref_clouds;
  const int val = cfg.synth_scenes - cfg.train_scenes;
  for (int i = cfg.train_scenes; i < cfg.synth_scenes; ++i) {
    const auto& gt = truth[static_cast<size_t>(i)];
    const auto gen = io::read_latents(stage_dir(out, Stage::Generate) / (scene_name(i) + ".nwlat"));
    require(gt.provenance == Provenance::NuiSceneSynthesized && gen.provenance == Provenance::WorldModelGenerated,
            ErrorKind::InvalidArgument, "mixed-provenance comparison for scene " + std::to_string(i));
    rmse += metrics::latent_rmse(norm.apply(gen), norm.apply(gt));
    zero += std::sqrt(norm.apply(gt).tokens.array().square().mean());
    const auto gm = scene_mesh(vstore, cfg.vae, gen), tm = scene_mesh(vstore, cfg.vae, gt);
    if (gm.empty() || tm.empty()) continue;
    const uint64_t s = derive_seed(seed, 4, static_cast<uint64_t>(i));
    const auto gp = geo::sample_surface_points(gm, static_cast<size_t>(cfg.eval.scene_points), s).points;
    const auto tp = geo::sample_surface_points(tm, static_cast<size_t>(cfg.eval.scene_points), s + 1).points;
    cd += metrics::chamfer_distance(gp, tp);
    fscore += metrics::f_score(gp, tp, cfg.eval.fscore_tau).f;
    ++meshes;
    for (auto& c : quad_clouds(gm, gen.layout, cfg.eval.feature_points, s + 2)) gen_clouds.push_back(std::move(c));
    for (auto& c : quad_clouds(tm, gt.layout, cfg.eval.feature_points, s + 3)) ref_clouds.push_back(std::move(c));
  }
  report.set("world.latent_rmse", rmse / val);
  report.set("world.latent_rmse_zero", zero / val);
  if (meshes > 0) {
    report.set("scene.chamfer", cd / meshes);
    report.set("scene.fscore", fscore / meshes);
  }
  if (gen_clouds.size() >= 2 && ref_clouds.size() >= 2) {
    const metrics::PointFeatureNet net;
    report.set("scene.fpd", metrics::feature_distance(gen_clouds, ref_clouds, metrics::FeatureMode::Frechet, net));
    report.set("scene.kpd",
               std::max(0.0, metrics::feature_distance(gen_clouds, ref_clouds, metrics::FeatureMode::Kernel, net)));
  }

  {
    const auto sstore = load_model(cfg, out, Stage::TrainSize, "size.ckpt");
    const auto train = size_samples(cfg, out, truth, 0, cfg.train_scenes);
    const auto valset = size_samples(cfg, out, truth, cfg.train_scenes, cfg.synth_scenes);
    ParameterStore<float> untrained;
    world::init_size_params(untrained, cfg.size, train, derive_seed(stage_seed(cfg, Stage::TrainSize), 1));
    untrained.step = 1;  // scored as-is, without training
    report.set("size.val_error", world::size_error(sstore, valset));
    report.set("size.untrained_val_error", world::size_error(untrained, valset));
    report.set("size.train_error", world::size_error(sstore, train));
  }

  report.settings = {{"val_scenes", val},
                     {"meshes_compared", meshes},
                     {"quad_clouds", gen_clouds.size()},
                     {"scene_points", cfg.eval.scene_points},
                     {"feature_points", cfg.eval.feature_points},
                     {"fscore_tau", cfg.eval.fscore_tau},
                     {"vae_chunks", cfg.eval.vae_chunks},
                     {"seed", cfg.seed},
                     {"feature_net_seed", metrics::PointFeatureNet::kPinnedSeed}};
  json hashes = json::object();
  for (Stage u : upstream(Stage::Eval)) hashes[std::string(to_string(u))] = cfg.stage_hash(u);
  report.settings["stage_hashes"] = hashes;
  report.validate();
  const json doc = report.to_json();
  io::write_json(stage_dir(out, Stage::Eval) / "report.json", doc);
  note(log, "wrote metric report");
  return doc;
}

void stage_export(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  const auto vstore = load_model(cfg, out, Stage::TrainVae, "vae.ckpt");
  const fs::path dir = stage_dir(out, Stage::Export);
  for (int i = cfg.train_scenes; i < cfg.synth_scenes; ++i) {
    const auto gen = io::read_latents(stage_dir(out, Stage::Generate) / (scene_name(i) + ".nwlat"));
    const auto gt = io::read_latents(stage_dir(out, Stage::Synth) / (scene_name(i) + ".nwlat"));
    geo::write_ply(scene_mesh(vstore, cfg.vae, gen), dir / (scene_name(i) + "_generated.ply"));
    geo::write_ply(scene_mesh(vstore, cfg.vae, gt), dir / (scene_name(i) + "_reference.ply"));
  }
  note(log, "exported meshes to " + dir.string());
}

}  // namespace

void run_stage(const PipelineConfig& cfg, const fs::path& out, Stage s, const Log& log) {
  cfg.validate();
  for (Stage u : upstream(s)) check_stage(cfg, out, u);
  const fs::path dir = stage_dir(out, s);
  fs::remove_all(dir);
  fs::create_directories(dir);
  note(log, "[" + std::string(to_string(s)) + "] config " + cfg.stage_hash(s));
  switch (s) {
    case Stage::Forge: stage_forge(cfg, out, log); break;
    case Stage::TrainVae: stage_train_vae(cfg, out, log); break;
    case Stage::Encode: stage_encode(cfg, out, log); break;
    case Stage::TrainQuad: stage_train_quad(cfg, out, log); break;
    case Stage::Synth: stage_synth(cfg, out, log); break;
    case Stage::Sketch: stage_sketch(cfg, out, log); break;
    case Stage::TrainWorld: stage_train_world(cfg, out, log); break;
    case Stage::TrainSize: stage_train_size(cfg, out, log); break;
    case Stage::Generate: stage_generate(cfg, out, log); break;
    case Stage::Eval: stage_eval(cfg, out, log); break;
    case Stage::Export: stage_export(cfg, out, log); break;
  }
  io::write_json(dir / "config.json", cfg.to_json());
  write_manifest(cfg, out, s);
}

json run_pipeline(const PipelineConfig& cfg, const fs::path& out, const Log& log) {
  for (Stage s : kStages) run_stage(cfg, out, s, log);
  return io::read_json(stage_dir(out, Stage::Eval) / "report.json");
}

// --- shared pieces ------------------------------------------------------------

std::vector<geo::SceneChunkSample> load_bootstrap_chunks(const PipelineConfig& cfg, const fs::path& out) {
  check_stage(cfg, out, Stage::Forge);
  std::vector<geo::SceneChunkSample> all;
  for (int i = 0; i < cfg.bootstrap_scenes; ++i) {
    auto part = io::read_chunks(stage_dir(out, Stage::Forge) / ("scene_" + std::to_string(i) + ".nwchunk"));
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

flow::LatentNorm load_norm(const fs::path& out) {
  return flow::LatentNorm::from_json(io::read_json(stage_dir(out, Stage::Encode) / "norm.json"));
}

std::vector<SceneLatentGrid> load_latents(const fs::path& dir, const std::string& prefix, int count) {
  std::vector<SceneLatentGrid> grids;
  for (int i = 0; i < count; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03d.nwlat", prefix.c_str(), i);
    grids.push_back(io::read_latents(dir / buf));
  }
  return grids;
}

sketch::SketchEncoder sketch_encoder(const PipelineConfig& cfg) {
  return sketch::SketchEncoder::from_assets(NUIWORLD_ASSET_DIR, cfg.sketch_patch, cfg.world.sketch_dim);
}

std::vector<sketch::SketchEncoding> load_sketches(const PipelineConfig& cfg, const fs::path& out, int scene) {
  static thread_local std::optional<sketch::SketchEncoder> enc;
  if (!enc || enc->patch() != cfg.sketch_patch || enc->dim() != cfg.world.sketch_dim) enc = sketch_encoder(cfg);
  std::vector<sketch::SketchEncoding> e;
  for (auto v : sketch::kVariants) {
    const auto img = sketch::read_png(stage_dir(out, Stage::Sketch) /
                                      (scene_name(scene) + "_" + std::string(sketch::to_string(v)) + ".png"));
    e.push_back(enc->encode(img.channels == 1 ? img : sketch::to_gray(img)));
  }
  return e;
}

ReconstructionScore score_reconstruction(const ParameterStore<float>& store, const vae::VaeConfig& cfg,
                                         const std::vector<vae::VaeSample>& chunks, uint64_t seed) {
  require(!chunks.empty(), ErrorKind::EmptyInput, "no chunks to score");
  ReconstructionScore s;
  for (size_t i = 0; i < chunks.size(); ++i) {
    const auto& ch = chunks[i];
    const auto enc = vae::encode_chunk(store, cfg, vae::fit_point_count(ch.surface, static_cast<size_t>(cfg.n_pc),
                                                                        derive_seed(seed, 1, i)));
    const MatF tokens = vae::decoder_tokens(store, cfg, enc.mean);
    const int h_hat = vae::predict_height(store, cfg, tokens);
    const int h = vae::occupied_height(ch.grid);
    auto predictor = [&](int limit) {
      return [&, limit](const geo::Points& q) {
        const auto logits = vae::decode_query_occupancy(store, cfg, tokens, q);
        std::vector<uint8_t> occ(logits.size());
        for (size_t k = 0; k < logits.size(); ++k)
          occ[k] = logits[k] > 0.0f && q(static_cast<Eigen::Index>(k), 1) < static_cast<float>(limit) * cfg.voxel_edge();
        return occ;
      };
    };
    const uint64_t qs = derive_seed(seed, 2, i);
    s.iou_predicted_height += metrics::occupancy_iou(predictor(h_hat), ch.grid, qs);
    s.iou_true_height += metrics::occupancy_iou(predictor(h), ch.grid, qs);
    s.rgb_rmse += metrics::rgb_rmse(vae::decode_query_color(store, cfg, tokens, ch.surface.points), ch.surface.colors);
  }
  const double n = static_cast<double>(chunks.size());
  s.iou_predicted_height /= n;
  s.iou_true_height /= n;
  s.rgb_rmse /= n;
  return s;
}

geo::TriMesh scene_mesh(const ParameterStore<float>& store, const vae::VaeConfig& cfg, const SceneLatentGrid& g) {
  return vae::decode_scene_mesh(store, cfg, g);
}

std::vector<geo::Points> quad_clouds(const geo::TriMesh& mesh, const forge::LayoutSpec& layout, int points,
                                     uint64_t seed) {
  std::vector<geo::Points> clouds;
  if (mesh.empty() || layout.rows < 2 || layout.cols < 2) return clouds;
  const size_t total = static_cast<size_t>(points) * static_cast<size_t>(layout.area()) / 2 + 1;
  const auto cloud = geo::sample_surface_points(mesh, total, seed);
  for (int r = 0; r + 1 < layout.rows; ++r)
    for (int c = 0; c + 1 < layout.cols; ++c) {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
        const float x = cloud.points(i, 0), z = cloud.points(i, 2);
        if (x >= 2.0f * c && x <= 2.0f * c + 4.0f && z >= 2.0f * r && z <= 2.0f * r + 4.0f) keep.push_back(i);
      }
      if (keep.empty()) continue;
      geo::ColoredPointCloud sub;
      sub.points.resize(static_cast<Eigen::Index>(keep.size()), 3);
      for (size_t k = 0; k < keep.size(); ++k) sub.points.row(static_cast<Eigen::Index>(k)) = cloud.points.row(keep[k]);
      clouds.push_back(vae::fit_point_count(sub, static_cast<size_t>(points), derive_seed(seed, static_cast<uint64_t>(r),
                                                                                          static_cast<uint64_t>(c)))
                           .points);
    }
  return clouds;
}

std::vector<ProfileRow> profile_layouts(const PipelineConfig& cfg, const fs::path& out,
                                        const std::vector<forge::LayoutSpec>& layouts, bool decode) {
  using clock = std::chrono::steady_clock;
  const auto wstore = load_model(cfg, out, Stage::TrainWorld, "world.ckpt");
  const auto qstore = load_model(cfg, out, Stage::TrainQuad, "quad.ckpt");
  std::optional<ParameterStore<float>> vstore;
  if (decode) vstore = load_model(cfg, out, Stage::TrainVae, "vae.ckpt");
  const auto norm = load_norm(out);
  const auto sk = load_sketches(cfg, out, cfg.train_scenes).front();
  const auto field = quad::model_field(qstore, cfg.quad);
  std::vector<ProfileRow> rows;
  for (const auto& l : layouts) {
    ProfileRow row;
    row.layout = l;
    world::ForwardStats st;
    const auto t0 = clock::now();
    const auto gen = world::generate_world(wstore, cfg.world, &sk, l, cfg.sample, &st);
    row.embed_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    row.tokens = gen.token_count();
    row.peak_attention = st.peak_attention;
    row.world_steps = cfg.sample.steps;
    std::vector<quad::QuadCall> trace;
    quad::raster_scan_generate(l, field, cfg.V, cfg.c, 1, cfg.seed, &trace);
    row.raster_quad_calls = static_cast<int>(trace.size());
    if (decode) {
      const auto t1 = clock::now();
      scene_mesh(*vstore, cfg.vae, norm.invert(gen));
      row.decode_seconds = std::chrono::duration<double>(clock::now() - t1).count();
    }
    rows.push_back(row);
  }
  return rows;
}

json to_json(const ProfileRow& r) {
  json j = {{"layout", layout_json(r.layout)},
            {"tokens", r.tokens},
            {"peak_attention_elements", r.peak_attention},
            {"world_steps", r.world_steps},
            {"raster_quad_calls", r.raster_quad_calls},
            {"embed_seconds", r.embed_seconds}};
  if (r.decode_seconds >= 0.0) j["decode_seconds"] = r.decode_seconds;
  return j;
}

json run_generate_job(const PipelineConfig& cfg, const fs::path& out, const json& job) {
  require(job.is_object(), ErrorKind::InvalidArgument, "generation job must be a JSON object");
  require(job.contains("out"), ErrorKind::InvalidArgument, "generation job needs an \"out\" path");
  const auto wstore = load_model(cfg, out, Stage::TrainWorld, "world.ckpt");
  sketch::SketchEncoding sk;
  if (job.contains("sketch")) {
    const auto img = sketch::read_png(job.at("sketch").get<std::string>());
    sk = sketch_encoder(cfg).encode(img.channels == 1 ? img : sketch::to_gray(img));
  } else {
    require(job.contains("scene"), ErrorKind::InvalidArgument, "generation job needs \"sketch\" or \"scene\"");
    check_stage(cfg, out, Stage::Sketch);
    const int scene = job.at("scene").get<int>();
    require(scene >= 0 && scene < cfg.synth_scenes, ErrorKind::InvalidArgument, "scene index out of range");
    const auto variant = job.value("variant", std::string(sketch::to_string(sketch::Variant::ColoredCanny)));
    size_t v = sketch::kVariants.size();
    for (size_t k = 0; k < sketch::kVariants.size(); ++k)
      if (sketch::to_string(sketch::kVariants[k]) == variant) v = k;
    require(v < sketch::kVariants.size(), ErrorKind::InvalidArgument, "unknown sketch variant '" + variant + "'");
    sk = load_sketches(cfg, out, scene)[v];
  }
  std::optional<forge::LayoutSpec> layout;
  const json lj = job.value("layout", json("predict"));
  if (!(lj.is_string() && lj.get<std::string>() == "predict")) {
    require(lj.is_array() && lj.size() == 2, ErrorKind::InvalidArgument, "layout must be [R, C] or \"predict\"");
    layout = layout_from_json(lj);
    require(layout->rows >= 1 && layout->cols >= 1, ErrorKind::InvalidArgument, "layout must be positive");
  }
  std::optional<ParameterStore<float>> sstore;
  if (!layout && fs::exists(stage_dir(out, Stage::TrainSize) / "manifest.json"))
    sstore = load_model(cfg, out, Stage::TrainSize, "size.ckpt");
  const auto resolved = world::resolve_layout(layout, sstore ? &*sstore : nullptr, sk);
  world::SampleOptions opt = cfg.sample;
  opt.steps = job.value("steps", opt.steps);
  opt.guidance = job.value("guidance", opt.guidance);
  opt.seed = job.value("seed", opt.seed);
  const auto grid = load_norm(out).invert(world::generate_world(wstore, cfg.world, &sk, resolved, opt));
  const fs::path stem = job.at("out").get<std::string>();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  io::write_latents(stem.string() + ".nwlat", grid);
  json result = {{"layout", layout_json(resolved)},
                 {"layout_source", layout ? "explicit" : "predicted"},
                 {"tokens", grid.token_count()},
                 {"steps", opt.steps},
                 {"guidance", opt.guidance},
                 {"seed", opt.seed},
                 {"world_config_hash", cfg.stage_hash(Stage::TrainWorld)},
                 {"producer", kProducerVersion},
                 {"provenance", std::string(to_string(grid.provenance))}};
  if (job.value("mesh", false)) {
    const auto vstore = load_model(cfg, out, Stage::TrainVae, "vae.ckpt");
    geo::write_ply(scene_mesh(vstore, cfg.vae, grid), stem.string() + ".ply");
    result["mesh"] = stem.string() + ".ply";
  }
  io::write_json(stem.string() + ".nwlat.json", result);
  return result;
}

}  // namespace nuiworld::pipeline
