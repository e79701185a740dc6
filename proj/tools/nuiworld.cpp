#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nuiworld/formats.hpp"
#include "nuiworld/pipeline.hpp"

using namespace nuiworld;
using nlohmann::json;
namespace fs = std::filesystem;
namespace pl = nuiworld::pipeline;

namespace {

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out = "runs/toy";
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "pipeline config JSON (default: builtin toy settings)");
  app->add_option("--seed", c.seed, "overrides the config seed");
  app->add_option("--out", c.out, "run directory")->capture_default_str();
  app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

pl::PipelineConfig resolve(const Common& c) {
  pl::PipelineConfig cfg = c.config.empty() ? pl::toy_config() : pl::PipelineConfig::from_json(io::read_json(c.config));
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

pl::Log logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
}

void print_report(const json& report) {
  const json& values = report.at("values");
  size_t width = 0;
  for (auto it = values.begin(); it != values.end(); ++it) width = std::max(width, it.key().size());
  for (auto it = values.begin(); it != values.end(); ++it)
    std::printf("%-*s  %12.6f\n", static_cast<int>(width), it.key().c_str(), it->get<double>());
}

std::vector<forge::LayoutSpec> parse_layouts(const std::string& text) {
  std::vector<forge::LayoutSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int r = 0, c = 0;
    char x = 0;
    std::stringstream is(item);
    require(static_cast<bool>(is >> r >> x >> c) && (x == 'x' || x == 'X') && r >= 1 && c >= 1,
            ErrorKind::InvalidArgument, "layout '" + item + "' is not of the form RxC");
    out.push_back({r, c});
  }
  require(!out.empty(), ErrorKind::InvalidArgument, "no layouts given");
  return out;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Dependency: return 3;
    case ErrorKind::StaleArtifact: return 4;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nuiworld: sketch-conditioned 3D world generation on chunk vector sets"};
  app.require_subcommand(1);
  Common common;

  std::vector<std::pair<CLI::App*, pl::Stage>> stage_cmds;
  const std::vector<std::pair<pl::Stage, std::string>> stage_help = {
      {pl::Stage::Forge, "forge the bootstrap scene dataset"},
      {pl::Stage::TrainVae, "train the chunk vector-set VAE"},
      {pl::Stage::Encode, "encode bootstrap scenes to latent grids"},
      {pl::Stage::TrainQuad, "train the quad-chunk outpainting flow"},
      {pl::Stage::Synth, "synthesize scenes by raster-scan outpainting"},
      {pl::Stage::Sketch, "render sketches of the synthesized scenes"},
      {pl::Stage::TrainWorld, "train the sketch-conditioned world model"},
      {pl::Stage::TrainSize, "train the layout size predictor"},
      {pl::Stage::Eval, "compute the metric report"},
      {pl::Stage::Export, "write generated and reference meshes as PLY"}};
  for (const auto& [st, help] : stage_help) {
    auto* sub = app.add_subcommand(std::string(pl::to_string(st)), help);
    add_common(sub, common);
    stage_cmds.push_back({sub, st});
  }

  auto* gen = app.add_subcommand("generate", "generate validation scenes, or run one JSON job with --job");
  add_common(gen, common);
  std::string job_path;
  gen->add_option("--job", job_path, "generation job descriptor (JSON)");

  auto* run = app.add_subcommand("run", "run a single stage");
  add_common(run, common);
  std::string stage_name;
  run->add_option("--stage", stage_name, "stage name")->required();

  auto* pipe = app.add_subcommand("pipeline", "run every stage in order");
  add_common(pipe, common);
  std::string last_stage;
  pipe->add_option("--stage", last_stage, "stop after this stage");

  auto* prof = app.add_subcommand("profile", "token and memory statistics of world generation per layout");
  add_common(prof, common);
  std::string layouts = "2x2,4x4,8x20,15x15,18x51";
  bool decode = false;
  prof->add_option("--layouts", layouts, "comma-separated RxC list")->capture_default_str();
  prof->add_flag("--decode", decode, "also time mesh decoding");

  auto* enc = app.add_subcommand("make-encoder", "regenerate a frozen sketch-encoder weight blob");
  int patch = 8, dim = 64;
  std::string asset_dir = NUIWORLD_ASSET_DIR;
  enc->add_option("--patch", patch)->capture_default_str();
  enc->add_option("--dim", dim)->capture_default_str();
  enc->add_option("--dir", asset_dir)->capture_default_str();

  auto* show = app.add_subcommand("config", "print the resolved pipeline config");
  add_common(show, common);

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [sub, st] : stage_cmds) {
      if (!sub->parsed()) continue;
      const auto cfg = resolve(common);
      pl::run_stage(cfg, common.out, st, logger(common));
      if (st == pl::Stage::Eval) print_report(io::read_json(pl::stage_dir(common.out, st) / "report.json"));
      return 0;
    }
    if (gen->parsed()) {
      const auto cfg = resolve(common);
      if (job_path.empty()) {
        pl::run_stage(cfg, common.out, pl::Stage::Generate, logger(common));
      } else {
        std::cout << pl::run_generate_job(cfg, common.out, io::read_json(job_path)).dump(2) << "\n";
      }
    } else if (run->parsed()) {
      pl::run_stage(resolve(common), common.out, pl::stage_from_string(stage_name), logger(common));
    } else if (pipe->parsed()) {
      const auto cfg = resolve(common);
      const auto stop = last_stage.empty() ? pl::Stage::Export : pl::stage_from_string(last_stage);
      for (pl::Stage s : pl::kStages) {
        pl::run_stage(cfg, common.out, s, logger(common));
        if (s == pl::Stage::Eval) print_report(io::read_json(pl::stage_dir(common.out, s) / "report.json"));
        if (s == stop) break;
      }
    } else if (prof->parsed()) {
      const auto cfg = resolve(common);
      const auto rows = pl::profile_layouts(cfg, common.out, parse_layouts(layouts), decode);
      json doc = json::array();
      std::printf("%-8s %8s %14s %6s %12s %10s %10s\n", "layout", "tokens", "peak_attn", "steps", "quad_calls",
                  "embed_s", "decode_s");
      for (const auto& r : rows) {
        doc.push_back(pl::to_json(r));
        const std::string l = std::to_string(r.layout.rows) + "x" + std::to_string(r.layout.cols);
        std::printf("%-8s %8d %14lld %6d %12d %10.3f %10.3f\n", l.c_str(), r.tokens,
                    static_cast<long long>(r.peak_attention), r.world_steps, r.raster_quad_calls, r.embed_seconds,
                    r.decode_seconds);
      }
      io::write_json(fs::path(common.out) / "profile.json", doc);
    } else if (enc->parsed()) {
      const auto path = sketch::SketchEncoder::asset_path(asset_dir, patch, dim);
      fs::create_directories(path.parent_path());
      const auto e = sketch::SketchEncoder::generate(patch, dim);
      e.save(path);
      std::printf("%s %s\n", path.string().c_str(), hex64(e.hash()).c_str());
    } else if (show->parsed()) {
      std::cout << resolve(common).to_json().dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
