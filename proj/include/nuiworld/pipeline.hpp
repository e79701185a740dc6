#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nuiworld/forge.hpp"
#include "nuiworld/metrics.hpp"
#include "nuiworld/quadflow.hpp"
#include "nuiworld/sketch.hpp"
#include "nuiworld/vae.hpp"
#include "nuiworld/world.hpp"

namespace nuiworld::pipeline {

namespace fs = std::filesystem;

enum class Stage { Forge, TrainVae, Encode, TrainQuad, Synth, Sketch, TrainWorld, TrainSize, Generate, Eval, Export };
inline constexpr std::array<Stage, 11> kStages = {Stage::Forge,      Stage::TrainVae,  Stage::Encode,   Stage::TrainQuad,
                                                  Stage::Synth,      Stage::Sketch,    Stage::TrainWorld, Stage::TrainSize,
                                                  Stage::Generate,   Stage::Eval,      Stage::Export};
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);
/// Stages whose artifacts this one reads.
std::vector<Stage> upstream(Stage s);

struct EvalConfig {
  int vae_chunks = 16;       // training chunks scored for reconstruction
  int scene_points = 8192;   // surface samples per scene for CD / F-score
  int feature_points = 2048; // per quad chunk for the feature distances
  double fscore_tau = 0.125; // one voxel edge at s = 16
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct PipelineConfig {
  forge::ForgeConfig theme = forge::builtin_theme("medieval");
  int V = 2;
  int c = 16;
  int bootstrap_scenes = 4;
  forge::LayoutSpec bootstrap_layout{6, 6};
  int synth_scenes = 32;
  int train_scenes = 28;  // the rest are validation
  forge::LayoutSampler sampler{16.0, 48.0, 0.3, {1.0, 3.0}, 3};
  vae::VaeConfig vae;
  vae::TrainConfig vae_train;
  quad::QuadConfig quad;
  quad::QuadTrainConfig quad_train;
  int quad_sample_steps = 25;
  int quad_holdout_scenes = 1;  // bootstrap scenes kept out of quad training
  sketch::SketchConfig sketch;
  int sketch_patch = 8;
  world::WorldConfig world;
  world::WorldTrainConfig world_train;
  world::SampleOptions sample;
  world::SizeConfig size;
  world::SizeTrainConfig size_train;
  EvalConfig eval;
  uint64_t seed = 0;

  /// Defaults overridden by whatever keys the document sets; (V, c),
  /// chunk size, height and sketch width are propagated to every model.
  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
  /// Hash of the settings a stage depends on, chained through its upstream stages.
  std::string stage_hash(Stage s) const;
};

/// The builtin toy pipeline settings (a few minutes on one CPU core).
PipelineConfig toy_config();

struct Manifest {
  std::string stage;
  std::string config_hash;
  uint64_t seed = 0;
  std::string producer;
  nlohmann::json upstream = nlohmann::json::object();   // stage -> config hash
  nlohmann::json artifacts = nlohmann::json::object();  // relative path -> content hash
  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

fs::path stage_dir(const fs::path& out, Stage s);
/// Dependency error when the stage never ran, StaleArtifact when it ran
/// under other settings or an artifact changed since.
Manifest check_stage(const PipelineConfig& cfg, const fs::path& out, Stage s);

using Log = std::function<void(const std::string&)>;

/// Runs one stage after checking its upstream manifests; rewrites every
/// artifact of the stage.
void run_stage(const PipelineConfig& cfg, const fs::path& out, Stage s, const Log& log = {});
/// All stages in order; returns the metric report written by eval.
nlohmann::json run_pipeline(const PipelineConfig& cfg, const fs::path& out, const Log& log = {});

// Pieces shared with the tools.

std::vector<geo::SceneChunkSample> load_bootstrap_chunks(const PipelineConfig& cfg, const fs::path& out);
flow::LatentNorm load_norm(const fs::path& out);
std::vector<SceneLatentGrid> load_latents(const fs::path& dir, const std::string& prefix, int count);
sketch::SketchEncoder sketch_encoder(const PipelineConfig& cfg);
/// Encodings of the stored sketch variants of a synthesized scene.
std::vector<sketch::SketchEncoding> load_sketches(const PipelineConfig& cfg, const fs::path& out, int scene);

struct ReconstructionScore {
  double iou_predicted_height = 0.0;
  double iou_true_height = 0.0;
  double rgb_rmse = 0.0;
};
/// Mean occupancy IoU (decoding with the predicted and the true height)
/// and color RMSE on the surface points, using the posterior mean.
ReconstructionScore score_reconstruction(const nn::ParameterStore<float>& store, const vae::VaeConfig& cfg,
                                         const std::vector<vae::VaeSample>& chunks, uint64_t seed);

/// Latents in VAE space decoded to one scene mesh.
geo::TriMesh scene_mesh(const nn::ParameterStore<float>& store, const vae::VaeConfig& cfg, const SceneLatentGrid& g);

/// 2048-point clouds from every quad window of the scene surface.
std::vector<geo::Points> quad_clouds(const geo::TriMesh& mesh, const forge::LayoutSpec& layout, int points,
                                     uint64_t seed);

struct ProfileRow {
  forge::LayoutSpec layout;
  int tokens = 0;
  int64_t peak_attention = 0;
  int world_steps = 0;
  int raster_quad_calls = 0;
  double embed_seconds = 0.0;
  double decode_seconds = -1.0;  // negative when decoding was skipped
};
/// Token and memory statistics of world generation for each layout.
std::vector<ProfileRow> profile_layouts(const PipelineConfig& cfg, const fs::path& out,
                                        const std::vector<forge::LayoutSpec>& layouts, bool decode);
nlohmann::json to_json(const ProfileRow& r);

/// Generation job: {"sketch": png path or "scene": index [+ "variant"],
/// "layout": [R, C] or "predict", "guidance", "steps", "seed", "out": path
/// stem, "mesh": bool}.
nlohmann::json run_generate_job(const PipelineConfig& cfg, const fs::path& out, const nlohmann::json& job);

}  // namespace nuiworld::pipeline
