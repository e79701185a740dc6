#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "nuiworld/geometry.hpp"
#include "nuiworld/nn/tape.hpp"

namespace nuiworld::sketch {

using nn::Mat;

/// Row-major pixels with interleaved channels, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int ch, float fill = 0.0f)
      : width(w), height(h), channels(ch), data(static_cast<size_t>(w) * h * ch, fill) {}
  float& at(int x, int y, int ch = 0) { return data[(static_cast<size_t>(y) * width + x) * channels + ch]; }
  float at(int x, int y, int ch = 0) const { return data[(static_cast<size_t>(y) * width + x) * channels + ch]; }
  bool operator==(const Image&) const = default;
};

Image to_gray(const Image& img);

struct RenderConfig {
  int resolution = 128;
  double azimuth_deg = 45.0;
  double elevation_deg = 30.0;
  double margin = 0.05;
  std::array<float, 3> light{0.4f, 0.8f, 0.45f};  // direction toward the light
  float ambient = 0.35f;
  std::array<float, 3> base_color{0.75f, 0.75f, 0.75f};  // surface color when rendering colorless
};

/// Orthographic z-buffered flat-shaded render on white. The image is
/// rolled so the scene x axis (columns, C) runs horizontally.
Image render_scene(const geo::TriMesh& mesh, bool colored, const RenderConfig& cfg = {});

/// Binary edge map; thresholds are fractions of the largest gradient.
Image canny_edges(const Image& img, double low = 0.1, double high = 0.2, double sigma = 1.4);
/// Sobel gradient magnitude scaled to [0, 1].
Image soft_edges(const Image& img);

enum class Variant { ColoredCanny, ColorlessCanny, ColoredSoft, ColorlessSoft };
inline constexpr std::array<Variant, 4> kVariants = {Variant::ColoredCanny, Variant::ColorlessCanny,
                                                     Variant::ColoredSoft, Variant::ColorlessSoft};
std::string_view to_string(Variant v);

struct SketchConfig {
  RenderConfig render;
  double canny_low = 0.1;
  double canny_high = 0.2;
  double canny_sigma = 1.4;
};

/// {colored, colorless} x {canny, soft}, in kVariants order.
std::vector<Image> sketch_variants(const geo::TriMesh& mesh, const SketchConfig& cfg = {});

struct SketchEncoding {
  Mat<float> tokens;  // S_tok x d_sk
  Mat<float> cls;     // 1 x d_sk
};

/// Frozen patch encoder: patches -> fixed projection + 2-d sinusoidal
/// position. cls is the mean position embedding weighted by each patch's
/// mean intensity, through a second fixed projection, so it reflects where
/// the strokes are. Weights are never trained.
class SketchEncoder {
 public:
  static constexpr uint64_t kPinnedSeed = 0x5E7C4E1C0DE5ULL;

  /// Deterministic weights for (patch, dim).
  static SketchEncoder generate(int patch, int dim);
  /// Reads a shipped blob and checks it against its pinned hash.
  static SketchEncoder load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// assets/sketch_encoder_p<patch>_d<dim>.bin under dir.
  static std::filesystem::path asset_path(const std::filesystem::path& dir, int patch, int dim);
  static SketchEncoder from_assets(const std::filesystem::path& dir, int patch, int dim);

  SketchEncoding encode(const Image& sketch) const;
  int patch() const { return patch_; }
  int dim() const { return dim_; }
  int tokens_for(int resolution) const { return (resolution / patch_) * (resolution / patch_); }
  uint64_t hash() const;

 private:
  int patch_ = 0;
  int dim_ = 0;
  Mat<float> proj_;  // patch^2 x dim
  Mat<float> cls_;   // dim x dim
};

/// Pinned FNV-1a hashes of the shipped encoder blobs.
uint64_t pinned_encoder_hash(int patch, int dim);

/// 8-bit PNG; 1-channel images are grayscale, 3-channel RGB.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace nuiworld::sketch
