#include "nuiworld/sketch.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <numbers>

#include "nuiworld/formats.hpp"
#include "nuiworld/nn/layers.hpp"

namespace nuiworld::sketch {

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  require(img.channels == 3, ErrorKind::InvalidArgument, "to_gray: expected 1 or 3 channels");
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) + 0.114f * img.at(x, y, 2);
  return out;
}

namespace {

using Vec3 = Eigen::Vector3d;

struct Camera {
  Vec3 right, up, forward;
};

Camera make_camera(const RenderConfig& cfg) {
  const double az = cfg.azimuth_deg * std::numbers::pi / 180.0;
  const double el = cfg.elevation_deg * std::numbers::pi / 180.0;
  const Vec3 to_cam(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
  Camera c;
  c.forward = -to_cam;
  c.right = c.forward.cross(Vec3::UnitY()).normalized();
  c.up = c.right.cross(c.forward);
  // roll so that +x lands on the image horizontal
  const double ang = std::atan2(Vec3::UnitX().dot(c.up), Vec3::UnitX().dot(c.right));
  const Vec3 r = std::cos(ang) * c.right + std::sin(ang) * c.up;
  const Vec3 u = -std::sin(ang) * c.right + std::cos(ang) * c.up;
  c.right = r;
  c.up = u;
  return c;
}

}  // namespace

Image render_scene(const geo::TriMesh& mesh, bool colored, const RenderConfig& cfg) {
  require(cfg.resolution >= 8, ErrorKind::InvalidArgument, "render resolution too small");
  require(cfg.margin >= 0.0 && cfg.margin < 0.5, ErrorKind::InvalidArgument, "render margin must be in [0, 0.5)");
  const int res = cfg.resolution;
  const int ch = colored ? 3 : 1;
  Image img(res, res, ch, 1.0f);
  if (mesh.empty()) return img;
  const Camera cam = make_camera(cfg);

  const Eigen::Index nv = mesh.vertices.rows();
  Eigen::MatrixXd proj(nv, 3);  // screen u, screen v, depth
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Vec3 p = mesh.vertices.row(i).cast<double>().transpose();
    proj(i, 0) = p.dot(cam.right);
    proj(i, 1) = p.dot(cam.up);
    proj(i, 2) = p.dot(cam.forward);
  }
  const double u0 = proj.col(0).minCoeff(), u1 = proj.col(0).maxCoeff();
  const double v0 = proj.col(1).minCoeff(), v1 = proj.col(1).maxCoeff();
  const double extent = std::max({u1 - u0, v1 - v0, 1e-9});
  const double scale = (1.0 - 2.0 * cfg.margin) * res / extent;
  const double cu = 0.5 * (u0 + u1), cv = 0.5 * (v0 + v1);
  for (Eigen::Index i = 0; i < nv; ++i) {
    proj(i, 0) = 0.5 * res + (proj(i, 0) - cu) * scale;
    proj(i, 1) = 0.5 * res - (proj(i, 1) - cv) * scale;
  }

  Vec3 light(cfg.light[0], cfg.light[1], cfg.light[2]);
  light.normalize();
  std::vector<double> zbuf(static_cast<size_t>(res) * res, std::numeric_limits<double>::infinity());
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
    const int ia = mesh.faces(f, 0), ib = mesh.faces(f, 1), ic = mesh.faces(f, 2);
    const Vec3 a = mesh.vertices.row(ia).cast<double>().transpose();
    const Vec3 b = mesh.vertices.row(ib).cast<double>().transpose();
    const Vec3 c = mesh.vertices.row(ic).cast<double>().transpose();
    Vec3 n = (b - a).cross(c - a);
    if (n.squaredNorm() == 0.0) continue;
    n.normalize();
    if (n.dot(cam.forward) > 0.0) n = -n;
    const double shade = cfg.ambient + (1.0 - cfg.ambient) * std::max(0.0, n.dot(light));
    std::array<double, 3> color{cfg.base_color[0], cfg.base_color[1], cfg.base_color[2]};
    if (colored && mesh.has_colors())
      for (int k = 0; k < 3; ++k)
        color[k] = (mesh.vertex_colors(ia, k) + mesh.vertex_colors(ib, k) + mesh.vertex_colors(ic, k)) / 3.0;

    const double ax = proj(ia, 0), ay = proj(ia, 1), bx = proj(ib, 0), by = proj(ib, 1);
    const double cx = proj(ic, 0), cy = proj(ic, 1);
    const double area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    if (std::abs(area) < 1e-12) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({ax, bx, cx}))));
    const int x1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({ax, bx, cx}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({ay, by, cy}))));
    const int y1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({ay, by, cy}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / area;
        const double w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double z = w0 * proj(ia, 2) + w1 * proj(ib, 2) + w2 * proj(ic, 2);
        double& zb = zbuf[static_cast<size_t>(y) * res + x];
        if (z >= zb) continue;
        zb = z;
        if (colored) {
          for (int k = 0; k < 3; ++k) img.at(x, y, k) = static_cast<float>(std::clamp(color[k] * shade, 0.0, 1.0));
        } else {
          const double lum = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2];
          img.at(x, y) = static_cast<float>(std::clamp(lum * shade, 0.0, 1.0));
        }
      }
  }
  return img;
}

namespace {

// Separable Gaussian blur with clamped borders.
Image blur(const Image& g, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  const int w = g.width, h = g.height;
  std::vector<double> tmp(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<size_t>(i + r)] * g.at(std::clamp(x + i, 0, w - 1), y);
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  Image out(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out.at(x, y) = static_cast<float>(acc);
    }
  return out;
}

struct Gradients {
  std::vector<double> gx, gy, mag;
  double max = 0.0;
};

Gradients sobel(const Image& g) {
  const int w = g.width, h = g.height;
  Gradients out;
  out.gx.resize(static_cast<size_t>(w) * h);
  out.gy.resize(out.gx.size());
  out.mag.resize(out.gx.size());
  auto px = [&](int x, int y) { return static_cast<double>(g.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1))); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      const size_t i = static_cast<size_t>(y) * w + x;
      out.gx[i] = gx;
      out.gy[i] = gy;
      out.mag[i] = std::hypot(gx, gy);
      out.max = std::max(out.max, out.mag[i]);
    }
  return out;
}

}  // namespace

Image canny_edges(const Image& img, double low, double high, double sigma) {
  require(0.0 < low && low < high, ErrorKind::InvalidArgument, "canny: need 0 < low < high");
  require(sigma > 0.0, ErrorKind::InvalidArgument, "canny: sigma must be positive");
  const Image g = blur(to_gray(img), sigma);
  const Gradients gr = sobel(g);
  const int w = g.width, h = g.height;
  Image out(w, h, 1, 0.0f);
  if (gr.max <= 1e-12) return out;

  // non-maximum suppression along the quantized gradient direction; ties
  // go to the pixel on the negative side so plateaus stay one pixel wide
  std::vector<double> nms(gr.mag.size(), 0.0);
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const double m = gr.mag[i];
      if (m == 0.0) continue;
      double ang = std::atan2(gr.gy[i], gr.gx[i]) * 180.0 / std::numbers::pi;
      if (ang < 0) ang += 180.0;
      int dx, dy;
      if (ang < 22.5 || ang >= 157.5) dx = 1, dy = 0;
      else if (ang < 67.5) dx = 1, dy = 1;
      else if (ang < 112.5) dx = 0, dy = 1;
      else dx = -1, dy = 1;
      const double pos = gr.mag[static_cast<size_t>(y + dy) * w + x + dx];
      const double neg = gr.mag[static_cast<size_t>(y - dy) * w + x - dx];
      if (m >= pos && m > neg) nms[i] = m;
    }

  const double hi = high * gr.max, lo = low * gr.max;
  std::deque<size_t> frontier;
  for (size_t i = 0; i < nms.size(); ++i)
    if (nms[i] >= hi) {
      out.data[i] = 1.0f;
      frontier.push_back(i);
    }
  while (!frontier.empty()) {
    const size_t i = frontier.front();
    frontier.pop_front();
    const int x = static_cast<int>(i % static_cast<size_t>(w)), y = static_cast<int>(i / static_cast<size_t>(w));
    for (int oy = -1; oy <= 1; ++oy)
      for (int ox = -1; ox <= 1; ++ox) {
        const int nx = x + ox, ny = y + oy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const size_t j = static_cast<size_t>(ny) * w + nx;
        if (out.data[j] == 0.0f && nms[j] >= lo) {
          out.data[j] = 1.0f;
          frontier.push_back(j);
        }
      }
  }
  return out;
}

Image soft_edges(const Image& img) {
  const Image g = to_gray(img);
  const Gradients gr = sobel(g);
  Image out(g.width, g.height, 1, 0.0f);
  if (gr.max <= 1e-12) return out;
  for (size_t i = 0; i < gr.mag.size(); ++i) out.data[i] = static_cast<float>(gr.mag[i] / gr.max);
  return out;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::ColoredCanny: return "colored-canny";
    case Variant::ColorlessCanny: return "colorless-canny";
    case Variant::ColoredSoft: return "colored-soft";
    case Variant::ColorlessSoft: return "colorless-soft";
  }
  return "?";
}

std::vector<Image> sketch_variants(const geo::TriMesh& mesh, const SketchConfig& cfg) {
  require(!mesh.empty(), ErrorKind::EmptyInput, "sketch_variants: empty mesh");
  const Image colored = render_scene(mesh, true, cfg.render);
  const Image plain = render_scene(mesh, false, cfg.render);
  return {canny_edges(colored, cfg.canny_low, cfg.canny_high, cfg.canny_sigma),
          canny_edges(plain, cfg.canny_low, cfg.canny_high, cfg.canny_sigma), soft_edges(colored), soft_edges(plain)};
}

// --- frozen encoder ---------------------------------------------------------

namespace {

constexpr char kEncoderTag[4] = {'S', 'K', 'E', 'N'};

Mat<float> normal_matrix(int rows, int cols, double std, uint64_t seed) {
  Rng rng(seed);
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(std * rng.normal());
  return m;
}

std::vector<unsigned char> encoder_bytes(int patch, int dim, const Mat<float>& proj, const Mat<float>& cls) {
  std::vector<unsigned char> out(io::kMagic, io::kMagic + 6);
  out.insert(out.end(), kEncoderTag, kEncoderTag + 4);
  auto put = [&out](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + n);
  };
  const uint32_t hdr[2] = {static_cast<uint32_t>(patch), static_cast<uint32_t>(dim)};
  put(hdr, sizeof(hdr));
  put(proj.data(), sizeof(float) * static_cast<size_t>(proj.size()));
  put(cls.data(), sizeof(float) * static_cast<size_t>(cls.size()));
  return out;
}

}  // namespace

uint64_t pinned_encoder_hash(int patch, int dim) {
  if (patch == 8 && dim == 64) return 0xa1436e91db095b53ULL;
  if (patch == 16 && dim == 64) return 0x5557f1239a7f1cdcULL;
  fail(ErrorKind::InvalidArgument,
       "no shipped sketch encoder for patch " + std::to_string(patch) + ", dim " + std::to_string(dim));
}

SketchEncoder SketchEncoder::generate(int patch, int dim) {
  require(patch >= 1 && dim >= 2 && dim % 4 == 0, ErrorKind::InvalidArgument,
          "sketch encoder: patch must be positive and dim a multiple of 4");
  SketchEncoder e;
  e.patch_ = patch;
  e.dim_ = dim;
  const uint64_t s = derive_seed(kPinnedSeed, static_cast<uint64_t>(patch), static_cast<uint64_t>(dim));
  e.proj_ = normal_matrix(patch * patch, dim, 1.0 / patch, derive_seed(s, 1));
  e.cls_ = normal_matrix(dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)), derive_seed(s, 2));
  return e;
}

uint64_t SketchEncoder::hash() const {
  const auto bytes = encoder_bytes(patch_, dim_, proj_, cls_);
  return fnv1a(std::span<const unsigned char>(bytes));
}

void SketchEncoder::save(const std::filesystem::path& path) const {
  const auto bytes = encoder_bytes(patch_, dim_, proj_, cls_);
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Persistence, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::Persistence, "short write to " + path.string());
}

SketchEncoder SketchEncoder::load(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  require(bytes.size() >= 18 && std::equal(io::kMagic, io::kMagic + 6, bytes.begin()) &&
              std::equal(kEncoderTag, kEncoderTag + 4, bytes.begin() + 6),
          ErrorKind::Persistence, path.string() + " is not a sketch encoder blob");
  uint32_t hdr[2];
  std::memcpy(hdr, bytes.data() + 10, sizeof(hdr));
  SketchEncoder e;
  e.patch_ = static_cast<int>(hdr[0]);
  e.dim_ = static_cast<int>(hdr[1]);
  const size_t np = static_cast<size_t>(e.patch_) * e.patch_ * e.dim_, nc = static_cast<size_t>(e.dim_) * e.dim_;
  require(bytes.size() == 18 + 4 * (np + nc), ErrorKind::Persistence, path.string() + ": truncated encoder blob");
  e.proj_.resize(e.patch_ * e.patch_, e.dim_);
  e.cls_.resize(e.dim_, e.dim_);
  std::memcpy(e.proj_.data(), bytes.data() + 18, 4 * np);
  std::memcpy(e.cls_.data(), bytes.data() + 18 + 4 * np, 4 * nc);
  const uint64_t want = pinned_encoder_hash(e.patch_, e.dim_);
  require(fnv1a(std::span<const unsigned char>(bytes)) == want, ErrorKind::Persistence,
          path.string() + ": hash does not match the pinned value " + hex64(want));
  return e;
}

std::filesystem::path SketchEncoder::asset_path(const std::filesystem::path& dir, int patch, int dim) {
  return dir / ("sketch_encoder_p" + std::to_string(patch) + "_d" + std::to_string(dim) + ".bin");
}

SketchEncoder SketchEncoder::from_assets(const std::filesystem::path& dir, int patch, int dim) {
  const auto path = asset_path(dir, patch, dim);
  require(std::filesystem::exists(path), ErrorKind::Dependency, "missing sketch encoder blob " + path.string());
  SketchEncoder e = load(path);
  require(e.patch_ == patch && e.dim_ == dim, ErrorKind::Persistence, path.string() + ": unexpected encoder shape");
  return e;
}

SketchEncoding SketchEncoder::encode(const Image& sketch) const {
  require(sketch.channels == 1 && sketch.width == sketch.height, ErrorKind::InvalidArgument,
          "encode_sketch: expected a square single-channel sketch");
  require(sketch.width % patch_ == 0 && sketch.width >= patch_, ErrorKind::InvalidArgument,
          "encode_sketch: resolution " + std::to_string(sketch.width) + " not divisible by patch " +
              std::to_string(patch_));
  const int g = sketch.width / patch_;
  Mat<float> patches(g * g, patch_ * patch_);
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px)
      for (int y = 0; y < patch_; ++y)
        for (int x = 0; x < patch_; ++x)
          patches(py * g + px, y * patch_ + x) = sketch.at(px * patch_ + x, py * patch_ + y);
  Mat<float> pos(g * g, dim_);
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px) {
      pos.row(py * g + px).head(dim_ / 2) = nn::sinusoidal_embed<float>(py, dim_ / 2).row(0);
      pos.row(py * g + px).tail(dim_ / 2) = nn::sinusoidal_embed<float>(px, dim_ / 2).row(0);
    }
  SketchEncoding out;
  out.tokens = patches * proj_ + pos;
  // position embeddings pooled with per-patch ink as weights
  const Mat<float> ink = patches.rowwise().mean().transpose();
  out.cls = ink * pos / static_cast<float>(g * g) * cls_;
  return out;
}

// --- PNG ----------------------------------------------------------------------

void write_png(const std::filesystem::path& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, ErrorKind::InvalidArgument, "write_png: 1 or 3 channels");
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  require(fp != nullptr, ErrorKind::Persistence, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(ErrorKind::Persistence, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (size_t i = 0; i < row.size(); ++i) {
      const float v = img.data[static_cast<size_t>(y) * row.size() + i];
      row[i] = static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Image read_png(const std::filesystem::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  require(fp != nullptr, ErrorKind::Persistence, "cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail(ErrorKind::Persistence, "libpng failed reading " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  std::vector<png_byte> raw(static_cast<size_t>(w) * h * ch);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * w * ch;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  require(ch == 1 || ch == 3, ErrorKind::Persistence, path.string() + ": unsupported channel count");
  Image img(w, h, ch);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

}  // namespace nuiworld::sketch
