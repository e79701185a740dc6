#include "nuiworld/formats.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace nuiworld::io {

namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), os_(path, std::ios::binary) {
    require(static_cast<bool>(os_), ErrorKind::Persistence, "cannot open " + path.string() + " for writing");
  }
  template <class T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void header(const char tag[4]) {
    bytes(kMagic, sizeof(kMagic));
    bytes(tag, 4);
  }
  ~Writer() noexcept(false) {
    os_.flush();
    if (!os_ && std::uncaught_exceptions() == 0) fail(ErrorKind::Persistence, "write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), buf_(read_bytes(path)) {}
  template <class T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* p, size_t n) {
    require(pos_ + n <= buf_.size(), ErrorKind::Persistence, "truncated file " + path_.string());
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  void expect_header(const char tag[4]) {
    char magic[6], got[4];
    bytes(magic, 6);
    bytes(got, 4);
    require(std::memcmp(magic, kMagic, 6) == 0, ErrorKind::Persistence, "bad magic in " + path_.string());
    require(std::memcmp(got, tag, 4) == 0, ErrorKind::Persistence, "unexpected record kind in " + path_.string());
  }
  void expect_end() const {
    require(pos_ == buf_.size(), ErrorKind::Persistence, "trailing bytes in " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::vector<unsigned char> buf_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& voxels) {
  std::vector<uint8_t> bits((voxels.size() + 7) / 8, 0);
  for (size_t i = 0; i < voxels.size(); ++i)
    if (voxels[i]) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  return bits;
}

std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bits, size_t count) {
  require(bits.size() * 8 >= count, ErrorKind::Persistence, "bit buffer too short");
  std::vector<uint8_t> out(count);
  for (size_t i = 0; i < count; ++i) out[i] = (bits[i / 8] >> (i % 8)) & 1u;
  return out;
}

void write_chunks(const std::filesystem::path& path, const std::vector<geo::SceneChunkSample>& chunks) {
  Writer w(path);
  w.header("CHNK");
  w.put<uint32_t>(static_cast<uint32_t>(chunks.size()));
  for (const auto& c : chunks) {
    c.occupancy.validate();
    w.put<int32_t>(c.grid_coords[0]);
    w.put<int32_t>(c.grid_coords[1]);
    for (int d : c.occupancy.dims) w.put<int32_t>(d);
    w.put<float>(c.occupancy.voxel_edge);
    const auto bits = pack_bits(c.occupancy.data);
    w.bytes(bits.data(), bits.size());
    w.put<uint32_t>(static_cast<uint32_t>(c.surface.size()));
    w.put<uint8_t>(c.surface.has_colors() ? 1 : 0);
    w.bytes(c.surface.points.data(), c.surface.size() * 3 * sizeof(float));
    if (c.surface.has_colors()) w.bytes(c.surface.colors.data(), c.surface.size() * 3 * sizeof(float));
  }
}

std::vector<geo::SceneChunkSample> read_chunks(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_header("CHNK");
  const auto count = r.get<uint32_t>();
  std::vector<geo::SceneChunkSample> chunks(count);
  for (auto& c : chunks) {
    c.grid_coords[0] = r.get<int32_t>();
    c.grid_coords[1] = r.get<int32_t>();
    const int x = r.get<int32_t>(), y = r.get<int32_t>(), z = r.get<int32_t>();
    const float edge = r.get<float>();
    c.occupancy = geo::OccupancyGrid(x, y, z, edge);
    std::vector<uint8_t> bits((c.occupancy.size() + 7) / 8);
    r.bytes(bits.data(), bits.size());
    c.occupancy.data = unpack_bits(bits, c.occupancy.size());
    const auto n = static_cast<Eigen::Index>(r.get<uint32_t>());
    const bool colors = r.get<uint8_t>() != 0;
    c.surface.points.resize(n, 3);
    r.bytes(c.surface.points.data(), static_cast<size_t>(n) * 3 * sizeof(float));
    if (colors) {
      c.surface.colors.resize(n, 3);
      r.bytes(c.surface.colors.data(), static_cast<size_t>(n) * 3 * sizeof(float));
    }
  }
  r.expect_end();
  return chunks;
}

void write_latents(const std::filesystem::path& path, const SceneLatentGrid& grid) {
  grid.validate();
  Writer w(path);
  w.header("LATS");
  w.put<uint32_t>(static_cast<uint32_t>(grid.layout.rows));
  w.put<uint32_t>(static_cast<uint32_t>(grid.layout.cols));
  w.put<uint32_t>(static_cast<uint32_t>(grid.V));
  w.put<uint32_t>(static_cast<uint32_t>(grid.c));
  w.put<uint8_t>(static_cast<uint8_t>(grid.provenance));
  w.bytes(grid.tokens.data(), static_cast<size_t>(grid.tokens.size()) * sizeof(float));
}

SceneLatentGrid read_latents(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_header("LATS");
  forge::LayoutSpec layout;
  layout.rows = static_cast<int>(r.get<uint32_t>());
  layout.cols = static_cast<int>(r.get<uint32_t>());
  const int v = static_cast<int>(r.get<uint32_t>());
  const int c = static_cast<int>(r.get<uint32_t>());
  const auto prov = r.get<uint8_t>();
  require(prov <= 2, ErrorKind::Persistence, "unknown provenance tag in " + path.string());
  SceneLatentGrid g(layout, v, c, static_cast<Provenance>(prov));
  r.bytes(g.tokens.data(), static_cast<size_t>(g.tokens.size()) * sizeof(float));
  r.expect_end();
  return g;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::Persistence, "cannot open " + path.string() + " for writing");
  os << doc.dump(2) << '\n';
  require(static_cast<bool>(os), ErrorKind::Persistence, "write failed for " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::Persistence, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Persistence, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::Persistence, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

uint64_t file_hash(const std::filesystem::path& path) { return fnv1a(read_bytes(path)); }

}  // namespace nuiworld::io
