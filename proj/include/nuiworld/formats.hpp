#pragma once

// On-disk formats. All binary data is little-endian.
//
// .nwchunk   magic "NUIW\0\1", tag "CHNK", u32 chunk count, then per chunk:
//            i32 u, i32 v, i32 X, i32 Y, i32 Z, f32 voxel_edge,
//            ceil(X*Y*Z/8) bytes of occupancy bits (voxel i -> byte i/8, bit i%8,
//            voxels in x-fastest order), u32 point count, u8 has_colors,
//            f32 xyz[n][3], f32 rgb[n][3] (when has_colors).
// .nwlat     magic "NUIW\0\1", tag "LATS", u32 R, u32 C, u32 V, u32 c,
//            u8 provenance, f32 values[R*C][V*c] (row-major over (row, col)).

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nuiworld/geometry.hpp"
#include "nuiworld/latents.hpp"

namespace nuiworld::io {

inline constexpr char kMagic[6] = {'N', 'U', 'I', 'W', '\0', '\1'};

void write_chunks(const std::filesystem::path& path, const std::vector<geo::SceneChunkSample>& chunks);
std::vector<geo::SceneChunkSample> read_chunks(const std::filesystem::path& path);

void write_latents(const std::filesystem::path& path, const SceneLatentGrid& grid);
SceneLatentGrid read_latents(const std::filesystem::path& path);

std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& voxels);
std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bits, size_t count);

/// Pretty-printed with sorted keys, so equal documents are byte-identical.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
uint64_t file_hash(const std::filesystem::path& path);

}  // namespace nuiworld::io
