#include "nuiworld/common.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace nuiworld {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::TrainingDivergence: return "training-divergence";
    case ErrorKind::Persistence: return "persistence";
    case ErrorKind::Dependency: return "dependency";
    case ErrorKind::StaleArtifact: return "stale-artifact";
    case ErrorKind::UnavailableModel: return "unavailable-model";
  }
  return "unknown";
}

uint64_t Rng::below(uint64_t n) {
  if (n == 0) fail(ErrorKind::InvalidArgument, "Rng::below(0)");
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

uint64_t fnv1a(std::span<const unsigned char> bytes, uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a(std::string_view s, uint64_t h) {
  return fnv1a(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()), h);
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace nuiworld
