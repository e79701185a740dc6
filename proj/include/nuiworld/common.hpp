#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nuiworld {

enum class ErrorKind {
  InvalidArgument,
  EmptyInput,
  DegenerateInput,
  TrainingDivergence,
  Persistence,
  Dependency,
  StaleArtifact,
  UnavailableModel,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

// Seedable generator whose output stream is identical on every platform.
// std::*_distribution is implementation-defined, so uniform/normal draws are
// derived from the raw 64-bit engine output here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  double normal();
  double normal(double mean, double std) { return mean + std * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

uint64_t splitmix64(uint64_t x);
/// Deterministic child seed for (seed, stream, index).
uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index = 0);

/// 64-bit FNV-1a.
uint64_t fnv1a(std::span<const unsigned char> bytes, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t v);

inline constexpr std::string_view kProducerVersion = "nuiworld-0.1.0";

}  // namespace nuiworld
