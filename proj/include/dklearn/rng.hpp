#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dklearn {

/// Derives an independent seed from a master seed, a purpose tag and optional
/// indices. Every stochastic consumer (data split, model init, policy draws,
/// sampler chains, ensemble members) gets its own derived stream so that
/// toggling parallelism or reordering work cannot change results.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t i, std::uint64_t j);

/// Seeded generator with self-contained distributions. The standard library's
/// distribution objects are implementation-defined, so uniform/normal draws
/// are produced here from raw mt19937_64 output to keep every result a pure
/// function of the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform();

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal();

  /// Exponential with rate 1.
  double exponential();

  /// Uniform over {0, ..., n-1}; n must be positive.
  std::size_t uniform_index(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace dklearn
