#include "dklearn/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dklearn {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer; avalanches the FNV state.
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  std::uint64_t h = fnv1a(kFnvOffset, &master, sizeof(master));
  h = fnv1a(h, tag.data(), tag.size());
  return mix(h);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t index) {
  std::uint64_t h = fnv1a(kFnvOffset, &master, sizeof(master));
  h = fnv1a(h, tag.data(), tag.size());
  h = fnv1a(h, &index, sizeof(index));
  return mix(h);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t i, std::uint64_t j) {
  std::uint64_t h = fnv1a(kFnvOffset, &master, sizeof(master));
  h = fnv1a(h, tag.data(), tag.size());
  h = fnv1a(h, &i, sizeof(i));
  h = fnv1a(h, &j, sizeof(j));
  return mix(h);
}

double Rng::uniform() {
  // Top 53 bits give a double in [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::exponential() { return -std::log(1.0 - uniform()); }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  const std::uint64_t bound = n;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

}  // namespace dklearn
