#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace thinner {

/// Seed streams. Every random draw in the library is keyed by
/// (root seed, stream, counter) through derive_seed.
enum class SeedStream : std::uint64_t {
  kData = 1,
  kSplit = 2,
  kInit = 3,
  kTrain = 4,
  kFinetune = 5,
  kStatsSubset = 6,
};

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, SeedStream stream,
                                    std::uint64_t counter = 0) {
  return mix64(mix64(root ^ mix64(static_cast<std::uint64_t>(stream))) + counter);
}

/// Platform-independent generator. The standard distributions are
/// implementation-defined, so sampling is done by hand on top of mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace thinner
