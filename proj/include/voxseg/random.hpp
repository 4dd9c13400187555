#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace voxseg {

// Seeded generator with platform-independent conversions. The standard
// distributions are implementation-defined, so only the raw mt19937_64
// stream is taken from the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace voxseg
