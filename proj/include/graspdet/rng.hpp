#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "graspdet/common.hpp"

namespace graspdet {

// splitmix64; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 provides the bit stream (its output sequence
// is pinned by the standard); the distributions below are implemented by hand
// because std:: distributions are implementation-defined and would break
// byte-reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Independent stream derived from this rng's seed; forking does not consume
  // from or depend on this rng's draw position.
  Rng fork(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + kStreamSalt))); }

  double uniform() {
    // 53 random bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds, rejection-free via 128-bit style scaling is overkill
  // here; modulo bias is eliminated by rejection.
  int uniform_int(int lo, int hi) {
    const std::uint64_t n = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / n * n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, both variates used.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates with the in-house integer sampler (std::shuffle consumes an
  // implementation-defined number of engine draws).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const int j = uniform_int(0, static_cast<int>(i) - 1);
      std::swap(v[i - 1], v[static_cast<std::size_t>(j)]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static constexpr std::uint64_t kStreamSalt = 0x51ed270bull;
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace graspdet
