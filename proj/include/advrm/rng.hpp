#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace advrm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives a fresh child seed from (master, label, entity); used wherever a
// sub-computation needs its own master seed rather than a stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t entity = 0) {
  return splitmix64(splitmix64(master ^ fnv1a64(label)) ^
                    (entity * 0xd6e8feb86659fd93ULL + 0x9e3779b97f4a7c15ULL));
}

// Deterministic random stream. Distribution draws are implemented by hand so
// that sequences do not depend on the standard library's unspecified
// std::*_distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  // Named stream derived from (master seed, stage name, entity id). Streams
  // with distinct tags are statistically independent.
  static Rng stream(std::uint64_t master, std::string_view stage, std::uint64_t entity = 0) {
    std::uint64_t s = splitmix64(master ^ fnv1a64(stage));
    s = splitmix64(s ^ (entity * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
    return Rng(s);
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (two fresh uniforms per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  int int_range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(index(static_cast<std::size_t>(hi_inclusive - lo + 1)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace advrm
