#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace pan {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG wrapper. All distributions are implemented explicitly on
// top of the raw mt19937 stream so that sampled values are reproducible
// independent of the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32)};
    gen_.seed(seq);
  }

  // Derives an independent stream for (seed, index) pairs.
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(seed ^ splitmix64(index)));
  }

  std::uint32_t next_u32() { return gen_(); }

  // Uniform in [0, n) without modulo bias (Lemire's method).
  std::uint32_t bounded(std::uint32_t n) {
    std::uint64_t m = static_cast<std::uint64_t>(gen_()) * n;
    auto lo = static_cast<std::uint32_t>(m);
    if (lo < n) {
      std::uint32_t t = -n % n;
      while (lo < t) {
        m = static_cast<std::uint64_t>(gen_()) * n;
        lo = static_cast<std::uint32_t>(m);
      }
    }
    return static_cast<std::uint32_t>(m >> 32);
  }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(bounded(static_cast<std::uint32_t>(hi - lo + 1)));
  }

  // Uniform in [0, 1).
  double uniform() { return gen_() * (1.0 / 4294967296.0); }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Standard normal via Box-Muller; no cached spare so the only state is the
  // underlying mt19937 (keeps serialization exact).
  double normal() {
    double u1 = (static_cast<double>(gen_()) + 0.5) * (1.0 / 4294967296.0);
    double u2 = gen_() * (1.0 / 4294967296.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::string save_state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

  std::mt19937& engine() { return gen_; }

 private:
  std::mt19937 gen_;
};

}  // namespace pan
