#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace adu {

// Deterministic, platform-independent random numbers. splitmix64 is used both
// as the generator and to derive independent substreams from (seed, index),
// which keeps per-sample generation order-free and parallel-safe.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Warm up so that small seeds do not produce correlated first draws.
    splitmix64(state_);
    splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the spare of each pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Circularly-symmetric complex Gaussian with unit variance: E|z|^2 = 1.
  std::complex<double> cnormal() {
    double s = M_SQRT1_2;
    double re = normal();
    double im = normal();
    return {s * re, s * im};
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Independent substream for (seed, index, tag).
inline Rng substream(uint64_t seed, uint64_t index, uint64_t tag = 0) {
  uint64_t s = seed;
  uint64_t a = splitmix64(s) ^ (index * 0xd1342543de82ef95ULL);
  uint64_t b = a;
  uint64_t c = splitmix64(b) ^ (tag * 0xaf251af3b0f025b5ULL);
  return Rng(c);
}

}  // namespace adu
