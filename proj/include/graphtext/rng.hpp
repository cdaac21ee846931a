#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace graphtext {

// Deterministic random source used throughout the project. The engine is
// mt19937_64 (its sequence is fixed by the standard); value mapping is done
// by hand because std:: distributions differ between standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), unbiased via rejection.
  int64_t uniform_int(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller with cached spare.
  double normal(double mu, double sigma) {
    if (has_spare_) {
      has_spare_ = false;
      return mu + spare_ * sigma;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    double z0 = r * std::cos(6.283185307179586 * u2);
    spare_ = r * std::sin(6.283185307179586 * u2);
    has_spare_ = true;
    return mu + z0 * sigma;
  }

  // Normal truncated to mu +- bound*sigma by resampling.
  double truncated_normal(double mu, double sigma, double bound = 2.0) {
    for (;;) {
      double z = normal(0.0, 1.0);
      if (z >= -bound && z <= bound) return mu + z * sigma;
    }
  }

  // Independent child stream. Derivation uses the original seed, not the
  // current engine state, so derived streams do not depend on draw order.
  Rng derive(uint64_t stream) const { return Rng(mix(seed_, stream)); }

  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace graphtext
