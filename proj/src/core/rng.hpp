#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gsf {

// Deterministic RNG used everywhere randomness is needed. Gaussian samples
// are produced by Box-Muller on raw 64-bit draws so sequences depend only on
// the seed, not on library distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed ^ 0x9e3779b97f4a7c15ull) {}

  uint64_t next() { return eng_(); }

  // uniform in [0, 1)
  double uniform() {
    return (next() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
  }

  // uniform integer in [lo, hi] inclusive
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next() % static_cast<uint64_t>(hi - lo + 1));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return mean + stddev * u * m;
  }

  // Independent child stream, e.g. one per worker or per pipeline stage.
  Rng split(uint64_t tag) {
    return Rng(next() ^ (tag * 0xbf58476d1ce4e5b9ull));
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gsf
