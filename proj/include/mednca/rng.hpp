#pragma once

#include <cmath>
#include <cstdint>

namespace mednca {

// splitmix64 finalizer; the workhorse behind every deterministic stream here.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(a) ^ (b * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix64(mix64(a, b), c);
}

// Uniform in [0,1).
inline double u64_to_unit(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// Sequential deterministic stream (counter + key).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  double uniform() { return u64_to_unit(next_u64()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_inclusive) {
    // modulo bias is irrelevant at these range sizes
    const std::uint64_t span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }
  // Box-Muller, consumes two draws.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t state_;
};

// Counter-based per-cell fire decision: independent of traversal order and
// parallelism, reproducible from (seed, step, y, x).
inline bool cell_fires(std::uint64_t seed, std::int64_t step, std::int64_t y,
                       std::int64_t x, double fire_rate) {
  const std::uint64_t h =
      mix64(seed, static_cast<std::uint64_t>(step),
            (static_cast<std::uint64_t>(y) << 32) ^ static_cast<std::uint64_t>(x));
  return u64_to_unit(h) < fire_rate;
}

}  // namespace mednca
