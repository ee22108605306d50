#pragma once

#include <cmath>
#include <cstdint>

namespace epictrl {

/// Deterministic 64-bit generator (splitmix64) with explicit distributions.
/// All randomness in the library flows through this class so that datasets,
/// initial-state guesses and multistart draws are reproducible bit-for-bit,
/// independent of standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// log-uniform on [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  /// Standard normal via Box-Muller. One value per call; the cosine branch is
  /// always taken so the stream position does not depend on call parity.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  /// Derive an independent stream seed for a tagged purpose.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    Rng r(seed ^ (tag * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
};

}  // namespace epictrl
