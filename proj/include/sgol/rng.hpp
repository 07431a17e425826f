#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace sgol {

/// Deterministic splitmix64 generator. All randomness in the project flows
/// through this type so that identical seeds give identical artifacts on
/// every platform; no std:: distributions are used anywhere (their output
/// is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) {
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  /// Uniform index in [0, n). n must be positive.
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

  /// Standard Box-Muller; one draw per call, second value discarded to keep
  /// the stream position independent of call history.
  double normal(double mean, double stddev) {
    double u1 = 0.0;
    do {
      u1 = uniform(0.0, 1.0);
    } while (u1 <= 0.0);
    double u2 = uniform(0.0, 1.0);
    double z = std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    return mean + stddev * z;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream; does not advance this generator.
  Rng derive(std::uint64_t salt) const {
    std::uint64_t z = state_ ^ (salt * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull);
    z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdull;
    z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ull;
    return Rng(z ^ (z >> 33));
  }

 private:
  std::uint64_t state_;
};

}  // namespace sgol
