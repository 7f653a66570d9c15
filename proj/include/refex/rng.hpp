#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace refex {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Derive an independent stream seed from a base seed, a label and an index.
/// All project randomness flows from one master seed through such streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0) {
  std::uint64_t s = base ^ detail::fnv1a64(label);
  std::uint64_t mixed = detail::splitmix64(s);
  s = mixed ^ (index * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL);
  return detail::splitmix64(s);
}

/// Deterministic splitmix64-based generator. Implements its own
/// distributions so results are identical across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  /// uniform double in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// uniform integer in [0, n)
  int uniform_int(int n) {
    // modulo bias is < 2^-50 for the n used here; acceptable at desk scale
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Box-Muller; consumes two uniforms per call, second branch discarded
  double normal(double mean = 0.0, double sd = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(2.0 * M_PI * u2);
  }

  /// Independent child stream; does not advance this stream.
  Rng fork(std::string_view label, std::uint64_t index = 0) const {
    return Rng(derive_seed(state_, label, index));
  }

 private:
  std::uint64_t state_;
};

}  // namespace refex
