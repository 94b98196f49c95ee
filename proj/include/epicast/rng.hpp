#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace epicast {

/// Deterministic random stream. All sampling in the library goes through
/// this wrapper so that a run is reproducible from a single seed; the raw
/// bit-to-double conversions are spelled out here instead of relying on
/// std:: distribution objects, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform in the open interval (0, 1); safe to feed into log().
  double uniform_open() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch only, so one draw
  /// consumes exactly two generator words).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Gumbel(0,1) by inverse CDF: -log(-log(U)), U in (0,1).
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(gen_() % static_cast<std::uint64_t>(n));
  }

  /// Independent stream derived from this one's seed and a fixed tag.
  /// Derivation is pure arithmetic so substreams are stable across runs.
  Rng substream(std::uint64_t tag) const {
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace epicast
