#pragma once

#include <complex>
#include <cstdint>
#include <limits>

namespace qst {

/// Counter-based generator: output n is a keyed SplitMix64 finalizer of n.
/// Streams derived with split() are independent of draw order in the parent,
/// so every consumer can be seeded explicitly and reproducibly.
/// All derived distributions are implemented here rather than taken from
/// <random>, whose distributions are not bit-reproducible across stdlibs.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + kGolden * ++counter_); }

  /// Independent child stream labelled by `stream`. Does not advance *this.
  CounterRng split(std::uint64_t stream) const {
    CounterRng child(0);
    child.key_ = mix(key_ ^ mix(stream + 0xbb67ae8584caa73bULL));
    return child;
  }

  /// Uniform on [0, 1) with 53 bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Standard normal (Box-Muller, cosine branch only).
  double normal();

  /// Complex normal with E|z|^2 = 1.
  std::complex<double> complex_normal();

  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace qst
