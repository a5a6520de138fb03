#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace planeloc {

// Counter-based generator: output i is splitmix64_mix(key + i * GOLDEN_GAMMA).
// Streams are split by hashing a purpose label (or index) into a child key, so
// consumers can draw independently without sharing mutable state. All paths
// use only integer ops and IEEE double arithmetic; results are identical
// across platforms for a given (seed, purpose chain, draw index).
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  static Rng from_seed(std::uint64_t seed) { return Rng(mix(seed ^ kSeedTag)); }

  Rng split(std::string_view purpose) const {
    std::uint64_t h = kFnvOffset;
    for (char c : purpose) {
      h ^= static_cast<unsigned char>(c);
      h *= kFnvPrime;
    }
    return Rng(mix(key_ ^ mix(h)));
  }

  Rng split(std::uint64_t index) const { return Rng(mix(key_ ^ mix(index + kIndexTag))); }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGoldenGamma); }

  // Uniform in [0,1), 53 mantissa bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n), n > 0. Fixed-point multiply keeps it branch-free
  // and platform-stable; bias is < 2^-64 * n, irrelevant at our scales.
  int next_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Box-Muller; the pair partner is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Standard Gumbel via inverse CDF.
  double gumbel() {
    double u = next_double();
    while (u <= 0.0) u = next_double();
    return -std::log(-std::log(u));
  }

  std::uint64_t key() const { return key_; }

 private:
  static constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kSeedTag = 0x243f6a8885a308d3ULL;
  static constexpr std::uint64_t kIndexTag = 0x452821e638d01377ULL;
  static constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z += kGoldenGamma;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace planeloc
