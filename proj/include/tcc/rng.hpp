#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace tcc {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a list of integers into one stream key.
inline constexpr std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

/// Counter-based generator: output n is a pure function of (key, n).
///
/// Every random draw in the library is addressed by a key derived from
/// (seed, purpose, epoch, step), so results do not depend on the order in
/// which streams are consumed and resuming needs only the counters.
/// Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() = default;
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; uses two uniforms per call.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is < 2^-64 * n, irrelevant at these sizes.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Draw purposes; each gets an independent family of streams.
enum class Stream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kAugmentOnline = 3,
  kAugmentMomentum = 4,
  kGumbelOnline = 5,
  kGumbelMomentum = 6,
  kData = 7,
  kGradCheck = 8,
};

inline CounterRng make_stream(std::uint64_t seed, Stream purpose, std::uint64_t epoch = 0,
                              std::uint64_t step = 0) noexcept {
  std::uint64_t k = mix_key(seed, static_cast<std::uint64_t>(purpose));
  k = mix_key(k, epoch);
  k = mix_key(k, step);
  return CounterRng(k);
}

}  // namespace tcc
