#ifndef PDM_RANDOM_HPP
#define PDM_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pdm {

/// PCG32 (XSH-RR output over a 64-bit LCG state). All seeded code paths use
/// this plus the helpers below, never the std distributions, so streams are
/// identical on every standard library.
class Pcg32 {
 public:
  using result_type = std::uint32_t;

  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0x14057b7ef767814fULL)
      : inc_((stream << 1u) | 1u) {
    next();
    state_ += seed;
    next();
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return 0xffffffffu; }

  result_type operator()() { return next(); }

  std::uint32_t next() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  std::uint64_t next64() {
    const std::uint64_t hi = next();
    return (hi << 32) | next();
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, bound) by Lemire's multiply-and-reject.
  std::uint32_t below(std::uint32_t bound) {
    std::uint64_t m = static_cast<std::uint64_t>(next()) * bound;
    auto low = static_cast<std::uint32_t>(m);
    if (low < bound) {
      const std::uint32_t threshold = (-bound) % bound;
      while (low < threshold) {
        m = static_cast<std::uint64_t>(next()) * bound;
        low = static_cast<std::uint32_t>(m);
      }
    }
    return static_cast<std::uint32_t>(m >> 32);
  }

  /// Standard normal via the cosine branch of Box-Muller (two uniforms per
  /// draw, nothing cached, so the stream position is a pure function of the
  /// number of draws).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_;
};

/// Fisher-Yates with the portable generator.
template <typename It>
void shuffle(It first, It last, Pcg32& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = static_cast<decltype(i)>(rng.below(static_cast<std::uint32_t>(i + 1)));
    using std::swap;
    swap(first[i], first[j]);
  }
}

}  // namespace pdm

#endif  // PDM_RANDOM_HPP
