#ifndef POLYMER_RANDOM_HPP
#define POLYMER_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace polymer {

// Counter-based randomness. Every value of the environment is a pure
// function of (seed, time, cell, lane), so windows of any shape can be
// generated in any order and always agree on their overlap.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix_key(std::uint64_t seed, std::int64_t k, std::int64_t cell,
                                       std::uint64_t lane = 0) noexcept {
  std::uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(k));
  h = splitmix64(h ^ static_cast<std::uint64_t>(cell) * 0x9e3779b97f4a7c15ULL);
  return splitmix64(h ^ lane);
}

// Uniform in the open interval (0, 1) from the top 53 bits.
inline double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal from two independent uniforms (Box-Muller, cosine branch).
inline double normal_from_bits(std::uint64_t b1, std::uint64_t b2) noexcept {
  const double u1 = to_open_unit(b1);
  const double u2 = to_open_unit(b2);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Sequential splitmix64 stream; used where a substream must emit a
// variable number of draws (Poisson point counts and positions).
class SplitMixStream {
 public:
  explicit SplitMixStream(std::uint64_t state) noexcept : state_(state) {}
  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() noexcept { return to_open_unit(next()); }
  double normal() noexcept {
    const auto b1 = next();
    return normal_from_bits(b1, next());
  }
  // Inversion by sequential search; exact for the intensities we accept.
  unsigned poisson(double mean) noexcept {
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    unsigned k = 0;
    while (u > cdf && k < 100000) {
      ++k;
      p *= mean / k;
      cdf += p;
      if (p == 0.0) break;
    }
    return k;
  }

 private:
  std::uint64_t state_;
};

}  // namespace polymer

#endif  // POLYMER_RANDOM_HPP
