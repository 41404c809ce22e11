#pragma once

#include <cstdint>
#include <limits>

namespace metasim {

// SplitMix64 finalizer. Used to turn structured keys into well-mixed seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Order-sensitive combination of two 64-bit keys.
constexpr std::uint64_t combine64(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL));
}

// xoshiro256++ (Blackman & Vigna). Satisfies UniformRandomBitGenerator; the
// output sequence is fully specified, unlike the std:: distributions.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed) noexcept {
    std::uint64_t z = seed;
    for (auto& w : s_) {
      z += 0x9e3779b97f4a7c15ULL;
      w = mix64(z);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

// Uniform on (0, 1): never returns 0 or 1.
double uniform_open01(Xoshiro256pp& g) noexcept;
// Standard normal by the Box-Muller transform (one output per two uniforms).
double standard_normal(Xoshiro256pp& g) noexcept;
// Binomial(n, p) by inversion, searching outward from the mode.
std::int64_t binomial(Xoshiro256pp& g, std::int64_t n, double p);

inline constexpr const char* kBinomialSamplerName = "mode-outward-inversion/xoshiro256++";

}  // namespace metasim
