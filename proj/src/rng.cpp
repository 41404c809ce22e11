#include "metasim/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace metasim {

double uniform_open01(Xoshiro256pp& g) noexcept {
  // 53 random bits, shifted by half an ulp so that 0 is excluded.
  return (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
}

double standard_normal(Xoshiro256pp& g) noexcept {
  const double u1 = uniform_open01(g);
  const double u2 = uniform_open01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t binomial(Xoshiro256pp& g, std::int64_t n, double p) {
  if (n < 0 || !(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("binomial: need n >= 0 and p in [0, 1]");
  }
  if (n == 0 || p == 0.0) return 0;
  if (p == 1.0) return n;
  if (p > 0.5) return n - binomial(g, n, 1.0 - p);

  const double q = 1.0 - p;
  const double ratio = p / q;
  const auto mode = std::min<std::int64_t>(
      n, static_cast<std::int64_t>(std::floor(static_cast<double>(n + 1) * p)));
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(mode);
  const double log_pmf_mode = std::lgamma(nd + 1.0) - std::lgamma(md + 1.0) -
                              std::lgamma(nd - md + 1.0) + md * std::log(p) +
                              (nd - md) * std::log1p(-p);

  double u = uniform_open01(g);
  double pmf_lo = std::exp(log_pmf_mode);
  double pmf_hi = pmf_lo;
  u -= pmf_lo;
  if (u <= 0.0) return mode;

  std::int64_t lo = mode;
  std::int64_t hi = mode;
  while (lo > 0 || hi < n) {
    if (lo > 0) {
      pmf_lo *= static_cast<double>(lo) / (static_cast<double>(n - lo + 1) * ratio);
      --lo;
      u -= pmf_lo;
      if (u <= 0.0) return lo;
    }
    if (hi < n) {
      pmf_hi *= static_cast<double>(n - hi) / static_cast<double>(hi + 1) * ratio;
      ++hi;
      u -= pmf_hi;
      if (u <= 0.0) return hi;
    }
  }
  // Only reachable through rounding in the accumulated mass.
  return mode;
}

}  // namespace metasim
