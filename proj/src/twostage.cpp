#include "metasim/twostage.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace metasim {

namespace {

struct Usable {
  std::vector<double> y;
  std::vector<double> v;
};

Usable usable_of(std::span<const EffectEstimate> effects) {
  Usable u;
  for (const auto& e : effects) {
    if (!e.usable) continue;
    u.y.push_back(e.theta_hat);
    u.v.push_back(e.v2_hat);
  }
  if (u.y.size() < 2) throw EstimationError("fewer than 2 usable studies");
  return u;
}

struct WeightedSums {
  double sw = 0.0;
  double sw2 = 0.0;
  double sw3 = 0.0;
  double mean = 0.0;
  double q = 0.0;      // sum w (y - mean)^2
  double sw2r2 = 0.0;  // sum w^2 (y - mean)^2
  double slogv = 0.0;  // sum ln(v + tau2)
};

WeightedSums weighted_sums(const Usable& u, double tau2) {
  WeightedSums s;
  double swy = 0.0;
  for (std::size_t i = 0; i < u.y.size(); ++i) {
    const double w = 1.0 / (u.v[i] + tau2);
    s.sw += w;
    s.sw2 += w * w;
    s.sw3 += w * w * w;
    swy += w * u.y[i];
    s.slogv += std::log(u.v[i] + tau2);
  }
  s.mean = swy / s.sw;
  for (std::size_t i = 0; i < u.y.size(); ++i) {
    const double w = 1.0 / (u.v[i] + tau2);
    const double r = u.y[i] - s.mean;
    s.q += w * r * r;
    s.sw2r2 += w * w * r * r;
  }
  return s;
}

double q_of(const Usable& u, double tau2) { return weighted_sums(u, tau2).q; }

double reml_of(const Usable& u, double tau2) {
  const auto s = weighted_sums(u, tau2);
  return -0.5 * (s.slogv + std::log(s.sw) + s.q);
}

}  // namespace

std::string to_string(Tau2Method m) {
  switch (m) {
    case Tau2Method::kDL: return "DL";
    case Tau2Method::kREML: return "REML";
    case Tau2Method::kMP: return "MP";
    case Tau2Method::kKD: return "KD";
  }
  return "?";
}

double generalized_q(std::span<const EffectEstimate> effects, double tau2) {
  return q_of(usable_of(effects), tau2);
}

double reml_loglik(std::span<const EffectEstimate> effects, double tau2) {
  return reml_of(usable_of(effects), tau2);
}

Tau2Estimate tau2_dl(std::span<const EffectEstimate> effects) {
  const auto u = usable_of(effects);
  const auto s = weighted_sums(u, 0.0);
  const double k = static_cast<double>(u.y.size());
  const double raw = (s.q - (k - 1.0)) / (s.sw - s.sw2 / s.sw);
  Tau2Estimate out;
  out.method = Tau2Method::kDL;
  out.truncated = raw < 0.0;
  out.value = out.truncated ? 0.0 : raw;
  return out;
}

Tau2Estimate tau2_mp(std::span<const EffectEstimate> effects, const RootOptions& opts) {
  const auto u = usable_of(effects);
  const double target = static_cast<double>(u.y.size()) - 1.0;
  Tau2Estimate out;
  out.method = Tau2Method::kMP;

  if (q_of(u, 0.0) <= target) {
    out.truncated = true;
    return out;
  }

  // Q is decreasing in tau2, so grow the upper end until it brackets the root.
  double lo = 0.0;
  double hi = 1.0;
  int it = 0;
  while (q_of(u, hi) >= target) {
    lo = hi;
    hi *= 2.0;
    if (++it > opts.max_iterations) {
      out.converged = false;
      out.iterations = it;
      out.value = hi;
      return out;
    }
  }

  out.converged = false;
  for (int k = 0; k < opts.max_iterations; ++k) {
    const double mid = 0.5 * (lo + hi);
    const double resid = q_of(u, mid) - target;
    out.iterations = k + 1;
    out.value = mid;
    if (std::abs(resid) <= opts.tolerance) {
      out.converged = true;
      break;
    }
    if (resid > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (!(lo < 0.5 * (lo + hi) && 0.5 * (lo + hi) < hi)) {
      // Bracket exhausted at double resolution.
      out.value = 0.5 * (lo + hi);
      out.converged = true;
      break;
    }
  }
  return out;
}

Tau2Estimate tau2_reml(std::span<const EffectEstimate> effects, const RootOptions& opts) {
  const auto u = usable_of(effects);
  Tau2Estimate out;
  out.method = Tau2Method::kREML;
  out.converged = false;

  // Fisher scoring on tau2 with step halving, started from DerSimonian-Laird.
  double tau2 = tau2_dl(effects).value;
  double ll = reml_of(u, tau2);
  for (int it = 1; it <= opts.max_iterations; ++it) {
    out.iterations = it;
    const auto s = weighted_sums(u, tau2);
    const double score = 0.5 * (s.sw2r2 - s.sw + s.sw2 / s.sw);
    const double r = s.sw2 / s.sw;
    const double info = 0.5 * (s.sw2 - 2.0 * s.sw3 / s.sw + r * r);
    if (tau2 == 0.0 && score <= 0.0) {
      out.converged = true;
      out.truncated = true;
      break;
    }
    double step = info > 0.0 ? score / info : score;
    double next = std::max(0.0, tau2 + step);
    double next_ll = reml_of(u, next);
    // Differences at rounding level near the optimum are not a decrease.
    const double slack = 1e-12 * (1.0 + std::abs(ll));
    int halvings = 0;
    while (next_ll < ll - slack && halvings < 60) {
      step *= 0.5;
      next = std::max(0.0, tau2 + step);
      next_ll = reml_of(u, next);
      ++halvings;
    }
    const double change = std::abs(next - tau2);
    tau2 = next;
    ll = next_ll;
    if (change < opts.tolerance) {
      out.converged = true;
      break;
    }
  }
  out.value = tau2;
  if (tau2 == 0.0) out.truncated = true;
  return out;
}

Tau2Plugin kd_substitute(const RootOptions& opts) {
  return {"KD-substitute(MP)", [opts](std::span<const EffectEstimate> effects) {
            auto est = tau2_mp(effects, opts);
            est.method = Tau2Method::kKD;
            return est;
          }};
}

PooledEstimate iv_pool(std::span<const EffectEstimate> effects, double tau2) {
  const auto s = weighted_sums(usable_of(effects), tau2);
  return {s.mean, 1.0 / std::sqrt(s.sw), std::numeric_limits<double>::infinity()};
}

std::vector<double> ssw_weights(std::span<const EffectEstimate> effects,
                                std::span<const Study2x2> studies) {
  if (effects.size() != studies.size()) {
    throw std::invalid_argument("ssw: effects and studies differ in length");
  }
  std::vector<double> w;
  double total = 0.0;
  for (std::size_t i = 0; i < effects.size(); ++i) {
    if (!effects[i].usable) continue;
    const double nt = static_cast<double>(studies[i].n_t);
    const double nc = static_cast<double>(studies[i].n_c);
    w.push_back(nt * nc / (nt + nc));
    total += w.back();
  }
  if (w.size() < 2) throw EstimationError("fewer than 2 usable studies");
  for (double& x : w) x /= total;
  return w;
}

std::string to_string(SswVariance v) {
  return v == SswVariance::kPlugin ? "plugin" : "hksj";
}

SswVariance parse_ssw_variance(const std::string& text) {
  if (text == "plugin") return SswVariance::kPlugin;
  if (text == "hksj") return SswVariance::kHksj;
  throw std::invalid_argument("unknown SSW variance form '" + text + "'");
}

PooledEstimate ssw_point(std::span<const EffectEstimate> effects,
                         std::span<const Study2x2> studies) {
  Tau2Estimate zero;
  return ssw_pooled(effects, studies, zero, SswVariance::kPlugin);
}

PooledEstimate ssw_pooled(std::span<const EffectEstimate> effects,
                          std::span<const Study2x2> studies, const Tau2Estimate& tau2,
                          SswVariance mode) {
  const auto w = ssw_weights(effects, studies);
  const auto u = usable_of(effects);
  const double k = static_cast<double>(w.size());

  double theta = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) theta += w[i] * u.y[i];

  double var = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) var += w[i] * w[i] * (u.v[i] + tau2.value);

  if (mode == SswVariance::kHksj) {
    double num = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double r = u.y[i] - theta;
      num += r * r / (u.v[i] + tau2.value);
    }
    var *= num / (k - 1.0);
  }
  return {theta, std::sqrt(var), k - 1.0};
}

ConfidenceInterval ssw_ci(std::span<const EffectEstimate> effects,
                          std::span<const Study2x2> studies, const Tau2Estimate& tau2,
                          double level, SswVariance mode) {
  return wald_ci(ssw_pooled(effects, studies, tau2, mode), level);
}

double critical_value(double level, double df) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  const double upper = 0.5 + 0.5 * level;
  if (std::isinf(df)) return boost::math::quantile(boost::math::normal_distribution<>(), upper);
  if (!(df > 0.0)) throw std::invalid_argument("degrees of freedom must be positive");
  return boost::math::quantile(boost::math::students_t_distribution<>(df), upper);
}

ConfidenceInterval wald_ci(const PooledEstimate& p, double level) {
  const double half = critical_value(level, p.df) * p.se;
  return {p.theta_hat - half, p.theta_hat + half, level};
}

}  // namespace metasim
