#pragma once

#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

#include "metasim/core_model.hpp"

namespace metasim {

// Raised when fewer than two usable studies remain.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Tau2Method { kDL, kREML, kMP, kKD };

std::string to_string(Tau2Method m);

struct Tau2Estimate {
  double value = 0.0;
  Tau2Method method = Tau2Method::kDL;
  bool converged = true;
  int iterations = 0;
  bool truncated = false;  // raw solution was negative and clamped to 0
};

struct PooledEstimate {
  double theta_hat = 0.0;
  double se = 0.0;
  double df = std::numeric_limits<double>::infinity();  // infinity: normal critical values
};

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;

  bool contains(double x) const noexcept { return lo <= x && x <= hi; }
};

struct RootOptions {
  double tolerance = 1e-10;
  int max_iterations = 200;
};

// Generalized Q statistic with weights 1/(v_i + tau2). Non-usable effects
// are skipped everywhere in this module.
double generalized_q(std::span<const EffectEstimate> effects, double tau2);

// Restricted log-likelihood of the normal-normal model, up to a constant.
double reml_loglik(std::span<const EffectEstimate> effects, double tau2);

Tau2Estimate tau2_dl(std::span<const EffectEstimate> effects);
Tau2Estimate tau2_mp(std::span<const EffectEstimate> effects, const RootOptions& opts = {});
Tau2Estimate tau2_reml(std::span<const EffectEstimate> effects, const RootOptions& opts = {});

// Slot for the KD estimator of tau^2. The default fills it with Mandel-Paule
// and says so in its label.
struct Tau2Plugin {
  std::string label;
  std::function<Tau2Estimate(std::span<const EffectEstimate>)> estimate;
};
Tau2Plugin kd_substitute(const RootOptions& opts = {});

PooledEstimate iv_pool(std::span<const EffectEstimate> effects, double tau2);

// Normalized sample-size weights n_T n_C / (n_T + n_C) for the usable studies.
std::vector<double> ssw_weights(std::span<const EffectEstimate> effects,
                                std::span<const Study2x2> studies);

enum class SswVariance {
  kPlugin,  // sum of w~_i^2 (v_i + tau2)
  kHksj,    // plug-in variance scaled by the weighted residual dispersion
};
std::string to_string(SswVariance v);
SswVariance parse_ssw_variance(const std::string& text);

// Point estimate with the tau2 = 0 plug-in standard error, df = K - 1.
PooledEstimate ssw_point(std::span<const EffectEstimate> effects,
                         std::span<const Study2x2> studies);
// Point estimate with the variance form selected by `mode`, df = K - 1.
PooledEstimate ssw_pooled(std::span<const EffectEstimate> effects,
                          std::span<const Study2x2> studies, const Tau2Estimate& tau2,
                          SswVariance mode = SswVariance::kPlugin);
ConfidenceInterval ssw_ci(std::span<const EffectEstimate> effects,
                          std::span<const Study2x2> studies, const Tau2Estimate& tau2,
                          double level = 0.95, SswVariance mode = SswVariance::kPlugin);

// Two-sided critical value: normal quantile for infinite df, Student t otherwise.
double critical_value(double level, double df);
ConfidenceInterval wald_ci(const PooledEstimate& p, double level = 0.95);

}  // namespace metasim
