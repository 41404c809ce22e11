#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "metasim/core_model.hpp"
#include "metasim/quadrature.hpp"
#include "metasim/twostage.hpp"

namespace metasim {

// Fixed-intercept model with the random effect split equally between arms:
//   logit p_iT = alpha_i + theta + b_i / 2,  logit p_iC = alpha_i - b_i / 2,
//   b_i ~ N(0, tau^2).
struct Fim2Params {
  std::vector<double> alpha;
  double theta = 0.0;
  double tau = 0.0;
};

// Random-intercept counterpart, u_i ~ N(0, sigma^2) independent of b_i:
//   logit p_iT = alpha + u_i + theta + b_i / 2,  logit p_iC = alpha + u_i - b_i / 2.
struct Rim2Params {
  double alpha = 0.0;
  double sigma = 0.0;
  double theta = 0.0;
  double tau = 0.0;
};

struct GlmmOptions {
  int quadrature_order = 21;
  double gradient_tolerance = 1e-6;
  int max_iterations = 500;
  int restarts = 3;  // deterministic starting points tried, best kept
};

struct FitResult {
  std::variant<Fim2Params, Rim2Params> params;
  double loglik = 0.0;
  double theta = 0.0;
  double se_theta = 0.0;
  double tau2_hat = 0.0;
  double sigma2_hat = 0.0;  // RIM2 only
  bool tau_at_boundary = false;
  bool sigma_at_boundary = false;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::string diagnostic;
};

// Log-likelihood of one study and its derivatives. The variance parameters
// enter through their signed scale (tau, sigma); the likelihood is even in each.
struct StudyLoglik {
  double value = 0.0;
  double d_alpha = 0.0;
  double d_theta = 0.0;
  double d_sigma = 0.0;
  double d_tau = 0.0;
};

// Both integrate over the random effects with Gauss-Hermite nodes recentred
// and rescaled at the mode of the integrand. At tau = 0 (and sigma = 0) the
// result is the exact sum of the two binomial log-pmfs.
double study_loglik_fim2(const Study2x2& s, double alpha_i, double theta, double tau,
                         const QuadratureRule& rule);
double study_loglik_rim2(const Study2x2& s, double alpha, double sigma, double theta,
                         double tau, const QuadratureRule& rule);
StudyLoglik study_loglik_fim2_grad(const Study2x2& s, double alpha_i, double theta,
                                   double tau, const QuadratureRule& rule);
StudyLoglik study_loglik_rim2_grad(const Study2x2& s, double alpha, double sigma,
                                   double theta, double tau, const QuadratureRule& rule);

// Exact log Bin(x_t; n_t, expit(eta_t)) + log Bin(x_c; n_c, expit(eta_c)).
double binomial_pair_loglik(const Study2x2& s, double eta_t, double eta_c);

double total_loglik_fim2(const MetaDataset& ds, const Fim2Params& p, const QuadratureRule& rule);
double total_loglik_rim2(const MetaDataset& ds, const Rim2Params& p, const QuadratureRule& rule);

// Packed parameter vectors used by the optimizer: FIM2 is (alpha_1..alpha_K,
// theta, tau); RIM2 is (alpha, sigma, theta, tau). Returns the total
// log-likelihood and writes its gradient.
double fim2_objective(const MetaDataset& ds, const std::vector<double>& packed,
                      std::vector<double>& grad, const QuadratureRule& rule);
double rim2_objective(const MetaDataset& ds, const std::vector<double>& packed,
                      std::vector<double>& grad, const QuadratureRule& rule);

FitResult fit_fim2(const MetaDataset& ds, const GlmmOptions& opts = {});
FitResult fit_rim2(const MetaDataset& ds, const GlmmOptions& opts = {});

// Wald interval theta +- z * se; empty for a fit that did not converge.
std::optional<ConfidenceInterval> glmm_ci(const FitResult& fit, double level = 0.95);

}  // namespace metasim
