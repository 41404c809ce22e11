#include "metasim/glmm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "metasim/optimize.hpp"

namespace metasim {

namespace {

double log1pexp(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double lchoose(std::int64_t n, std::int64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

// Linear predictor of one arm as a function of the standardized random
// effects z ~ N(0, I_D): eta = offset + slope . z.
template <int D>
struct ArmPredictor {
  double offset = 0.0;
  Eigen::Matrix<double, D, 1> slope = Eigen::Matrix<double, D, 1>::Zero();
};

// log of the integral of the study likelihood against N(0, I_D), and the
// posterior means of the arm residuals r = x - n p and of z * r.
template <int D>
struct Marginal {
  double log_integral = 0.0;
  double e_rt = 0.0;
  double e_rc = 0.0;
  Eigen::Matrix<double, D, 1> e_z_rt = Eigen::Matrix<double, D, 1>::Zero();
  Eigen::Matrix<double, D, 1> e_z_rc = Eigen::Matrix<double, D, 1>::Zero();
};

template <int D>
class StudyIntegrand {
 public:
  using Vec = Eigen::Matrix<double, D, 1>;
  using Mat = Eigen::Matrix<double, D, D>;

  StudyIntegrand(const Study2x2& s, const ArmPredictor<D>& t, const ArmPredictor<D>& c)
      : s_(s), t_(t), c_(c), log_const_(lchoose(s.n_t, s.x_t) + lchoose(s.n_c, s.x_c)) {}

  // Conditional log-likelihood given z.
  double ell(const Vec& z) const {
    const double et = t_.offset + t_.slope.dot(z);
    const double ec = c_.offset + c_.slope.dot(z);
    return static_cast<double>(s_.x_t) * et - static_cast<double>(s_.n_t) * log1pexp(et) +
           static_cast<double>(s_.x_c) * ec - static_cast<double>(s_.n_c) * log1pexp(ec) +
           log_const_;
  }

  // Log of the integrand up to the normal constant: ell(z) - |z|^2 / 2.
  double log_kernel(const Vec& z) const { return ell(z) - 0.5 * z.squaredNorm(); }

  void residuals(const Vec& z, double& rt, double& rc, double& ht, double& hc) const {
    const double pt = expit(t_.offset + t_.slope.dot(z));
    const double pc = expit(c_.offset + c_.slope.dot(z));
    rt = static_cast<double>(s_.x_t) - static_cast<double>(s_.n_t) * pt;
    rc = static_cast<double>(s_.x_c) - static_cast<double>(s_.n_c) * pc;
    ht = static_cast<double>(s_.n_t) * pt * (1.0 - pt);
    hc = static_cast<double>(s_.n_c) * pc * (1.0 - pc);
  }

  // Mode of log_kernel by damped Newton; strictly concave with curvature <= -1.
  Vec mode(Mat& neg_hessian) const {
    Vec z = Vec::Zero();
    double current = log_kernel(z);
    for (int it = 0; it < 100; ++it) {
      double rt, rc, ht, hc;
      residuals(z, rt, rc, ht, hc);
      const Vec grad = rt * t_.slope + rc * c_.slope - z;
      neg_hessian = ht * t_.slope * t_.slope.transpose() + hc * c_.slope * c_.slope.transpose() +
                    Mat::Identity();
      Vec step = neg_hessian.ldlt().solve(grad);
      if (step.cwiseAbs().maxCoeff() < 1e-13) break;
      double scale = 1.0;
      Vec next = z + step;
      double value = log_kernel(next);
      for (int h = 0; h < 40 && value < current; ++h) {
        scale *= 0.5;
        next = z + scale * step;
        value = log_kernel(next);
      }
      z = next;
      current = value;
      if (scale * step.cwiseAbs().maxCoeff() < 1e-13) break;
    }
    double rt, rc, ht, hc;
    residuals(z, rt, rc, ht, hc);
    neg_hessian = ht * t_.slope * t_.slope.transpose() + hc * c_.slope * c_.slope.transpose() +
                  Mat::Identity();
    return z;
  }

  Marginal<D> integrate(const QuadratureRule& rule) const {
    Mat neg_hessian;
    const Vec center = mode(neg_hessian);
    // Nodes z = center + L x with L L^T the inverse curvature at the mode.
    const Mat cov = neg_hessian.inverse();
    const Mat chol = cov.llt().matrixL();
    const double log_det = std::log(chol.diagonal().prod());

    const int m = rule.order();
    int count = 1;
    for (int d = 0; d < D; ++d) count *= m;

    std::vector<double> log_terms(static_cast<std::size_t>(count));
    std::vector<Vec> points(static_cast<std::size_t>(count));
    for (int idx = 0; idx < count; ++idx) {
      Vec x;
      double log_w = 0.0;
      int rest = idx;
      for (int d = 0; d < D; ++d) {
        const int k = rest % m;
        rest /= m;
        x(d) = rule.nodes[k];
        log_w += std::log(rule.weights[k]);
      }
      const Vec z = center + chol * x;
      points[idx] = z;
      log_terms[idx] = log_w + log_kernel(z) + 0.5 * x.squaredNorm();
    }
    const double top = *std::max_element(log_terms.begin(), log_terms.end());

    Marginal<D> out;
    double total = 0.0;
    for (int idx = 0; idx < count; ++idx) {
      const double w = std::exp(log_terms[idx] - top);
      double rt, rc, ht, hc;
      residuals(points[idx], rt, rc, ht, hc);
      total += w;
      out.e_rt += w * rt;
      out.e_rc += w * rc;
      out.e_z_rt += w * rt * points[idx];
      out.e_z_rc += w * rc * points[idx];
    }
    out.log_integral = top + std::log(total) + log_det;
    out.e_rt /= total;
    out.e_rc /= total;
    out.e_z_rt /= total;
    out.e_z_rc /= total;
    return out;
  }

 private:
  Study2x2 s_;
  ArmPredictor<D> t_;
  ArmPredictor<D> c_;
  double log_const_;
};

StudyLoglik exact_point(const Study2x2& s, double eta_t, double eta_c) {
  StudyLoglik out;
  out.value = binomial_pair_loglik(s, eta_t, eta_c);
  const double rt = static_cast<double>(s.x_t) - static_cast<double>(s.n_t) * expit(eta_t);
  const double rc = static_cast<double>(s.x_c) - static_cast<double>(s.n_c) * expit(eta_c);
  out.d_alpha = rt + rc;
  out.d_theta = rt;
  return out;
}

}  // namespace

double binomial_pair_loglik(const Study2x2& s, double eta_t, double eta_c) {
  return static_cast<double>(s.x_t) * eta_t - static_cast<double>(s.n_t) * log1pexp(eta_t) +
         static_cast<double>(s.x_c) * eta_c - static_cast<double>(s.n_c) * log1pexp(eta_c) +
         lchoose(s.n_t, s.x_t) + lchoose(s.n_c, s.x_c);
}

StudyLoglik study_loglik_fim2_grad(const Study2x2& s, double alpha_i, double theta,
                                   double tau, const QuadratureRule& rule) {
  if (tau == 0.0) return exact_point(s, alpha_i + theta, alpha_i);
  ArmPredictor<1> t, c;
  t.offset = alpha_i + theta;
  t.slope(0) = 0.5 * tau;
  c.offset = alpha_i;
  c.slope(0) = -0.5 * tau;
  const auto m = StudyIntegrand<1>(s, t, c).integrate(rule);
  StudyLoglik out;
  out.value = m.log_integral;
  out.d_alpha = m.e_rt + m.e_rc;
  out.d_theta = m.e_rt;
  out.d_tau = 0.5 * (m.e_z_rt(0) - m.e_z_rc(0));
  return out;
}

StudyLoglik study_loglik_rim2_grad(const Study2x2& s, double alpha, double sigma,
                                   double theta, double tau, const QuadratureRule& rule) {
  if (sigma == 0.0) return study_loglik_fim2_grad(s, alpha, theta, tau, rule);
  StudyLoglik out;
  if (tau == 0.0) {
    ArmPredictor<1> t, c;
    t.offset = alpha + theta;
    t.slope(0) = sigma;
    c.offset = alpha;
    c.slope(0) = sigma;
    const auto m = StudyIntegrand<1>(s, t, c).integrate(rule);
    out.value = m.log_integral;
    out.d_alpha = m.e_rt + m.e_rc;
    out.d_theta = m.e_rt;
    out.d_sigma = m.e_z_rt(0) + m.e_z_rc(0);
    return out;
  }
  ArmPredictor<2> t, c;
  t.offset = alpha + theta;
  t.slope << sigma, 0.5 * tau;
  c.offset = alpha;
  c.slope << sigma, -0.5 * tau;
  const auto m = StudyIntegrand<2>(s, t, c).integrate(rule);
  out.value = m.log_integral;
  out.d_alpha = m.e_rt + m.e_rc;
  out.d_theta = m.e_rt;
  out.d_sigma = m.e_z_rt(0) + m.e_z_rc(0);
  out.d_tau = 0.5 * (m.e_z_rt(1) - m.e_z_rc(1));
  return out;
}

double study_loglik_fim2(const Study2x2& s, double alpha_i, double theta, double tau,
                         const QuadratureRule& rule) {
  return study_loglik_fim2_grad(s, alpha_i, theta, tau, rule).value;
}

double study_loglik_rim2(const Study2x2& s, double alpha, double sigma, double theta,
                         double tau, const QuadratureRule& rule) {
  return study_loglik_rim2_grad(s, alpha, sigma, theta, tau, rule).value;
}

double total_loglik_fim2(const MetaDataset& ds, const Fim2Params& p, const QuadratureRule& rule) {
  if (p.alpha.size() != ds.K()) throw std::invalid_argument("FIM2: need one intercept per study");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.K(); ++i) {
    total += study_loglik_fim2(ds[i], p.alpha[i], p.theta, p.tau, rule);
  }
  return total;
}

double total_loglik_rim2(const MetaDataset& ds, const Rim2Params& p, const QuadratureRule& rule) {
  double total = 0.0;
  for (const auto& s : ds.studies()) {
    total += study_loglik_rim2(s, p.alpha, p.sigma, p.theta, p.tau, rule);
  }
  return total;
}

namespace {

using Vec = Eigen::VectorXd;

// Packed layouts: FIM2 (alpha_1..alpha_K, theta, tau); RIM2 (alpha, sigma, theta, tau).
double fim2_loglik(std::span<const Study2x2> studies, const Vec& x, Vec& grad,
                   const QuadratureRule& rule) {
  const auto k = static_cast<Eigen::Index>(studies.size());
  grad.setZero(k + 2);
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto r = study_loglik_fim2_grad(studies[i], x(i), x(k), x(k + 1), rule);
    total += r.value;
    grad(i) = r.d_alpha;
    grad(k) += r.d_theta;
    grad(k + 1) += r.d_tau;
  }
  return total;
}

double rim2_loglik(std::span<const Study2x2> studies, const Vec& x, Vec& grad,
                   const QuadratureRule& rule) {
  grad.setZero(4);
  double total = 0.0;
  for (const auto& s : studies) {
    const auto r = study_loglik_rim2_grad(s, x(0), x(1), x(2), x(3), rule);
    total += r.value;
    grad(0) += r.d_alpha;
    grad(1) += r.d_sigma;
    grad(2) += r.d_theta;
    grad(3) += r.d_tau;
  }
  return total;
}

using PackedLoglik = std::function<double(const Vec&, Vec&)>;

struct Candidate {
  Vec x;               // full packed parameters
  std::vector<bool> free;
  MinimizeResult fit;  // over the free coordinates
  double loglik = -std::numeric_limits<double>::infinity();
};

Candidate maximize(const PackedLoglik& loglik, const Vec& start, const std::vector<bool>& free,
                   const GlmmOptions& opts) {
  std::vector<Eigen::Index> idx;
  for (std::size_t j = 0; j < free.size(); ++j) {
    if (free[j]) idx.push_back(static_cast<Eigen::Index>(j));
  }
  const auto n_free = static_cast<Eigen::Index>(idx.size());

  Objective objective = [&](const Vec& y, Vec& g) {
    Vec full = start;
    for (Eigen::Index j = 0; j < n_free; ++j) full(idx[j]) = y(j);
    Vec g_full;
    const double ll = loglik(full, g_full);
    g.resize(n_free);
    for (Eigen::Index j = 0; j < n_free; ++j) g(j) = -g_full(idx[j]);
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
  };

  Vec y0(n_free);
  for (Eigen::Index j = 0; j < n_free; ++j) y0(j) = start(idx[j]);
  MinimizeOptions mo;
  mo.gradient_tolerance = opts.gradient_tolerance;
  mo.max_iterations = opts.max_iterations;

  Candidate c;
  c.free = free;
  c.fit = minimize_bfgs(objective, y0, mo);
  c.x = start;
  for (Eigen::Index j = 0; j < n_free; ++j) c.x(idx[j]) = c.fit.x(j);
  c.loglik = -c.fit.f;
  return c;
}

bool better(const Candidate& a, const Candidate& b) {
  if (a.fit.converged != b.fit.converged) return a.fit.converged;
  return a.loglik > b.loglik;
}

// Observed-information standard error of coordinate `target` of the packed
// vector, restricted to the free coordinates of the candidate.
double se_of(const Candidate& c, Eigen::Index target) {
  std::vector<Eigen::Index> idx;
  for (std::size_t j = 0; j < c.free.size(); ++j) {
    if (c.free[j]) idx.push_back(static_cast<Eigen::Index>(j));
  }
  const auto pos = std::find(idx.begin(), idx.end(), target) - idx.begin();
  const Eigen::MatrixXd& info = c.fit.hessian;  // Hessian of -loglik
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  Vec e = Vec::Zero(info.rows());
  e(pos) = 1.0;
  const double var = ldlt.solve(e)(pos);
  return var > 0.0 ? std::sqrt(var) : std::numeric_limits<double>::quiet_NaN();
}

std::optional<std::string> separation(std::span<const Study2x2> studies) {
  std::int64_t xt = 0, nt = 0, xc = 0, nc = 0;
  for (const auto& s : studies) {
    xt += s.x_t;
    nt += s.n_t;
    xc += s.x_c;
    nc += s.n_c;
  }
  if (xt == 0 || xt == nt) return "separation: treatment arm has no events or only events";
  if (xc == 0 || xc == nc) return "separation: control arm has no events or only events";
  return std::nullopt;
}

// Two-stage starting values: DerSimonian-Laird tau2 and its pooled theta.
struct TwoStageStart {
  double theta = 0.0;
  double tau = 0.0;
};

TwoStageStart two_stage_start(std::span<const Study2x2> studies) {
  try {
    const auto eff = effects_of(studies, ZeroCellPolicy::kAddHalf);
    const auto dl = tau2_dl(eff);
    return {iv_pool(eff, dl.value).theta_hat, std::sqrt(dl.value)};
  } catch (const EstimationError&) {
    return {};
  }
}

double corrected_logit(std::int64_t x, std::int64_t n) {
  return logit((static_cast<double>(x) + 0.5) / (static_cast<double>(n) + 1.0));
}

FitResult failed(FitResult r, std::string why) {
  r.converged = false;
  r.diagnostic = std::move(why);
  r.se_theta = std::numeric_limits<double>::quiet_NaN();
  return r;
}

constexpr double kBoundaryTau2 = 1e-8;

}  // namespace

double fim2_objective(const MetaDataset& ds, const std::vector<double>& packed,
                      std::vector<double>& grad, const QuadratureRule& rule) {
  if (packed.size() != ds.K() + 2) throw std::invalid_argument("FIM2: packed size must be K + 2");
  Vec x = Eigen::Map<const Vec>(packed.data(), static_cast<Eigen::Index>(packed.size()));
  Vec g;
  const double ll = fim2_loglik(ds.studies(), x, g, rule);
  grad.assign(g.data(), g.data() + g.size());
  return ll;
}

double rim2_objective(const MetaDataset& ds, const std::vector<double>& packed,
                      std::vector<double>& grad, const QuadratureRule& rule) {
  if (packed.size() != 4) throw std::invalid_argument("RIM2: packed size must be 4");
  Vec x = Eigen::Map<const Vec>(packed.data(), 4);
  Vec g;
  const double ll = rim2_loglik(ds.studies(), x, g, rule);
  grad.assign(g.data(), g.data() + g.size());
  return ll;
}

FitResult fit_fim2(const MetaDataset& ds, const GlmmOptions& opts) {
  FitResult result;
  result.params = Fim2Params{std::vector<double>(ds.K(), 0.0), 0.0, 0.0};
  if (auto why = separation(ds.studies())) return failed(result, *why);

  // Studies with no events (or only events) in both arms reach likelihood 1
  // as their intercept diverges, whatever theta and tau are; they carry no
  // information and are left out of the fit.
  std::vector<Study2x2> used;
  std::vector<std::size_t> used_index;
  for (std::size_t i = 0; i < ds.K(); ++i) {
    if (ds[i].double_zero()) continue;
    used.push_back(ds[i]);
    used_index.push_back(i);
  }
  if (used.size() < 2) return failed(result, "fewer than 2 informative studies");
  if (used.size() < ds.K()) {
    result.diagnostic = std::to_string(ds.K() - used.size()) + " uninformative studies dropped";
  }

  const auto rule = gauss_hermite(opts.quadrature_order);
  const auto k = static_cast<Eigen::Index>(used.size());
  const PackedLoglik loglik = [&](const Vec& x, Vec& g) { return fim2_loglik(used, x, g, rule); };

  const auto ts = two_stage_start(used);
  const std::array<std::pair<double, double>, 3> starts = {{
      {ts.theta, std::max(ts.tau, 0.1)},
      {0.0, 0.1},
      {ts.theta + 0.25, 2.0 * std::max(ts.tau, 0.1) + 0.2},
  }};

  std::vector<bool> all_free(static_cast<std::size_t>(k + 2), true);
  Candidate best;
  bool have_best = false;
  int iterations = 0;
  for (int r = 0; r < std::clamp(opts.restarts, 1, 3); ++r) {
    const auto [theta0, tau0] = starts[r];
    Vec x0(k + 2);
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& s = used[static_cast<std::size_t>(i)];
      x0(i) = logit((static_cast<double>(s.x_t + s.x_c) + 0.5) /
                    (static_cast<double>(s.n_t + s.n_c) + 1.0)) -
              0.5 * theta0;
    }
    x0(k) = theta0;
    x0(k + 1) = tau0;
    auto cand = maximize(loglik, x0, all_free, opts);
    iterations += cand.fit.iterations;
    if (!have_best || better(cand, best)) {
      best = std::move(cand);
      have_best = true;
    }
  }

  // Boundary check: refit with tau held at 0 and keep it unless the
  // interior fit is strictly better.
  {
    Vec x0 = best.x;
    x0(k + 1) = 0.0;
    auto free = all_free;
    free[static_cast<std::size_t>(k + 1)] = false;
    auto cand = maximize(loglik, x0, free, opts);
    iterations += cand.fit.iterations;
    const double tau2 = best.x(k + 1) * best.x(k + 1);
    if (cand.fit.converged &&
        (tau2 < kBoundaryTau2 || !best.fit.converged || cand.loglik >= best.loglik - 1e-9)) {
      best = std::move(cand);
    }
  }

  Fim2Params p;
  p.alpha.assign(ds.K(), -std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < used.size(); ++j) {
    p.alpha[used_index[j]] = best.x(static_cast<Eigen::Index>(j));
  }
  for (std::size_t i = 0; i < ds.K(); ++i) {
    if (ds[i].double_zero() && ds[i].x_t == ds[i].n_t) {
      p.alpha[i] = std::numeric_limits<double>::infinity();
    }
  }
  p.theta = best.x(k);
  p.tau = std::abs(best.x(k + 1));

  result.loglik = best.loglik;
  result.theta = p.theta;
  result.tau2_hat = p.tau * p.tau;
  if (result.tau2_hat < kBoundaryTau2) {
    result.tau2_hat = 0.0;
    result.tau_at_boundary = true;
  }
  result.iterations = iterations;
  result.gradient_norm = best.fit.grad.size() ? best.fit.grad.cwiseAbs().maxCoeff() : 0.0;
  result.se_theta = se_of(best, k);
  result.params = std::move(p);
  result.converged = best.fit.converged && std::isfinite(result.se_theta);
  if (!best.fit.converged) {
    result.diagnostic = "optimizer did not reach the gradient tolerance";
  } else if (!std::isfinite(result.se_theta)) {
    result.diagnostic = "observed information not positive definite";
  }
  return result;
}

FitResult fit_rim2(const MetaDataset& ds, const GlmmOptions& opts) {
  FitResult result;
  result.params = Rim2Params{};
  if (auto why = separation(ds.studies())) return failed(result, *why);

  const auto rule = gauss_hermite(opts.quadrature_order);
  const auto studies = ds.studies();
  const PackedLoglik loglik = [&](const Vec& x, Vec& g) {
    return rim2_loglik(studies, x, g, rule);
  };

  // Starting intercept spread from the corrected control-arm logits.
  double mean_c = 0.0;
  for (const auto& s : studies) mean_c += corrected_logit(s.x_c, s.n_c);
  mean_c /= static_cast<double>(studies.size());
  double var_c = 0.0;
  for (const auto& s : studies) {
    const double d = corrected_logit(s.x_c, s.n_c) - mean_c;
    var_c += d * d;
  }
  var_c /= static_cast<double>(studies.size() - 1);
  const double sigma0 = std::max(std::sqrt(var_c), 0.1);

  const auto ts = two_stage_start(studies);
  const std::array<Vec, 3> starts = {
      (Vec(4) << mean_c, sigma0, ts.theta, std::max(ts.tau, 0.1)).finished(),
      (Vec(4) << mean_c, 0.1, 0.0, 0.1).finished(),
      (Vec(4) << mean_c, 2.0 * sigma0 + 0.2, ts.theta + 0.25,
       2.0 * std::max(ts.tau, 0.1) + 0.2).finished(),
  };

  const std::vector<bool> all_free(4, true);
  Candidate best;
  bool have_best = false;
  int iterations = 0;
  for (int r = 0; r < std::clamp(opts.restarts, 1, 3); ++r) {
    auto cand = maximize(loglik, starts[r], all_free, opts);
    iterations += cand.fit.iterations;
    if (!have_best || better(cand, best)) {
      best = std::move(cand);
      have_best = true;
    }
  }

  // Boundary checks on sigma = 0, tau = 0 and both.
  const std::array<std::array<bool, 2>, 3> pinned = {{{true, false}, {false, true}, {true, true}}};
  const Candidate interior = best;
  for (const auto& pin : pinned) {
    Vec x0 = interior.x;
    std::vector<bool> free = all_free;
    if (pin[0]) {
      x0(1) = 0.0;
      free[1] = false;
    }
    if (pin[1]) {
      x0(3) = 0.0;
      free[3] = false;
    }
    auto cand = maximize(loglik, x0, free, opts);
    iterations += cand.fit.iterations;
    if (!cand.fit.converged) continue;
    const bool near = (!pin[0] || best.x(1) * best.x(1) < kBoundaryTau2) &&
                      (!pin[1] || best.x(3) * best.x(3) < kBoundaryTau2);
    if (near || !best.fit.converged || cand.loglik >= best.loglik - 1e-9) best = std::move(cand);
  }

  Rim2Params p{best.x(0), std::abs(best.x(1)), best.x(2), std::abs(best.x(3))};
  result.loglik = best.loglik;
  result.theta = p.theta;
  result.tau2_hat = p.tau * p.tau;
  result.sigma2_hat = p.sigma * p.sigma;
  if (result.tau2_hat < kBoundaryTau2) {
    result.tau2_hat = 0.0;
    result.tau_at_boundary = true;
  }
  if (result.sigma2_hat < kBoundaryTau2) {
    result.sigma2_hat = 0.0;
    result.sigma_at_boundary = true;
  }
  result.iterations = iterations;
  result.gradient_norm = best.fit.grad.size() ? best.fit.grad.cwiseAbs().maxCoeff() : 0.0;
  result.se_theta = se_of(best, 2);
  result.params = p;
  result.converged = best.fit.converged && std::isfinite(result.se_theta);
  if (!best.fit.converged) {
    result.diagnostic = "optimizer did not reach the gradient tolerance";
  } else if (!std::isfinite(result.se_theta)) {
    result.diagnostic = "observed information not positive definite";
  }
  return result;
}

std::optional<ConfidenceInterval> glmm_ci(const FitResult& fit, double level) {
  if (!fit.converged || !(fit.se_theta > 0.0)) return std::nullopt;
  PooledEstimate p;
  p.theta_hat = fit.theta;
  p.se = fit.se_theta;
  return wald_ci(p, level);
}

}  // namespace metasim
