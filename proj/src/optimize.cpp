#include "metasim/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace metasim {

namespace {

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

Eigen::MatrixXd numerical_hessian(const Objective& fn, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd gp(n), gm(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = 1e-4 * std::max(1.0, std::abs(x(j)));
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += step;
    xm(j) -= step;
    fn(xp, gp);
    fn(xm, gm);
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

MinimizeResult minimize_bfgs(const Objective& fn, Eigen::VectorXd x0,
                             const MinimizeOptions& opts) {
  const Eigen::Index n = x0.size();
  MinimizeResult res;
  res.x = std::move(x0);
  res.grad.resize(n);
  res.f = fn(res.x, res.grad);
  if (n == 0) {
    res.converged = true;
    return res;
  }

  Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;  // inv_h is the identity
  Eigen::VectorXd g_new(n);
  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it + 1;
    if (inf_norm(res.grad) < opts.gradient_tolerance) break;

    Eigen::VectorXd dir = -inv_h * res.grad;
    double slope = res.grad.dot(dir);
    if (!(slope < 0.0)) {
      inv_h.setIdentity();
      fresh = true;
      dir = -res.grad;
      slope = res.grad.dot(dir);
    }
    // A steepest-descent step carries no curvature information; keep it short.
    const double dir_norm = inf_norm(dir);
    double t = fresh && dir_norm > 1.0 ? 1.0 / dir_norm : 1.0;

    // Weak Wolfe search: bisect on Armijo failure, expand while the
    // directional derivative is still steep.
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    bool accepted = false;
    Eigen::VectorXd x_best, g_best;
    double f_best = res.f;
    Eigen::VectorXd x_new;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = res.x + t * dir;
      const double f_new = fn(x_new, g_new);
      if (!std::isfinite(f_new) || !finite(g_new) || !(f_new < res.f) ||
          f_new > res.f + 1e-4 * t * slope) {
        hi = t;
      } else {
        accepted = true;
        if (f_new <= f_best) {
          x_best = x_new;
          g_best = g_new;
          f_best = f_new;
        }
        if (g_new.dot(dir) >= 0.9 * slope) break;
        lo = t;
      }
      if (accepted && ls >= 10) break;
      t = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * t;
    }
    if (!accepted) {
      // Rounding has taken over f; the Newton polish below finishes.
      if (fresh) break;
      inv_h.setIdentity();
      fresh = true;
      continue;
    }

    const Eigen::VectorXd s = x_best - res.x;
    const Eigen::VectorXd y = g_best - res.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) inv_h *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
      inv_h = (eye - rho * s * y.transpose()) * inv_h * (eye - rho * y * s.transpose()) +
              rho * s * s.transpose();
      fresh = false;
    }
    res.x = x_best;
    res.f = f_best;
    res.grad = g_best;
  }

  // Newton polish: accept a step whenever it shrinks the gradient.
  res.hessian = numerical_hessian(fn, res.x);
  for (int k = 0; k < opts.newton_polish_steps; ++k) {
    if (inf_norm(res.grad) < opts.gradient_tolerance) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(res.hessian);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    const Eigen::VectorXd step = ldlt.solve(-res.grad);
    if (!finite(step)) break;
    const Eigen::VectorXd x_new = res.x + step;
    const double f_new = fn(x_new, g_new);
    if (!std::isfinite(f_new) || inf_norm(g_new) >= inf_norm(res.grad)) break;
    res.x = x_new;
    res.f = f_new;
    res.grad = g_new;
    res.hessian = numerical_hessian(fn, res.x);
  }

  res.converged = inf_norm(res.grad) < opts.gradient_tolerance;
  return res;
}

}  // namespace metasim
