#pragma once

#include <functional>

#include <Eigen/Dense>

namespace metasim {

// Objective to be minimized: returns f(x) and writes the gradient.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct MinimizeOptions {
  double gradient_tolerance = 1e-6;  // on the infinity norm
  int max_iterations = 500;
  int newton_polish_steps = 8;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hessian;  // central differences of the gradient at x
  int iterations = 0;
  bool converged = false;
};

// Central-difference Hessian of a gradient function.
Eigen::MatrixXd numerical_hessian(const Objective& fn, const Eigen::VectorXd& x);

// BFGS with a weak Wolfe line search, finished by Newton steps on a
// finite-difference Hessian. Converged means ||grad||_inf < tolerance.
MinimizeResult minimize_bfgs(const Objective& fn, Eigen::VectorXd x0,
                             const MinimizeOptions& opts = {});

}  // namespace metasim
