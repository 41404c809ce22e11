#include "metasim/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace metasim {

QuadratureRule gauss_hermite(int order) {
  if (order < 1 || order > 200) throw std::invalid_argument("quadrature order must be in [1, 200]");
  QuadratureRule rule;
  if (order == 1) {
    rule.nodes = {0.0};
    rule.weights = {1.0};
    return rule;
  }

  // He_{k+1}(x) = x He_k(x) - k He_{k-1}(x): zero diagonal, sqrt(k) off-diagonal.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  const auto& vals = eig.eigenvalues();
  const auto& vecs = eig.eigenvectors();

  rule.nodes.resize(order);
  rule.weights.resize(order);
  for (int k = 0; k < order; ++k) {
    rule.nodes[k] = vals(k);
    rule.weights[k] = vecs(0, k) * vecs(0, k);
  }

  // Impose exact symmetry; eigen-solver noise otherwise leaves ~1e-15 skew.
  for (int k = 0; k < order / 2; ++k) {
    const int m = order - 1 - k;
    const double x = 0.5 * (rule.nodes[m] - rule.nodes[k]);
    const double w = 0.5 * (rule.weights[m] + rule.weights[k]);
    rule.nodes[k] = -x;
    rule.nodes[m] = x;
    rule.weights[k] = rule.weights[m] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;

  const double total = std::accumulate(rule.weights.begin(), rule.weights.end(), 0.0);
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace metasim
