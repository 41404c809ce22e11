#pragma once

#include <vector>

namespace metasim {

// Nodes and weights for E[f(Z)], Z ~ N(0, 1): E[f(Z)] ~ sum_k weights[k] f(nodes[k]).
// Exact for polynomials of degree up to 2 * order - 1.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  int order() const noexcept { return static_cast<int>(nodes.size()); }
};

// Gauss-Hermite rule for the standard normal weight, built by Golub-Welsch
// from the Jacobi matrix of the probabilists' Hermite polynomials.
QuadratureRule gauss_hermite(int order);

}  // namespace metasim
