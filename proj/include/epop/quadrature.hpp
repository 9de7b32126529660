// Copyright 2026 The epop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EPOP_QUADRATURE_HPP
#define EPOP_QUADRATURE_HPP

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include <epop/errors.hpp>
#include <epop/expfam.hpp>

namespace epop {

/// Nodes and weights of a quadrature rule on (0, 1). Weights sum to one.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gaussian quadrature for expectations under Beta(alpha, beta).
/**
 * Golub-Welsch on the Jacobi recurrence with weight (1 - t)^(beta - 1) (1 + t)^(alpha - 1)
 * on [-1, 1], mapped to z = (1 + t) / 2. The rule integrates z^k exactly under the
 * normalized Beta density for k < 2 * order, so smooth integrands converge
 * geometrically even when the density is sharply peaked or singular at the ends.
 * With alpha = beta = 1 this is Gauss-Legendre on (0, 1).
 */
inline QuadratureRule beta_gauss_rule(int order, double alpha, double beta) {
  if (order < 1) {
    throw DomainError("beta_gauss_rule: order must be positive");
  }
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw DomainError("beta_gauss_rule: alpha and beta must be positive");
  }
  const double a = beta - 1.0;
  const double b = alpha - 1.0;
  const double ab = a + b;

  Eigen::VectorXd diag(order);
  Eigen::VectorXd sub(order > 1 ? order - 1 : 1);
  diag(0) = (b - a) / (ab + 2.0);
  for (int n = 1; n < order; ++n) {
    const double two_n_ab = 2.0 * n + ab;
    diag(n) = (b * b - a * a) / (two_n_ab * (two_n_ab + 2.0));
    double beta_n;
    if (n == 1) {
      beta_n = 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab));
    } else {
      beta_n = 4.0 * n * (n + a) * (n + b) * (n + ab) /
               (two_n_ab * two_n_ab * (two_n_ab + 1.0) * (two_n_ab - 1.0));
    }
    sub(n - 1) = std::sqrt(beta_n);
  }

  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  if (order == 1) {
    rule.nodes[0] = 0.5 * (1.0 + diag(0));
    rule.weights[0] = 1.0;
    return rule;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub.head(order - 1), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw QuadratureError("beta_gauss_rule: tridiagonal eigensolver failed");
  }
  // Christoffel numbers: w_i = 1 / sum_k p_k(t_i)^2 with p_k orthonormal under the
  // normalized weight, evaluated by the three-term recurrence.
  for (int i = 0; i < order; ++i) {
    const double t = solver.eigenvalues()(i);
    double p_prev = 0.0;
    double p = 1.0;
    double sum_sq = 1.0;
    for (int k = 0; k + 1 < order; ++k) {
      const double prev_sub = k == 0 ? 0.0 : sub(k - 1);
      const double p_next = ((t - diag(k)) * p - prev_sub * p_prev) / sub(k);
      p_prev = p;
      p = p_next;
      sum_sq += p * p;
    }
    rule.nodes[i] = 0.5 * (1.0 + t);
    rule.weights[i] = 1.0 / sum_sq;
  }
  double total = 0.0;
  for (double w : rule.weights) {
    total += w;
  }
  for (auto& w : rule.weights) {
    w /= total;
  }
  return rule;
}

inline QuadratureRule beta_gauss_rule(int order, const BetaDist& dist) {
  return beta_gauss_rule(order, dist.alpha(), dist.beta());
}

}  // namespace epop

#endif  // EPOP_QUADRATURE_HPP
