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

#ifndef EPOP_KERNELS_HPP
#define EPOP_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include <epop/errors.hpp>
#include <epop/expfam.hpp>
#include <epop/factors.hpp>
#include <epop/quadrature.hpp>
#include <epop/random.hpp>

/**
 * \file
 * \brief Random Fourier features for the Gaussian kernel
 * k(a, b) = exp(-sum_k (a_k - b_k)^2 / (2 gamma_k^2)), and their expectations
 * under message distributions (mean embeddings).
 *
 * A feature is sqrt(2 / d) cos(omega^T a + phase) with omega_k ~ N(0, 1 / gamma_k^2).
 * Expected features are written through characteristic functions:
 * E cos(omega a + b) = Re(exp(i b) E exp(i omega a)).
 */

namespace epop {

enum class FeatureKind { product, joint };

inline constexpr int kDefaultQuadratureOrder = 64;
inline constexpr double kQuadratureTolerance = 1e-8;

/// A frozen random-feature draw.
struct RffSpec {
  Eigen::MatrixXd frequencies;  ///< num_features x input_dim
  Eigen::VectorXd phases;       ///< radians in [0, 2 pi)
  Eigen::VectorXd bandwidths;   ///< one per input dimension

  [[nodiscard]] int num_features() const noexcept { return static_cast<int>(frequencies.rows()); }
  [[nodiscard]] int input_dim() const noexcept { return static_cast<int>(frequencies.cols()); }
  [[nodiscard]] double scale() const { return std::sqrt(2.0 / num_features()); }
};

/// Draws frequencies as standard normals divided by the bandwidth.
/**
 * The standard-normal stream does not depend on the bandwidths, so two draws from
 * equally seeded generators differ only by a per-dimension rescaling.
 */
inline RffSpec draw_rff(int input_dim, int num_features, const Eigen::VectorXd& bandwidths, Rng& rng) {
  if (num_features < 1 || input_dim < 1) {
    throw DomainError("draw_rff: need at least one feature and one input dimension");
  }
  if (bandwidths.size() != input_dim || !(bandwidths.array() > 0.0).all() || !bandwidths.allFinite()) {
    throw DomainError("draw_rff: bandwidths must be positive, one per input dimension");
  }
  RffSpec spec;
  spec.bandwidths = bandwidths;
  spec.frequencies.resize(num_features, input_dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < num_features; ++j) {
    for (int k = 0; k < input_dim; ++k) {
      spec.frequencies(j, k) = normal(rng) / bandwidths(k);
    }
  }
  spec.phases.resize(num_features);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int j = 0; j < num_features; ++j) {
    double phase = two_pi * std::generate_canonical<double, 64>(rng);
    spec.phases(j) = phase < two_pi ? phase : 0.0;
  }
  return spec;
}

inline RffSpec draw_rff(int input_dim, int num_features, double bandwidth, Rng& rng) {
  return draw_rff(input_dim, num_features, Eigen::VectorXd::Constant(input_dim, bandwidth), rng);
}

inline Eigen::VectorXd rff_point(const RffSpec& spec, const Eigen::VectorXd& x) {
  if (x.size() != spec.input_dim()) {
    throw DomainError("rff_point: input dimension mismatch");
  }
  Eigen::VectorXd arg = spec.frequencies * x + spec.phases;
  return spec.scale() * arg.array().cos().matrix();
}

inline double gaussian_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& bandwidths) {
  return std::exp(-0.5 * ((a - b).array() / bandwidths.array()).square().sum());
}

/// E exp(i omega x) for x ~ g, closed form.
inline Eigen::VectorXcd gaussian_characteristic(const Eigen::Ref<const Eigen::VectorXd>& omega, const Gaussian1D& g) {
  g.require_proper();
  const double mu = g.mean();
  const double var = g.variance();
  Eigen::VectorXcd out(omega.size());
  for (Eigen::Index j = 0; j < omega.size(); ++j) {
    const double w = omega(j);
    out(j) = std::polar(std::exp(-0.5 * w * w * var), w * mu);
  }
  return out;
}

namespace detail {

inline Eigen::VectorXcd beta_characteristic_fixed(const Eigen::Ref<const Eigen::VectorXd>& omega,
                                                  const QuadratureRule& rule) {
  Eigen::VectorXcd out(omega.size());
  for (Eigen::Index j = 0; j < omega.size(); ++j) {
    const double w = omega(j);
    double re = 0.0;
    double im = 0.0;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double t = w * rule.nodes[q];
      re += rule.weights[q] * std::cos(t);
      im += rule.weights[q] * std::sin(t);
    }
    out(j) = {re, im};
  }
  return out;
}

}  // namespace detail

/// E exp(i omega z) for z ~ Beta by Gaussian quadrature with an order-doubling check.
/**
 * Throws QuadratureError if doubling the order moves any value by more than
 * `tolerance / value_scale`; pass the feature scale so the check is on feature entries.
 */
inline Eigen::VectorXcd beta_characteristic(const Eigen::Ref<const Eigen::VectorXd>& omega, const BetaDist& b,
                                            int order = kDefaultQuadratureOrder, double value_scale = 1.0,
                                            double tolerance = kQuadratureTolerance) {
  b.require_proper();
  Eigen::VectorXcd base = detail::beta_characteristic_fixed(omega, beta_gauss_rule(order, b));
  const Eigen::VectorXcd refined = detail::beta_characteristic_fixed(omega, beta_gauss_rule(2 * order, b));
  const double change = omega.size() > 0 ? (base - refined).cwiseAbs().maxCoeff() : 0.0;
  if (!(value_scale * change <= tolerance)) {
    throw QuadratureError("beta_characteristic: quadrature did not converge under order doubling");
  }
  return base;
}

/// Mean embedding of a Gaussian message under a one-dimensional feature draw.
inline Eigen::VectorXd expected_feature_gaussian(const RffSpec& spec, const Gaussian1D& g) {
  if (spec.input_dim() != 1) {
    throw DomainError("expected_feature_gaussian: spec must be one-dimensional");
  }
  g.require_proper();
  const double mu = g.mean();
  const double var = g.variance();
  const double scale = spec.scale();
  Eigen::VectorXd out(spec.num_features());
  for (int j = 0; j < spec.num_features(); ++j) {
    const double w = spec.frequencies(j, 0);
    out(j) = scale * std::cos(w * mu + spec.phases(j)) * std::exp(-0.5 * w * w * var);
  }
  return out;
}

/// Mean embedding of a Beta message under a one-dimensional feature draw.
inline Eigen::VectorXd expected_feature_beta(const RffSpec& spec, const BetaDist& b, int order = kDefaultQuadratureOrder) {
  if (spec.input_dim() != 1) {
    throw DomainError("expected_feature_beta: spec must be one-dimensional");
  }
  const double scale = spec.scale();
  const Eigen::VectorXcd cf = beta_characteristic(spec.frequencies.col(0), b, order, scale);
  Eigen::VectorXd out(spec.num_features());
  for (int j = 0; j < spec.num_features(); ++j) {
    out(j) = scale * (std::polar(1.0, spec.phases(j)) * cf(j)).real();
  }
  return out;
}

/// Kronecker product: out[i * b.size() + j] = a[i] * b[j].
inline Eigen::VectorXd product_features(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    out.segment(i * b.size(), b.size()) = a(i) * b;
  }
  return out;
}

/// Joint features from the Gaussian message and precomputed Beta characteristic values.
/**
 * Entry j is scale * exp(-omega_j1^2 s2 / 2) Re(exp(i (b_j + omega_j1 mu)) cf_z(j)).
 */
inline Eigen::VectorXd joint_features_from_characteristic(const RffSpec& spec, const Gaussian1D& g,
                                                          const Eigen::VectorXcd& cf_z) {
  g.require_proper();
  const double mu = g.mean();
  const double half_var = 0.5 * g.variance();
  const auto w1 = spec.frequencies.col(0).array();
  const Eigen::ArrayXd amp = spec.scale() * (-half_var * w1.square()).exp();
  const Eigen::ArrayXd theta = w1 * mu + spec.phases.array();
  Eigen::VectorXd out(spec.num_features());
  for (int j = 0; j < spec.num_features(); ++j) {
    out(j) = amp(j) * (std::cos(theta(j)) * cf_z(j).real() - std::sin(theta(j)) * cf_z(j).imag());
  }
  return out;
}

/// Mean embedding of the product distribution m_x(x) m_z(z) under a two-dimensional draw.
inline Eigen::VectorXd joint_features(const RffSpec& spec, const IncomingTuple& inc, int order = kDefaultQuadratureOrder) {
  if (spec.input_dim() != 2) {
    throw DomainError("joint_features: spec must be two-dimensional");
  }
  const Eigen::VectorXcd cf_z = beta_characteristic(spec.frequencies.col(1), inc.m_z, order, spec.scale());
  return joint_features_from_characteristic(spec, inc.m_x, cf_z);
}

/// E_{a ~ g1} E_{b ~ g2} exp(-(a - b)^2 / (2 gamma^2)), closed form.
inline double gaussian_expected_kernel(const Gaussian1D& g1, const Gaussian1D& g2, double gamma) {
  g1.require_proper();
  g2.require_proper();
  const double s2 = gamma * gamma + g1.variance() + g2.variance();
  const double d = g1.mean() - g2.mean();
  return gamma / std::sqrt(s2) * std::exp(-0.5 * d * d / s2);
}

/// E_{a ~ b1} E_{b ~ b2} exp(-(a - b)^2 / (2 gamma^2)) by tensor Gaussian quadrature.
inline double beta_expected_kernel(const BetaDist& b1, const BetaDist& b2, double gamma, int order = 128,
                                   double tolerance = 1e-10) {
  auto evaluate = [&](int n) {
    const auto r1 = beta_gauss_rule(n, b1);
    const auto r2 = beta_gauss_rule(n, b2);
    const double inv = 0.5 / (gamma * gamma);
    double total = 0.0;
    for (int p = 0; p < n; ++p) {
      double inner = 0.0;
      for (int q = 0; q < n; ++q) {
        const double d = r1.nodes[p] - r2.nodes[q];
        inner += r2.weights[q] * std::exp(-inv * d * d);
      }
      total += r1.weights[p] * inner;
    }
    return total;
  };
  b1.require_proper();
  b2.require_proper();
  const double base = evaluate(order);
  const double refined = evaluate(2 * order);
  if (!(std::abs(base - refined) <= tolerance)) {
    throw QuadratureError("beta_expected_kernel: quadrature did not converge under order doubling");
  }
  return base;
}

/// Kernel value between incoming tuples with base bandwidths (gamma_x, gamma_z).
/**
 * The expected product kernel is the product of per-coordinate double expectations. The
 * joint-embedding kernel takes the inner product of embeddings of m_x(x) m_z(z); since the
 * joint factorizes, it has the same value for the same bandwidths. The two kinds differ in
 * how their random features approximate it.
 */
inline double exact_kernel(FeatureKind kind, const IncomingTuple& a, const IncomingTuple& b,
                           const Eigen::Vector2d& bandwidths) {
  (void)kind;
  a.require_proper();
  b.require_proper();
  return gaussian_expected_kernel(a.m_x, b.m_x, bandwidths(0)) * beta_expected_kernel(a.m_z, b.m_z, bandwidths(1));
}

/// Median pairwise distance heuristic for (gamma_x, gamma_z).
/**
 * gamma_x uses the means of the Gaussian messages and gamma_z the means of the Beta
 * messages, so both are in the units of the variable being embedded.
 */
inline Eigen::Vector2d median_heuristic_bandwidths(std::span<const IncomingTuple> inputs) {
  auto median_distance = [&](auto&& coordinate) {
    std::vector<double> values;
    values.reserve(inputs.size());
    for (const auto& inc : inputs) {
      values.push_back(coordinate(inc));
    }
    std::vector<double> dist;
    dist.reserve(values.size() * (values.size() - (values.empty() ? 0 : 1)) / 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
      for (std::size_t j = i + 1; j < values.size(); ++j) {
        dist.push_back(std::abs(values[i] - values[j]));
      }
    }
    if (dist.empty()) {
      return 1.0;
    }
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    return *mid > 0.0 ? *mid : 1.0;
  };
  return {median_distance([](const IncomingTuple& t) { return t.m_x.mean(); }),
          median_distance([](const IncomingTuple& t) { return t.m_z.mean(); })};
}

}  // namespace epop

#endif  // EPOP_KERNELS_HPP
