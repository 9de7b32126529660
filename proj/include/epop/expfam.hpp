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

#ifndef EPOP_EXPFAM_HPP
#define EPOP_EXPFAM_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include <epop/errors.hpp>
#include <epop/random.hpp>

/**
 * \file
 * \brief Univariate exponential-family messages: Gaussian and Beta.
 *
 * Both families are stored in a form that makes message multiplication and
 * division exact additions of natural parameters. Conventions:
 *
 * - Gaussian: u(x) = (x, x^2), eta = (mu / s2, -1 / (2 s2)), base measure
 *   h(x) = (2 pi)^{-1/2}, so A(eta) = -eta1^2 / (4 eta2) - log(-2 eta2) / 2.
 * - Beta: u(z) = (log z, log(1 - z)), eta = (alpha - 1, beta - 1), h(z) = 1,
 *   so A(eta) = log B(alpha, beta).
 */

namespace epop {

enum class Family { gaussian, beta };

inline std::string to_string(Family family) { return family == Family::gaussian ? "gaussian" : "beta"; }

struct NaturalParams {
  Family family = Family::gaussian;
  std::array<double, 2> eta{0.0, 0.0};
};

/// First two raw moments (E[x], E[x^2]).
struct RawMoments {
  double mean = 0.0;
  double second_moment = 0.0;
};

/// Regression output form of a Gaussian message: (E[x], log Var[x]).
struct MeanLogVariance {
  double mean = 0.0;
  double log_variance = 0.0;
};

/// Gaussian message in natural parameters.
/**
 * Non-positive precision is representable: such values come out of message
 * division and carry `is_proper() == false`. The all-zero value is the flat
 * (uniform) message, the identity for multiplication.
 */
class Gaussian1D {
 public:
  constexpr Gaussian1D() = default;

  static Gaussian1D from_mean_variance(double mean, double variance) {
    if (!(variance > 0.0) || !std::isfinite(variance) || !std::isfinite(mean)) {
      throw DomainError("Gaussian1D: variance must be positive and finite");
    }
    return from_natural(mean / variance, -0.5 / variance);
  }

  static Gaussian1D from_mean_log_variance(const MeanLogVariance& m) {
    return from_mean_variance(m.mean, std::exp(m.log_variance));
  }

  static constexpr Gaussian1D from_natural(double eta1, double eta2) noexcept {
    Gaussian1D g;
    g.eta1_ = eta1;
    g.eta2_ = eta2;
    return g;
  }

  static constexpr Gaussian1D flat() noexcept { return {}; }

  [[nodiscard]] constexpr double eta1() const noexcept { return eta1_; }
  [[nodiscard]] constexpr double eta2() const noexcept { return eta2_; }
  [[nodiscard]] constexpr double precision() const noexcept { return -2.0 * eta2_; }

  // Meaningful only for proper values.
  [[nodiscard]] constexpr double mean() const noexcept { return eta1_ / precision(); }
  [[nodiscard]] constexpr double variance() const noexcept { return 1.0 / precision(); }

  [[nodiscard]] bool is_proper() const noexcept {
    return eta2_ < 0.0 && std::isfinite(eta1_) && std::isfinite(eta2_);
  }
  [[nodiscard]] constexpr bool is_flat() const noexcept { return eta1_ == 0.0 && eta2_ == 0.0; }

  [[nodiscard]] MeanLogVariance mean_log_variance() const {
    require_proper();
    return {mean(), std::log(variance())};
  }

  void require_proper() const {
    if (!is_proper()) {
      throw DomainError("Gaussian1D: improper distribution (non-positive precision)");
    }
  }

  friend constexpr bool operator==(const Gaussian1D&, const Gaussian1D&) = default;

 private:
  double eta1_ = 0.0;
  double eta2_ = 0.0;
};

/// Beta message parameterized by (alpha, beta).
class BetaDist {
 public:
  /// Uniform on (0, 1), the identity for multiplication.
  constexpr BetaDist() = default;

  BetaDist(double alpha, double beta) : alpha_{alpha}, beta_{beta} {
    if (!is_proper()) {
      throw DomainError("BetaDist: alpha and beta must be positive and finite");
    }
  }

  static BetaDist from_natural(double eta1, double eta2) { return BetaDist{eta1 + 1.0, eta2 + 1.0}; }

  /// Construct without validation; used by message division, which may go improper.
  static constexpr BetaDist unchecked(double alpha, double beta) noexcept {
    BetaDist b;
    b.alpha_ = alpha;
    b.beta_ = beta;
    return b;
  }

  [[nodiscard]] constexpr double alpha() const noexcept { return alpha_; }
  [[nodiscard]] constexpr double beta() const noexcept { return beta_; }

  [[nodiscard]] bool is_proper() const noexcept {
    return alpha_ > 0.0 && beta_ > 0.0 && std::isfinite(alpha_) && std::isfinite(beta_);
  }

  [[nodiscard]] constexpr double mean() const noexcept { return alpha_ / (alpha_ + beta_); }
  [[nodiscard]] constexpr double variance() const noexcept {
    const double s = alpha_ + beta_;
    return alpha_ * beta_ / (s * s * (s + 1.0));
  }

  void require_proper() const {
    if (!is_proper()) {
      throw DomainError("BetaDist: improper distribution (non-positive parameter)");
    }
  }

  friend constexpr bool operator==(const BetaDist&, const BetaDist&) = default;

 private:
  double alpha_ = 1.0;
  double beta_ = 1.0;
};

using ExpFamDist = std::variant<Gaussian1D, BetaDist>;

inline Family family_of(const ExpFamDist& d) noexcept {
  return std::holds_alternative<Gaussian1D>(d) ? Family::gaussian : Family::beta;
}

inline bool is_proper(const ExpFamDist& d) noexcept {
  return std::visit([](const auto& x) { return x.is_proper(); }, d);
}

inline NaturalParams to_natural(const Gaussian1D& g) noexcept { return {Family::gaussian, {g.eta1(), g.eta2()}}; }

inline NaturalParams to_natural(const BetaDist& b) noexcept {
  return {Family::beta, {b.alpha() - 1.0, b.beta() - 1.0}};
}

inline NaturalParams to_natural(const ExpFamDist& d) noexcept {
  return std::visit([](const auto& x) { return to_natural(x); }, d);
}

/// Gaussian results with eta2 >= 0 come back improper-flagged; Beta results must be proper.
inline ExpFamDist from_natural(const NaturalParams& p) {
  if (p.family == Family::gaussian) {
    return Gaussian1D::from_natural(p.eta[0], p.eta[1]);
  }
  return BetaDist::from_natural(p.eta[0], p.eta[1]);
}

inline double log_beta_function(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

inline double log_partition(const NaturalParams& p) {
  const auto [e1, e2] = p.eta;
  if (p.family == Family::gaussian) {
    if (!(e2 < 0.0)) {
      throw DomainError("log_partition: improper Gaussian natural parameters");
    }
    return -e1 * e1 / (4.0 * e2) - 0.5 * std::log(-2.0 * e2);
  }
  if (!(e1 > -1.0) || !(e2 > -1.0)) {
    throw DomainError("log_partition: improper Beta natural parameters");
  }
  return log_beta_function(e1 + 1.0, e2 + 1.0);
}

/// Gradient of the log-partition function, equal to E[u(x)].
inline std::array<double, 2> log_partition_gradient(const NaturalParams& p) {
  const auto [e1, e2] = p.eta;
  if (p.family == Family::gaussian) {
    if (!(e2 < 0.0)) {
      throw DomainError("log_partition_gradient: improper Gaussian natural parameters");
    }
    const double variance = -0.5 / e2;
    const double mean = e1 * variance;
    return {mean, mean * mean + variance};
  }
  if (!(e1 > -1.0) || !(e2 > -1.0)) {
    throw DomainError("log_partition_gradient: improper Beta natural parameters");
  }
  using boost::math::digamma;
  const double a = e1 + 1.0;
  const double b = e2 + 1.0;
  const double psi_sum = digamma(a + b);
  return {digamma(a) - psi_sum, digamma(b) - psi_sum};
}

inline double log_pdf(const Gaussian1D& g, double x) {
  g.require_proper();
  const double d = x - g.mean();
  return -0.5 * (std::log(2.0 * std::numbers::pi * g.variance()) + d * d / g.variance());
}

inline double log_pdf(const BetaDist& b, double z) {
  b.require_proper();
  if (!(z > 0.0) || !(z < 1.0)) {
    return -INFINITY;
  }
  return (b.alpha() - 1.0) * std::log(z) + (b.beta() - 1.0) * std::log1p(-z) -
         log_beta_function(b.alpha(), b.beta());
}

inline double kl_divergence(const Gaussian1D& p, const Gaussian1D& q) {
  p.require_proper();
  q.require_proper();
  const double ratio = p.variance() / q.variance();
  const double d = p.mean() - q.mean();
  const double kl = 0.5 * (ratio + d * d / q.variance() - 1.0 - std::log(ratio));
  return kl > 0.0 ? kl : 0.0;
}

inline double kl_divergence(const BetaDist& p, const BetaDist& q) {
  p.require_proper();
  q.require_proper();
  using boost::math::digamma;
  const double a1 = p.alpha();
  const double b1 = p.beta();
  const double a2 = q.alpha();
  const double b2 = q.beta();
  const double kl = log_beta_function(a2, b2) - log_beta_function(a1, b1) + (a1 - a2) * digamma(a1) +
                    (b1 - b2) * digamma(b1) + (a2 - a1 + b2 - b1) * digamma(a1 + b1);
  return kl > 0.0 ? kl : 0.0;
}

inline double kl_divergence(const ExpFamDist& p, const ExpFamDist& q) {
  if (p.index() != q.index()) {
    throw DomainError("kl_divergence: family mismatch");
  }
  if (const auto* g = std::get_if<Gaussian1D>(&p)) {
    return kl_divergence(*g, std::get<Gaussian1D>(q));
  }
  return kl_divergence(std::get<BetaDist>(p), std::get<BetaDist>(q));
}

/// Moment-matching projection onto the Gaussian family.
inline Gaussian1D project_to_gaussian(const RawMoments& m) {
  const double variance = m.second_moment - m.mean * m.mean;
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw DegenerateMomentError("project_to_gaussian: E[x^2] - E[x]^2 must be positive");
  }
  return Gaussian1D::from_mean_variance(m.mean, variance);
}

/// Beta with the given mean and variance; closed form, not a sufficient-statistic match.
inline BetaDist fit_beta_mean_variance(double mean, double variance) {
  if (!(mean > 0.0) || !(mean < 1.0) || !(variance > 0.0) || !(variance < mean * (1.0 - mean))) {
    throw InfeasibleBetaError("fit_beta_mean_variance: need 0 < mean < 1 and 0 < variance < mean (1 - mean)");
  }
  const double common = mean * (1.0 - mean) / variance - 1.0;
  return BetaDist{mean * common, (1.0 - mean) * common};
}

inline Gaussian1D multiply(const Gaussian1D& a, const Gaussian1D& b) noexcept {
  return Gaussian1D::from_natural(a.eta1() + b.eta1(), a.eta2() + b.eta2());
}

inline Gaussian1D divide(const Gaussian1D& a, const Gaussian1D& b) noexcept {
  return Gaussian1D::from_natural(a.eta1() - b.eta1(), a.eta2() - b.eta2());
}

inline BetaDist multiply(const BetaDist& a, const BetaDist& b) noexcept {
  return BetaDist::unchecked(a.alpha() + b.alpha() - 1.0, a.beta() + b.beta() - 1.0);
}

inline BetaDist divide(const BetaDist& a, const BetaDist& b) noexcept {
  return BetaDist::unchecked(a.alpha() - b.alpha() + 1.0, a.beta() - b.beta() + 1.0);
}

inline ExpFamDist multiply(const ExpFamDist& a, const ExpFamDist& b) {
  if (a.index() != b.index()) {
    throw DomainError("multiply: family mismatch");
  }
  if (const auto* g = std::get_if<Gaussian1D>(&a)) {
    return multiply(*g, std::get<Gaussian1D>(b));
  }
  return multiply(std::get<BetaDist>(a), std::get<BetaDist>(b));
}

inline ExpFamDist divide(const ExpFamDist& a, const ExpFamDist& b) {
  if (a.index() != b.index()) {
    throw DomainError("divide: family mismatch");
  }
  if (const auto* g = std::get_if<Gaussian1D>(&a)) {
    return divide(*g, std::get<Gaussian1D>(b));
  }
  return divide(std::get<BetaDist>(a), std::get<BetaDist>(b));
}

/// Identity message of the family: all natural parameters zero.
inline ExpFamDist flat_message(Family family) noexcept {
  if (family == Family::gaussian) {
    return Gaussian1D::flat();
  }
  return BetaDist{};
}

inline std::vector<double> sample(const ExpFamDist& d, std::size_t n, Rng& rng) {
  if (n == 0) {
    throw DomainError("sample: n must be at least 1");
  }
  std::vector<double> out(n);
  if (const auto* g = std::get_if<Gaussian1D>(&d)) {
    g->require_proper();
    std::normal_distribution<double> normal(0.0, 1.0);
    const double mu = g->mean();
    const double sd = std::sqrt(g->variance());
    for (auto& x : out) {
      x = mu + sd * normal(rng);
    }
    return out;
  }
  const auto& b = std::get<BetaDist>(d);
  b.require_proper();
  std::gamma_distribution<double> ga(b.alpha(), 1.0);
  std::gamma_distribution<double> gb(b.beta(), 1.0);
  for (auto& z : out) {
    const double u = ga(rng);
    const double v = gb(rng);
    z = u / (u + v);
  }
  return out;
}

}  // namespace epop

#endif  // EPOP_EXPFAM_HPP
