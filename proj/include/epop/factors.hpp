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

#ifndef EPOP_FACTORS_HPP
#define EPOP_FACTORS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <epop/errors.hpp>
#include <epop/expfam.hpp>
#include <epop/parallel.hpp>
#include <epop/random.hpp>

/**
 * \file
 * \brief The logistic factor f(z | x) = delta(z - 1 / (1 + exp(-x))) and its
 * importance-sampling message oracle.
 *
 * The factor is only ever sampled (z is the pushforward of x), never evaluated.
 * With incoming messages m_x (Gaussian) and m_z (Beta), the tilted distribution on x is
 * r(x) proportional to m_x(x) BetaPdf(logistic(x); alpha, beta).
 */

namespace epop {

/// Incoming messages to a logistic factor.
struct IncomingTuple {
  Gaussian1D m_x;
  BetaDist m_z;

  void require_proper() const {
    m_x.require_proper();
    m_z.require_proper();
  }
};

inline double logistic(double x) noexcept {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) noexcept { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

struct OracleOptions {
  /// Proposal is m_x with its variance multiplied by this factor.
  double proposal_inflation = 2.0;
  double ess_floor_min = 50.0;
  double ess_floor_fraction = 0.02;

  [[nodiscard]] double ess_floor(std::size_t n) const {
    return std::max(ess_floor_min, ess_floor_fraction * static_cast<double>(n));
  }
};

struct OracleResultX {
  Gaussian1D q;
  RawMoments moments;
  double ess = 0.0;
  std::size_t n_samples = 0;
  /// Monte Carlo standard errors of the self-normalized estimates.
  double mean_se = 0.0;
  double second_moment_se = 0.0;
};

struct OracleResultZ {
  BetaDist q;
  double mean = 0.0;
  double variance = 0.0;
  double ess = 0.0;
  std::size_t n_samples = 0;
  double mean_se = 0.0;
};

inline constexpr std::size_t kMinOracleSamples = 100;

namespace detail {

struct WeightedSample {
  std::vector<double> x;
  std::vector<double> w;  // normalized
  double ess = 0.0;
};

inline WeightedSample tilted_sample(const IncomingTuple& inc, std::span<const double> standard_normals,
                                    const OracleOptions& options) {
  inc.require_proper();
  const std::size_t n = standard_normals.size();
  if (n < kMinOracleSamples) {
    throw DomainError("oracle: at least 100 importance samples are required");
  }
  if (!(options.proposal_inflation > 0.0)) {
    throw DomainError("oracle: proposal inflation must be positive");
  }
  const double mu = inc.m_x.mean();
  const double sd = std::sqrt(inc.m_x.variance());
  const double s = std::sqrt(options.proposal_inflation);
  const double quad_coeff = 0.5 * (1.0 - options.proposal_inflation);
  const double am1 = inc.m_z.alpha() - 1.0;
  const double bm1 = inc.m_z.beta() - 1.0;

  WeightedSample out;
  out.x.resize(n);
  out.w.resize(n);
  double max_lw = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = standard_normals[i];
    const double x = mu + s * sd * e;
    // log m_x(x) - log proposal(x), up to a constant, plus the Beta log density at logistic(x).
    const double lw = quad_coeff * e * e - am1 * softplus(-x) - bm1 * softplus(x);
    out.x[i] = x;
    out.w[i] = lw;
    max_lw = std::max(max_lw, lw);
  }
  double sum = 0.0;
  double sum_sq = 0.0;
  for (auto& w : out.w) {
    w = std::exp(w - max_lw);
    sum += w;
    sum_sq += w * w;
  }
  out.ess = sum * sum / sum_sq;
  for (auto& w : out.w) {
    w /= sum;
  }
  if (!(out.ess >= options.ess_floor(n))) {
    throw DegenerateSampleError("oracle: effective sample size below floor", out.ess);
  }
  return out;
}

inline std::vector<double> standard_normals(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(n);
  for (auto& e : eps) {
    e = normal(rng);
  }
  return eps;
}

}  // namespace detail

/// Projected tilted distribution on x from pre-drawn standard normal variates.
/**
 * Proposal draws are x_i = mu + sqrt(inflation) sd eps_i. Reusing the same eps across calls
 * makes the estimate a smooth deterministic function of the incoming messages.
 */
inline OracleResultX oracle_to_x(const IncomingTuple& inc, std::span<const double> standard_normals,
                                 const OracleOptions& options = {}) {
  const auto ws = detail::tilted_sample(inc, standard_normals, options);
  const std::size_t n = ws.x.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean += ws.w[i] * ws.x[i];
  }
  double variance = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ws.x[i] - mean;
    variance += ws.w[i] * d * d;
  }
  const double second = variance + mean * mean;
  double v_mean = 0.0;
  double v_second = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w2 = ws.w[i] * ws.w[i];
    const double d = ws.x[i] - mean;
    const double d2 = ws.x[i] * ws.x[i] - second;
    v_mean += w2 * d * d;
    v_second += w2 * d2 * d2;
  }
  OracleResultX out;
  out.moments = {mean, second};
  if (!(variance > 0.0)) {
    throw DegenerateMomentError("oracle_to_x: zero weighted variance");
  }
  out.q = Gaussian1D::from_mean_variance(mean, variance);
  out.ess = ws.ess;
  out.n_samples = n;
  out.mean_se = std::sqrt(v_mean);
  out.second_moment_se = std::sqrt(v_second);
  return out;
}

inline OracleResultX oracle_to_x(const IncomingTuple& inc, std::size_t n, Rng& rng, const OracleOptions& options = {}) {
  if (n < kMinOracleSamples) {
    throw DomainError("oracle_to_x: at least 100 importance samples are required");
  }
  const auto eps = detail::standard_normals(n, rng);
  return oracle_to_x(inc, eps, options);
}

/// Beta fit to the tilted distribution of z = logistic(x) by mean/variance matching.
inline OracleResultZ oracle_to_z(const IncomingTuple& inc, std::span<const double> standard_normals,
                                 const OracleOptions& options = {}) {
  const auto ws = detail::tilted_sample(inc, standard_normals, options);
  const std::size_t n = ws.x.size();
  std::vector<double> z(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = logistic(ws.x[i]);
    mean += ws.w[i] * z[i];
  }
  double variance = 0.0;
  double v_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = z[i] - mean;
    variance += ws.w[i] * d * d;
    v_mean += ws.w[i] * ws.w[i] * d * d;
  }
  OracleResultZ out;
  out.q = fit_beta_mean_variance(mean, variance);
  out.mean = mean;
  out.variance = variance;
  out.ess = ws.ess;
  out.n_samples = n;
  out.mean_se = std::sqrt(v_mean);
  return out;
}

inline OracleResultZ oracle_to_z(const IncomingTuple& inc, std::size_t n, Rng& rng, const OracleOptions& options = {}) {
  if (n < kMinOracleSamples) {
    throw DomainError("oracle_to_z: at least 100 importance samples are required");
  }
  const auto eps = detail::standard_normals(n, rng);
  return oracle_to_z(inc, eps, options);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Box prior over incoming messages; drawn uniformly per coordinate.
struct IncomingPrior {
  Interval mean_range{-5.0, 5.0};
  Interval log_variance_range{std::log(0.1), std::log(10.0)};
  Interval alpha_range{1.0, 10.0};
  Interval beta_range{1.0, 10.0};

  void validate() const {
    for (const auto& r : {mean_range, log_variance_range, alpha_range, beta_range}) {
      if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
        throw DomainError("IncomingPrior: each range needs finite lo <= hi");
      }
    }
    if (!(alpha_range.lo > 0.0) || !(beta_range.lo > 0.0)) {
      throw DomainError("IncomingPrior: Beta parameter ranges must be positive");
    }
  }
};

inline IncomingTuple sample_incoming(const IncomingPrior& prior, Rng& rng) {
  const double mean = uniform_in(rng, prior.mean_range.lo, prior.mean_range.hi);
  const double log_variance = uniform_in(rng, prior.log_variance_range.lo, prior.log_variance_range.hi);
  const double alpha = uniform_in(rng, prior.alpha_range.lo, prior.alpha_range.hi);
  const double beta = uniform_in(rng, prior.beta_range.lo, prior.beta_range.hi);
  return {Gaussian1D::from_mean_variance(mean, std::exp(log_variance)), BetaDist{alpha, beta}};
}

/// One (incoming messages, outgoing moments) regression example for the X recipient.
struct TrainingPair {
  IncomingTuple input;
  MeanLogVariance target;
  double ess = 0.0;
  std::size_t n_samples = 0;
};

struct TrainingSet {
  std::vector<TrainingPair> pairs;
  /// Draws rejected by the ESS floor and redrawn.
  std::size_t resample_count = 0;
};

inline constexpr std::uint64_t kTrainingStream = 1;

/// Draws `n_pairs` cases from the prior and labels them with the importance-sampling oracle.
/**
 * Case i draws from substream (seed, stream, i) and redraws on ESS rejection, so the set
 * is identical for any thread count. Total attempts are capped at 10 * n_pairs.
 */
inline TrainingSet gen_training_set(const IncomingPrior& prior, std::size_t n_pairs, std::size_t n_importance,
                                    std::uint64_t seed, int threads = 0, const OracleOptions& options = {},
                                    std::uint64_t stream = kTrainingStream) {
  prior.validate();
  if (n_pairs == 0) {
    throw DomainError("gen_training_set: need at least one pair");
  }
  const std::size_t budget = 10 * n_pairs;
  std::vector<TrainingPair> pairs(n_pairs);
  std::vector<std::size_t> attempts(n_pairs, 0);
  parallel_for(n_pairs, threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, stream, i);
    while (attempts[i] < budget) {
      ++attempts[i];
      const IncomingTuple inc = sample_incoming(prior, rng);
      try {
        const auto res = oracle_to_x(inc, n_importance, rng, options);
        pairs[i] = {inc, res.q.mean_log_variance(), res.ess, res.n_samples};
        return;
      } catch (const DegenerateSampleError&) {
      } catch (const DegenerateMomentError&) {
      }
    }
  });
  std::size_t total = 0;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    total += attempts[i];
    if (pairs[i].n_samples == 0) {
      throw DomainError("gen_training_set: resample budget exhausted");
    }
  }
  if (total > budget) {
    throw DomainError("gen_training_set: resample budget exhausted");
  }
  return {std::move(pairs), total - n_pairs};
}

}  // namespace epop

#endif  // EPOP_FACTORS_HPP
