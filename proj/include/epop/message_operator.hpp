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

#ifndef EPOP_MESSAGE_OPERATOR_HPP
#define EPOP_MESSAGE_OPERATOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include <epop/errors.hpp>
#include <epop/expfam.hpp>
#include <epop/factors.hpp>
#include <epop/kernels.hpp>
#include <epop/parallel.hpp>
#include <epop/random.hpp>
#include <epop/regress.hpp>

/**
 * \file
 * \brief Learned message operator: incoming messages -> features -> ridge -> q_{f->V}.
 *
 * The regression output is (E[v], log Var[v]) of the projected tilted distribution. The
 * outgoing message is that projection divided by the recipient's own incoming message.
 */

namespace epop {

enum class Recipient { x, z };

inline constexpr std::uint64_t kFeatureStream = 101;
inline constexpr std::uint64_t kCvStream = 102;

/// Memo of Beta characteristic-function vectors keyed by the exact (alpha, beta).
/**
 * Observations enter EP as fixed Beta messages, so the quadrature part of the features
 * repeats across sweeps. A cache serves one feature map; it is not thread-safe.
 */
class BetaFeatureCache {
 public:
  explicit BetaFeatureCache(std::size_t capacity = 256) : capacity_{capacity} {}

  template <class Compute>
  const Eigen::VectorXcd& get(const BetaDist& b, Compute&& compute) {
    const auto key = std::make_pair(b.alpha(), b.beta());
    if (auto it = entries_.find(key); it != entries_.end()) {
      return it->second;
    }
    if (entries_.size() >= capacity_) {
      entries_.clear();
    }
    return entries_.emplace(key, compute()).first->second;
  }

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::size_t capacity_;
  std::map<std::pair<double, double>, Eigen::VectorXcd> entries_;
};

/// Feature pipeline from an incoming tuple to a finite vector.
/**
 * Joint kind: one two-dimensional draw with D features over (x, z).
 * Product kind: one draw per coordinate with d features each, combined by Kronecker
 * product into d^2 features.
 */
struct FeatureMap {
  FeatureKind kind = FeatureKind::joint;
  RffSpec joint;
  RffSpec x_side;
  RffSpec z_side;
  int quadrature_order = kDefaultQuadratureOrder;

  [[nodiscard]] Eigen::Index dimension() const {
    if (kind == FeatureKind::joint) {
      return joint.num_features();
    }
    return static_cast<Eigen::Index>(x_side.num_features()) * z_side.num_features();
  }

  [[nodiscard]] Eigen::VectorXd featurize(const IncomingTuple& inc, BetaFeatureCache* cache = nullptr) const {
    inc.require_proper();
    if (kind == FeatureKind::joint) {
      auto compute = [&] { return beta_characteristic(joint.frequencies.col(1), inc.m_z, quadrature_order, joint.scale()); };
      if (cache != nullptr) {
        return joint_features_from_characteristic(joint, inc.m_x, cache->get(inc.m_z, compute));
      }
      return joint_features_from_characteristic(joint, inc.m_x, compute());
    }
    const Eigen::VectorXd fx = expected_feature_gaussian(x_side, inc.m_x);
    auto compute = [&] { return beta_characteristic(z_side.frequencies.col(0), inc.m_z, quadrature_order, z_side.scale()); };
    const Eigen::VectorXcd& cf = cache != nullptr ? cache->get(inc.m_z, compute) : Eigen::VectorXcd(compute());
    Eigen::VectorXd fz(z_side.num_features());
    for (int j = 0; j < z_side.num_features(); ++j) {
      fz(j) = z_side.scale() * (std::polar(1.0, z_side.phases(j)) * cf(j)).real();
    }
    return product_features(fx, fz);
  }
};

/// Per-coordinate feature count for the product kind given a total budget D.
inline int product_side_features(int num_features) {
  return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(num_features)))));
}

/// Draws a feature map; equal seeds give the same standard-normal stream for any bandwidths.
inline FeatureMap make_feature_map(FeatureKind kind, int num_features, const Eigen::Vector2d& bandwidths,
                                   std::uint64_t seed, int quadrature_order = kDefaultQuadratureOrder) {
  FeatureMap map;
  map.kind = kind;
  map.quadrature_order = quadrature_order;
  Rng rng = make_rng(seed, kFeatureStream);
  if (kind == FeatureKind::joint) {
    map.joint = draw_rff(2, num_features, Eigen::VectorXd(bandwidths), rng);
  } else {
    const int d = product_side_features(num_features);
    map.x_side = draw_rff(1, d, bandwidths(0), rng);
    map.z_side = draw_rff(1, d, bandwidths(1), rng);
  }
  return map;
}

inline Eigen::MatrixXd featurize_all(const FeatureMap& map, std::span<const IncomingTuple> inputs, int threads = 0) {
  Eigen::MatrixXd Phi(map.dimension(), static_cast<Eigen::Index>(inputs.size()));
  parallel_for(inputs.size(), threads,
               [&](std::size_t i) { Phi.col(static_cast<Eigen::Index>(i)) = map.featurize(inputs[i]); });
  return Phi;
}

struct MessageOperator {
  FeatureMap features;
  RidgeModel model;
  Recipient recipient = Recipient::x;
  /// Median-heuristic bandwidths before the cross-validated multiplier.
  Eigen::Vector2d base_bandwidths{1.0, 1.0};
  double bandwidth_multiplier = 1.0;
  /// Default oracle-query threshold: a percentile of training predictive variances.
  double tau_default = 0.0;
};

inline Eigen::VectorXd featurize(const MessageOperator& op, const IncomingTuple& inc, BetaFeatureCache* cache = nullptr) {
  return op.features.featurize(inc, cache);
}

/// Regression output (E, log V) for the incoming tuple.
inline MeanLogVariance predict_moments(const MessageOperator& op, const IncomingTuple& inc,
                                       BetaFeatureCache* cache = nullptr) {
  const Eigen::VectorXd y = predict(op.model, featurize(op, inc, cache));
  if (y.size() != 2 || !y.allFinite()) {
    throw NumericalError("predict_q: non-finite prediction");
  }
  return {y(0), y(1)};
}

inline ExpFamDist moments_to_distribution(Recipient recipient, const MeanLogVariance& m) {
  const double variance = std::exp(m.log_variance);
  if (!std::isfinite(variance) || !(variance > 0.0)) {
    throw NumericalError("predict_q: predicted variance out of range");
  }
  if (recipient == Recipient::x) {
    return Gaussian1D::from_mean_variance(m.mean, variance);
  }
  return fit_beta_mean_variance(m.mean, variance);
}

/// Projected tilted distribution q_{f->V} predicted by the operator.
inline ExpFamDist predict_q(const MessageOperator& op, const IncomingTuple& inc, BetaFeatureCache* cache = nullptr) {
  return moments_to_distribution(op.recipient, predict_moments(op, inc, cache));
}

/// m_{f->V} = q_{f->V} / m_{V->f}; may be improper-flagged.
inline ExpFamDist outgoing_message(const MessageOperator& op, const IncomingTuple& inc, BetaFeatureCache* cache = nullptr) {
  const ExpFamDist q = predict_q(op, inc, cache);
  if (op.recipient == Recipient::x) {
    return divide(q, ExpFamDist{inc.m_x});
  }
  return divide(q, ExpFamDist{inc.m_z});
}

struct UncertaintyPolicy {
  double tau = 1.0;
  std::size_t budget = 0;

  void validate() const {
    if (!(tau > 0.0)) {
      throw DomainError("UncertaintyPolicy: tau must be positive");
    }
  }
};

struct UsePrediction {
  ExpFamDist q;
  double variance = 0.0;
};

struct QueryOracle {
  double variance = 0.0;
};

using Decision = std::variant<UsePrediction, QueryOracle>;

/// Query the oracle iff the predictive variance exceeds tau and budget remains.
inline Decision decide(const MessageOperator& op, const UncertaintyPolicy& policy, const IncomingTuple& inc,
                       std::size_t oracle_calls_used = 0, BetaFeatureCache* cache = nullptr) {
  const Eigen::VectorXd phi = featurize(op, inc, cache);
  const double v = predictive_variance(op.model, phi);
  if (v > policy.tau && oracle_calls_used < policy.budget) {
    return QueryOracle{v};
  }
  const Eigen::VectorXd y = predict(op.model, phi);
  if (!y.allFinite()) {
    throw NumericalError("decide: non-finite prediction");
  }
  return UsePrediction{moments_to_distribution(op.recipient, {y(0), y(1)}), v};
}

inline void absorb_in_place(MessageOperator& op, const IncomingTuple& inc, const MeanLogVariance& oracle_result,
                            BetaFeatureCache* cache = nullptr) {
  const Eigen::VectorXd phi = featurize(op, inc, cache);
  update_online_in_place(op.model, phi, Eigen::Vector2d{oracle_result.mean, oracle_result.log_variance});
}

/// Online update of the operator with an oracle answer at `inc`.
inline MessageOperator absorb(MessageOperator op, const IncomingTuple& inc, const MeanLogVariance& oracle_result,
                              BetaFeatureCache* cache = nullptr) {
  absorb_in_place(op, inc, oracle_result, cache);
  return op;
}

/// Nearest-rank percentile, p in (0, 1].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) {
    throw DomainError("percentile: empty input");
  }
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

struct TrainOptions {
  FeatureKind kind = FeatureKind::joint;
  int num_features = 2000;
  CvGrid grid;
  int folds = 5;
  std::uint64_t seed = 1;
  int threads = 0;
  int quadrature_order = kDefaultQuadratureOrder;
  Recipient recipient = Recipient::x;
  double tau_percentile = 0.9;
};

struct TrainResult {
  MessageOperator op;
  CvReport cv;
};

/// Bandwidth heuristic, cross-validation over the grid, then a primal fit at the chosen entry.
/**
 * Y holds (E, log V) targets as columns. With a singleton grid, cross-validation is skipped.
 */
inline TrainResult train_operator(std::span<const IncomingTuple> inputs, const Eigen::MatrixXd& Y,
                                  const TrainOptions& options) {
  if (inputs.empty() || Y.cols() != static_cast<Eigen::Index>(inputs.size()) || Y.rows() != 2) {
    throw DomainError("train_operator: need 2 x N targets for N >= 1 inputs");
  }
  const Eigen::Vector2d base = median_heuristic_bandwidths(inputs);
  std::map<double, Eigen::MatrixXd> phi_cache;
  auto features = [&](double multiplier) -> const Eigen::MatrixXd& {
    auto it = phi_cache.find(multiplier);
    if (it == phi_cache.end()) {
      const auto map = make_feature_map(options.kind, options.num_features, base * multiplier, options.seed,
                                        options.quadrature_order);
      it = phi_cache.emplace(multiplier, featurize_all(map, inputs, options.threads)).first;
    }
    return it->second;
  };

  TrainResult result;
  const bool singleton = options.grid.bandwidth_multipliers.size() == 1 && options.grid.lambdas.size() == 1;
  if (singleton) {
    result.cv.grid = {{options.grid.bandwidth_multipliers[0], options.grid.lambdas[0]}};
    result.cv.fold_errors = Eigen::MatrixXd::Zero(1, 0);
    result.cv.chosen = 0;
  } else {
    Rng rng = make_rng(options.seed, kCvStream);
    result.cv = cross_validate(features, Y, options.grid, options.folds, rng, options.threads);
  }
  const CvEntry best = result.cv.best();

  auto& op = result.op;
  op.recipient = options.recipient;
  op.base_bandwidths = base;
  op.bandwidth_multiplier = best.bandwidth_multiplier;
  op.features = make_feature_map(options.kind, options.num_features, base * best.bandwidth_multiplier, options.seed,
                                 options.quadrature_order);
  const Eigen::MatrixXd& Phi = features(best.bandwidth_multiplier);
  op.model = fit(Phi, Y, best.lambda);

  const Eigen::MatrixXd APhi = op.model.A_inv * Phi;
  std::vector<double> variances(static_cast<std::size_t>(Phi.cols()));
  for (Eigen::Index i = 0; i < Phi.cols(); ++i) {
    variances[static_cast<std::size_t>(i)] = op.model.noise_scale * std::max(Phi.col(i).dot(APhi.col(i)), 0.0);
  }
  op.tau_default = std::max(percentile(std::move(variances), options.tau_percentile), std::numeric_limits<double>::min());
  return result;
}

}  // namespace epop

#endif  // EPOP_MESSAGE_OPERATOR_HPP
