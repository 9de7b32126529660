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

#ifndef EPOP_SOURCES_HPP
#define EPOP_SOURCES_HPP

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <epop/ep_engine.hpp>
#include <epop/factors.hpp>
#include <epop/message_operator.hpp>
#include <epop/random.hpp>

/**
 * \file
 * \brief Message sources for the EP engine: importance-sampling oracle, learned operator,
 * and the variance-gated mix of the two.
 */

namespace epop {

/// Accumulated wall-clock time of x-bound message computations.
struct SourceTimings {
  std::size_t messages = 0;
  double seconds = 0.0;

  [[nodiscard]] double per_message() const {
    return messages == 0 ? 0.0 : seconds / static_cast<double>(messages);
  }
};

namespace detail {

class ScopedTimer {
 public:
  explicit ScopedTimer(SourceTimings& t) : timings_{t}, start_{std::chrono::steady_clock::now()} {}
  ~ScopedTimer() {
    timings_.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    ++timings_.messages;
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  SourceTimings& timings_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

inline constexpr std::uint64_t kOracleSourceStream = 201;

/// Importance-sampling oracle with common random numbers.
/**
 * The standard normal variates are drawn once from the seed and reused by every call, so
 * the oracle is a deterministic, smooth function of the incoming messages and EP can
 * converge to a fixed point.
 */
class OracleSource : public LogisticMessageSource {
 public:
  OracleSource(std::size_t n_importance, std::uint64_t seed, OracleOptions options = {}, bool update_z = true)
      : options_{options}, update_z_{update_z} {
    if (n_importance < kMinOracleSamples) {
      throw DomainError("OracleSource: at least 100 importance samples are required");
    }
    Rng rng = make_rng(seed, kOracleSourceStream);
    normals_ = detail::standard_normals(n_importance, rng);
  }

  OracleResultX query_x(const IncomingTuple& inc) const { return oracle_to_x(inc, normals_, options_); }

  Gaussian1D message_to_x(const IncomingTuple& inc, const EdgeContext& /*ctx*/) override {
    detail::ScopedTimer timer(timings_);
    return divide(query_x(inc).q, inc.m_x);
  }

  std::optional<BetaDist> message_to_z(const IncomingTuple& inc, const EdgeContext& /*ctx*/) override {
    if (!update_z_) {
      return std::nullopt;
    }
    try {
      return divide(oracle_to_z(inc, normals_, options_).q, inc.m_z);
    } catch (const InfeasibleBetaError&) {
      // Reported to the engine as an improper proposal, which it skips.
      return BetaDist::unchecked(std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN());
    }
  }

  [[nodiscard]] const SourceTimings& timings() const noexcept { return timings_; }

 private:
  OracleOptions options_;
  bool update_z_;
  std::vector<double> normals_;
  SourceTimings timings_;
};

/// Learned operator as message source for x.
class OperatorSource : public LogisticMessageSource {
 public:
  explicit OperatorSource(const MessageOperator& op) : op_{op} {
    if (op.recipient != Recipient::x) {
      throw DomainError("OperatorSource: operator must target the x recipient");
    }
  }

  /// Embeds fixed Beta messages (graph observations) ahead of inference; timed separately.
  void prewarm(const std::vector<BetaDist>& messages) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& b : messages) {
      (void)featurize(op_, IncomingTuple{Gaussian1D::from_mean_variance(0.0, 1.0), b}, &cache_);
    }
    setup_seconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  Gaussian1D message_to_x(const IncomingTuple& inc, const EdgeContext& /*ctx*/) override {
    detail::ScopedTimer timer(timings_);
    return std::get<Gaussian1D>(outgoing_message(op_, inc, &cache_));
  }

  [[nodiscard]] const SourceTimings& timings() const noexcept { return timings_; }
  [[nodiscard]] double setup_seconds() const noexcept { return setup_seconds_; }

 private:
  const MessageOperator& op_;
  BetaFeatureCache cache_;
  SourceTimings timings_;
  double setup_seconds_ = 0.0;
};

struct QueryLogEntry {
  std::string factor;
  std::size_t iteration = 0;
  double variance = 0.0;
  double tau = 0.0;
  /// "query" or "budget_exhausted".
  std::string action;
  /// Predictive variance at the same input after absorbing the oracle answer.
  double variance_after = 0.0;
};

/// Uses the operator unless its predictive variance exceeds tau; then asks the oracle and absorbs.
class ActiveSource : public LogisticMessageSource {
 public:
  ActiveSource(MessageOperator op, UncertaintyPolicy policy, std::size_t n_importance, std::uint64_t seed,
               std::vector<std::string> factor_names, OracleOptions options = {})
      : op_{std::move(op)},
        policy_{policy},
        oracle_{n_importance, seed, options, false},
        factor_names_{std::move(factor_names)} {
    policy_.validate();
  }

  Gaussian1D message_to_x(const IncomingTuple& inc, const EdgeContext& ctx) override {
    detail::ScopedTimer timer(timings_);
    const Decision d = decide(op_, policy_, inc, queries_, &cache_);
    const std::string& name = factor_names_.at(static_cast<std::size_t>(ctx.factor));
    if (const auto* query = std::get_if<QueryOracle>(&d)) {
      const auto answer = oracle_.query_x(inc);
      absorb_in_place(op_, inc, answer.q.mean_log_variance(), &cache_);
      ++queries_;
      const double after = predictive_variance(op_.model, featurize(op_, inc, &cache_));
      log_.push_back({name, ctx.iteration, query->variance, policy_.tau, "query", after});
      return divide(answer.q, inc.m_x);
    }
    const auto& use = std::get<UsePrediction>(d);
    if (use.variance > policy_.tau) {
      log_.push_back({name, ctx.iteration, use.variance, policy_.tau, "budget_exhausted", use.variance});
    }
    return divide(std::get<Gaussian1D>(use.q), inc.m_x);
  }

  [[nodiscard]] std::size_t oracle_queries() const override { return queries_; }
  [[nodiscard]] const std::vector<QueryLogEntry>& query_log() const noexcept { return log_; }
  [[nodiscard]] const MessageOperator& op() const noexcept { return op_; }
  [[nodiscard]] const SourceTimings& timings() const noexcept { return timings_; }

 private:
  MessageOperator op_;
  UncertaintyPolicy policy_;
  OracleSource oracle_;
  std::vector<std::string> factor_names_;
  BetaFeatureCache cache_;
  std::vector<QueryLogEntry> log_;
  std::size_t queries_ = 0;
  SourceTimings timings_;
};

}  // namespace epop

#endif  // EPOP_SOURCES_HPP
