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

#ifndef EPOP_EP_ENGINE_HPP
#define EPOP_EP_ENGINE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <epop/errors.hpp>
#include <epop/expfam.hpp>
#include <epop/factors.hpp>

/**
 * \file
 * \brief Fully factorized EP on a small factor graph, with message sources for the
 * logistic factor supplied by the caller (oracle, learned operator, or active mix).
 */

namespace epop {

struct Variable {
  std::string name;
  Family family = Family::gaussian;
};

enum class FactorKind { gaussian_prior, logistic, linear_gaussian };

struct Factor {
  std::string name;
  FactorKind kind = FactorKind::gaussian_prior;
  /// gaussian_prior: {v}; logistic: {x, z}; linear_gaussian: {a, b}.
  std::vector<int> variables;
  Gaussian1D prior = Gaussian1D::from_natural(0.0, -0.5);
  /// linear_gaussian: b = coefficient * a + offset + N(0, noise_variance).
  double coefficient = 1.0;
  double offset = 0.0;
  double noise_variance = 1.0;
};

struct FactorGraph {
  std::vector<Variable> variables;
  std::vector<Factor> factors;
  /// Fixed Beta messages into Z variables.
  std::map<int, BetaDist> observations;

  void validate() const {
    const auto n_vars = static_cast<int>(variables.size());
    auto check_var = [&](int v) {
      if (v < 0 || v >= n_vars) {
        throw DomainError("FactorGraph: factor references an unknown variable");
      }
    };
    for (const auto& f : factors) {
      for (int v : f.variables) {
        check_var(v);
      }
      switch (f.kind) {
        case FactorKind::gaussian_prior:
          if (f.variables.size() != 1 || variables[f.variables[0]].family != Family::gaussian) {
            throw DomainError("FactorGraph: gaussian_prior '" + f.name + "' needs one Gaussian variable");
          }
          f.prior.require_proper();
          break;
        case FactorKind::logistic:
          if (f.variables.size() != 2 || variables[f.variables[0]].family != Family::gaussian ||
              variables[f.variables[1]].family != Family::beta) {
            throw DomainError("FactorGraph: logistic '" + f.name + "' needs neighbors (Gaussian x, Beta z)");
          }
          break;
        case FactorKind::linear_gaussian:
          if (f.variables.size() != 2 || variables[f.variables[0]].family != Family::gaussian ||
              variables[f.variables[1]].family != Family::gaussian || f.variables[0] == f.variables[1]) {
            throw DomainError("FactorGraph: linear_gaussian '" + f.name + "' needs two distinct Gaussian variables");
          }
          if (!(f.noise_variance > 0.0)) {
            throw DomainError("FactorGraph: linear_gaussian noise variance must be positive");
          }
          break;
      }
    }
    for (const auto& [v, obs] : observations) {
      check_var(v);
      if (variables[v].family != Family::beta) {
        throw DomainError("FactorGraph: observations attach to Beta variables only");
      }
      obs.require_proper();
    }
  }
};

/// Messages factor -> variable, indexed [factor][slot] where slot indexes Factor::variables.
struct EpState {
  std::vector<std::vector<ExpFamDist>> messages;
  std::size_t iteration = 0;
  double max_delta = std::numeric_limits<double>::infinity();
  std::size_t skipped = 0;
};

inline EpState init_state(const FactorGraph& graph) {
  EpState state;
  for (const auto& f : graph.factors) {
    std::vector<ExpFamDist> row;
    for (int v : f.variables) {
      row.push_back(flat_message(graph.variables[v].family));
    }
    state.messages.push_back(std::move(row));
  }
  return state;
}

namespace detail {

inline ExpFamDist base_message(const FactorGraph& graph, int variable) {
  if (auto it = graph.observations.find(variable); it != graph.observations.end()) {
    return it->second;
  }
  return flat_message(graph.variables[variable].family);
}

inline ExpFamDist product_except(const EpState& state, const FactorGraph& graph, int variable, int skip_factor,
                                 std::size_t skip_slot) {
  ExpFamDist acc = base_message(graph, variable);
  for (std::size_t f = 0; f < graph.factors.size(); ++f) {
    const auto& vars = graph.factors[f].variables;
    for (std::size_t s = 0; s < vars.size(); ++s) {
      if (vars[s] == variable && !(static_cast<int>(f) == skip_factor && s == skip_slot)) {
        acc = multiply(acc, state.messages[f][s]);
      }
    }
  }
  return acc;
}

inline ExpFamDist from_natural_unchecked(const NaturalParams& p) {
  if (p.family == Family::gaussian) {
    return Gaussian1D::from_natural(p.eta[0], p.eta[1]);
  }
  return BetaDist::unchecked(p.eta[0] + 1.0, p.eta[1] + 1.0);
}

/// Improper updates are skipped; the flat message is an admissible "no information" update.
inline bool admissible(const ExpFamDist& m) {
  if (is_proper(m)) {
    return true;
  }
  if (const auto* g = std::get_if<Gaussian1D>(&m)) {
    return g->is_flat();
  }
  return false;
}

}  // namespace detail

/// Product of everything entering `variable` except the message from (factor, slot).
inline ExpFamDist cavity(const EpState& state, const FactorGraph& graph, int factor, std::size_t slot) {
  return detail::product_except(state, graph, graph.factors.at(factor).variables.at(slot), factor, slot);
}

/// Product of the observation (if any) and all factor-to-variable messages.
inline ExpFamDist marginal(const EpState& state, const FactorGraph& graph, int variable) {
  return detail::product_except(state, graph, variable, -1, 0);
}

struct EdgeContext {
  int factor = 0;
  std::size_t iteration = 0;
};

/// Message source for logistic factors.
class LogisticMessageSource {
 public:
  virtual ~LogisticMessageSource() = default;

  /// Outgoing message to x, i.e. proj[tilted] / m_x.
  virtual Gaussian1D message_to_x(const IncomingTuple& inc, const EdgeContext& ctx) = 0;

  /// Outgoing message to z; nullopt leaves the z message untouched.
  virtual std::optional<BetaDist> message_to_z(const IncomingTuple& /*inc*/, const EdgeContext& /*ctx*/) {
    return std::nullopt;
  }

  [[nodiscard]] virtual std::size_t oracle_queries() const { return 0; }
};

/// A message source threw; carries the factor and recipient that failed.
class EpSourceError : public DomainError {
 public:
  EpSourceError(const std::string& factor, const std::string& variable, const std::string& cause)
      : DomainError("message source failed on edge " + factor + " -> " + variable + ": " + cause),
        factor_{factor},
        variable_{variable} {}

  [[nodiscard]] const std::string& factor() const noexcept { return factor_; }
  [[nodiscard]] const std::string& variable() const noexcept { return variable_; }

 private:
  std::string factor_;
  std::string variable_;
};

struct DampingConfig {
  double delta = 0.5;
  std::size_t max_iters = 200;
  double tol = 1e-6;

  void validate() const {
    if (!(delta > 0.0) || delta > 1.0) {
      throw DomainError("DampingConfig: delta must be in (0, 1]");
    }
    if (!(tol > 0.0) || max_iters == 0) {
      throw DomainError("DampingConfig: need tol > 0 and max_iters >= 1");
    }
  }
};

/// One sequential sweep over factors in index order.
/**
 * New messages are damped in natural parameters, eta <- (1 - delta) eta_old + delta eta_new.
 * Improper proposals are skipped (the previous message is kept) and counted.
 */
inline EpState ep_sweep(EpState state, const FactorGraph& graph, LogisticMessageSource& source,
                        const DampingConfig& damping) {
  state.max_delta = 0.0;
  auto apply = [&](std::size_t f, std::size_t slot, const ExpFamDist& proposal) {
    if (!detail::admissible(proposal)) {
      ++state.skipped;
      return;
    }
    const auto old_eta = to_natural(state.messages[f][slot]);
    const auto new_eta = to_natural(proposal);
    NaturalParams mixed = old_eta;
    for (std::size_t k = 0; k < 2; ++k) {
      mixed.eta[k] = damping.delta == 1.0 ? new_eta.eta[k]
                                          : (1.0 - damping.delta) * old_eta.eta[k] + damping.delta * new_eta.eta[k];
      state.max_delta = std::max(state.max_delta, std::abs(mixed.eta[k] - old_eta.eta[k]));
    }
    state.messages[f][slot] = detail::from_natural_unchecked(mixed);
  };

  for (std::size_t fi = 0; fi < graph.factors.size(); ++fi) {
    const auto& f = graph.factors[fi];
    const auto fid = static_cast<int>(fi);
    switch (f.kind) {
      case FactorKind::gaussian_prior:
        apply(fi, 0, f.prior);
        break;
      case FactorKind::linear_gaussian: {
        const auto cav_a = std::get<Gaussian1D>(cavity(state, graph, fid, 0));
        const auto cav_b = std::get<Gaussian1D>(cavity(state, graph, fid, 1));
        const double c = f.coefficient;
        Gaussian1D to_b = Gaussian1D::flat();
        if (cav_a.is_proper()) {
          to_b = Gaussian1D::from_mean_variance(c * cav_a.mean() + f.offset, c * c * cav_a.variance() + f.noise_variance);
        }
        Gaussian1D to_a = Gaussian1D::flat();
        if (cav_b.is_proper()) {
          const double s2 = cav_b.variance() + f.noise_variance;
          to_a = Gaussian1D::from_natural(c * (cav_b.mean() - f.offset) / s2, -0.5 * c * c / s2);
        }
        apply(fi, 0, to_a);
        apply(fi, 1, to_b);
        break;
      }
      case FactorKind::logistic: {
        const auto cav_x = std::get<Gaussian1D>(cavity(state, graph, fid, 0));
        const auto cav_z = std::get<BetaDist>(cavity(state, graph, fid, 1));
        if (!cav_x.is_proper() || !cav_z.is_proper()) {
          state.skipped += 2;
          break;
        }
        const IncomingTuple inc{cav_x, cav_z};
        const EdgeContext ctx{fid, state.iteration};
        const auto& x_name = graph.variables[f.variables[0]].name;
        const auto& z_name = graph.variables[f.variables[1]].name;
        Gaussian1D to_x;
        std::optional<BetaDist> to_z;
        try {
          to_x = source.message_to_x(inc, ctx);
        } catch (const std::exception& e) {
          throw EpSourceError(f.name, x_name, e.what());
        }
        try {
          to_z = source.message_to_z(inc, ctx);
        } catch (const std::exception& e) {
          throw EpSourceError(f.name, z_name, e.what());
        }
        apply(fi, 0, to_x);
        if (to_z) {
          apply(fi, 1, *to_z);
        }
        break;
      }
    }
  }
  ++state.iteration;
  return state;
}

struct EpResult {
  std::vector<ExpFamDist> marginals;
  std::size_t iterations = 0;
  bool converged = false;
  double max_delta = 0.0;
  std::size_t skipped_updates = 0;
  std::size_t oracle_queries = 0;
  EpState state;
};

/// Sweeps until the largest natural-parameter change drops below tol or max_iters is reached.
inline EpResult run_ep(const FactorGraph& graph, LogisticMessageSource& source, const DampingConfig& damping = {}) {
  graph.validate();
  damping.validate();
  EpState state = init_state(graph);
  bool converged = false;
  while (state.iteration < damping.max_iters) {
    state = ep_sweep(std::move(state), graph, source, damping);
    if (state.max_delta < damping.tol) {
      converged = true;
      break;
    }
  }
  EpResult result;
  for (std::size_t v = 0; v < graph.variables.size(); ++v) {
    result.marginals.push_back(marginal(state, graph, static_cast<int>(v)));
  }
  result.iterations = state.iteration;
  result.converged = converged;
  result.max_delta = state.max_delta;
  result.skipped_updates = state.skipped;
  result.oracle_queries = source.oracle_queries();
  result.state = std::move(state);
  return result;
}

}  // namespace epop

#endif  // EPOP_EP_ENGINE_HPP
