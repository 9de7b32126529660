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

#ifndef EPOP_COMMANDS_HPP
#define EPOP_COMMANDS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <epop/ep_engine.hpp>
#include <epop/errors.hpp>
#include <epop/factors.hpp>
#include <epop/io.hpp>
#include <epop/message_operator.hpp>
#include <epop/parallel.hpp>
#include <epop/sources.hpp>

/**
 * \file
 * \brief The five pipeline commands shared by the CLI and the tests.
 */

namespace epop {

/// Bad invocation or configuration; the CLI maps it to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kEvalCaseStream = 301;
inline constexpr std::uint64_t kEvalOracleAStream = 302;
inline constexpr std::uint64_t kEvalOracleBStream = 303;

/// Every key is flat and mirrors a CLI flag (underscores become dashes).
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 0;

  IncomingPrior prior;
  std::size_t n_train = 2000;
  std::size_t n_test = 200;
  std::size_t n_importance = 10000;
  OracleOptions oracle;

  FeatureKind feature_kind = FeatureKind::joint;
  int num_features = 2000;
  int quadrature_order = kDefaultQuadratureOrder;
  int cv_folds = 5;
  CvGrid cv_grid;
  double tau_percentile = 0.9;

  bool oracle_passthrough = false;

  DampingConfig damping;
  std::optional<double> tau;
  std::size_t budget = 50;

  std::string dataset;
  std::string model;
  std::string graph;
  std::string out;
  std::string model_out;
};

namespace detail {

inline Interval interval_from_json(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 2) {
    throw UsageError("config: '" + key + "' must be a [lo, hi] pair");
  }
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace detail

/// Overlays the keys present in `j` onto `cfg`; unknown keys are rejected.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) {
    throw UsageError("config: top level must be a JSON object");
  }
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "threads") cfg.threads = v.get<int>();
      else if (key == "prior_mean") cfg.prior.mean_range = detail::interval_from_json(v, key);
      else if (key == "prior_log_variance") cfg.prior.log_variance_range = detail::interval_from_json(v, key);
      else if (key == "prior_alpha") cfg.prior.alpha_range = detail::interval_from_json(v, key);
      else if (key == "prior_beta") cfg.prior.beta_range = detail::interval_from_json(v, key);
      else if (key == "n_train") cfg.n_train = v.get<std::size_t>();
      else if (key == "n_test") cfg.n_test = v.get<std::size_t>();
      else if (key == "n_importance") cfg.n_importance = v.get<std::size_t>();
      else if (key == "proposal_inflation") cfg.oracle.proposal_inflation = v.get<double>();
      else if (key == "ess_floor_min") cfg.oracle.ess_floor_min = v.get<double>();
      else if (key == "ess_floor_fraction") cfg.oracle.ess_floor_fraction = v.get<double>();
      else if (key == "feature_kind") cfg.feature_kind = io::feature_kind_from_string(v.get<std::string>());
      else if (key == "num_features") cfg.num_features = v.get<int>();
      else if (key == "quadrature_order") cfg.quadrature_order = v.get<int>();
      else if (key == "cv_folds") cfg.cv_folds = v.get<int>();
      else if (key == "bandwidth_multipliers") cfg.cv_grid.bandwidth_multipliers = v.get<std::vector<double>>();
      else if (key == "lambdas") cfg.cv_grid.lambdas = v.get<std::vector<double>>();
      else if (key == "tau_percentile") cfg.tau_percentile = v.get<double>();
      else if (key == "oracle_passthrough") cfg.oracle_passthrough = v.get<bool>();
      else if (key == "delta") cfg.damping.delta = v.get<double>();
      else if (key == "max_iters") cfg.damping.max_iters = v.get<std::size_t>();
      else if (key == "tol") cfg.damping.tol = v.get<double>();
      else if (key == "tau") cfg.tau = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "budget") cfg.budget = v.get<std::size_t>();
      else if (key == "dataset") cfg.dataset = v.get<std::string>();
      else if (key == "model") cfg.model = v.get<std::string>();
      else if (key == "graph") cfg.graph = v.get<std::string>();
      else if (key == "out") cfg.out = v.get<std::string>();
      else if (key == "model_out") cfg.model_out = v.get<std::string>();
      else throw UsageError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: wrong value type: ") + e.what());
  } catch (const DomainError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config '" + path + "': " + e.what());
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  apply_config_json(cfg, j);
}

/// `base.json` -> `base<suffix>`; otherwise `path<suffix>`.
inline std::string sibling_path(const std::string& path, const std::string& suffix) {
  const std::string ext = ".json";
  if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0) {
    return path.substr(0, path.size() - ext.size()) + suffix;
  }
  return path + suffix;
}

inline const std::string& require_path(const std::string& value, const char* flag) {
  if (value.empty()) {
    throw UsageError(std::string("missing required path --") + flag);
  }
  return value;
}

// ---------------------------------------------------------------- gen-data

struct GenDataSummary {
  std::size_t rows = 0;
  std::size_t resample_count = 0;
};

inline GenDataSummary cmd_gen_data(const RunConfig& cfg) {
  const auto& out = require_path(cfg.out, "out");
  const TrainingSet ts = gen_training_set(cfg.prior, cfg.n_train, cfg.n_importance, cfg.seed, cfg.threads, cfg.oracle);
  io::write_file(out, io::dataset_to_csv(ts.pairs));
  return {ts.pairs.size(), ts.resample_count};
}

// ---------------------------------------------------------------- train

inline TrainResult cmd_train(const RunConfig& cfg) {
  const auto pairs = io::dataset_from_csv(io::read_file(require_path(cfg.dataset, "dataset")));
  const auto& out = require_path(cfg.out, "out");
  if (pairs.empty()) {
    throw DomainError("train: dataset has no rows");
  }
  std::vector<IncomingTuple> inputs;
  inputs.reserve(pairs.size());
  Eigen::MatrixXd Y(2, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    inputs.push_back(pairs[i].input);
    Y(0, static_cast<Eigen::Index>(i)) = pairs[i].target.mean;
    Y(1, static_cast<Eigen::Index>(i)) = pairs[i].target.log_variance;
  }
  TrainOptions opts;
  opts.kind = cfg.feature_kind;
  opts.num_features = cfg.num_features;
  opts.grid = cfg.cv_grid;
  opts.folds = cfg.cv_folds;
  opts.seed = cfg.seed;
  opts.threads = cfg.threads;
  opts.quadrature_order = cfg.quadrature_order;
  opts.tau_percentile = cfg.tau_percentile;
  TrainResult result = train_operator(inputs, Y, opts);
  io::write_file(out, io::model_to_json(result.op, {cfg.seed, pairs.size(), result.cv}));
  return result;
}

inline io::LoadedModel load_model(const std::string& path) { return io::model_from_json(io::read_file(path)); }

// ---------------------------------------------------------------- eval

struct EvalCase {
  IncomingTuple input;
  bool excluded = false;
  std::string exclusion_reason;
  MeanLogVariance oracle{};
  MeanLogVariance reference{};
  MeanLogVariance predicted{};
  double predictive_variance = 0.0;
  double kl = 0.0;
  double kl_noise = 0.0;
};

struct EvalReport {
  std::vector<EvalCase> cases;
  std::size_t n_evaluated = 0;
  std::size_t n_excluded = 0;
  double median_kl = 0.0;
  double mean_kl = 0.0;
  double p90_kl = 0.0;
  double noise_floor = 0.0;
  double ratio = 0.0;
  std::vector<double> histogram_edges;
  std::vector<std::size_t> histogram_counts;
  double seconds = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Test-time accuracy of an operator against fresh oracle answers.
/**
 * Each case draws its input from (seed, eval-case, i) and two independent oracle answers from
 * the A and B substreams. KL(oracle_A || prediction) is compared with the oracle noise floor,
 * the median of KL(oracle_A || oracle_B).
 */
inline EvalReport evaluate_operator(const MessageOperator& op, const RunConfig& cfg) {
  if (cfg.n_test == 0) {
    throw DomainError("eval: n_test must be positive");
  }
  cfg.prior.validate();
  const auto start = std::chrono::steady_clock::now();
  EvalReport rep;
  rep.cases.resize(cfg.n_test);
  parallel_for(cfg.n_test, cfg.threads, [&](std::size_t i) {
    EvalCase& c = rep.cases[i];
    Rng case_rng = make_rng(cfg.seed, kEvalCaseStream, i);
    c.input = sample_incoming(cfg.prior, case_rng);
    Rng rng_a = make_rng(cfg.seed, kEvalOracleAStream, i);
    Rng rng_b = make_rng(cfg.seed, kEvalOracleBStream, i);
    Gaussian1D qa;
    Gaussian1D qb;
    try {
      qa = oracle_to_x(c.input, cfg.n_importance, rng_a, cfg.oracle).q;
      qb = oracle_to_x(c.input, cfg.n_importance, rng_b, cfg.oracle).q;
    } catch (const DegenerateSampleError& e) {
      c.excluded = true;
      c.exclusion_reason = "ess";
      return;
    } catch (const DegenerateMomentError& e) {
      c.excluded = true;
      c.exclusion_reason = "moments";
      return;
    }
    c.oracle = qa.mean_log_variance();
    c.reference = qb.mean_log_variance();
    const Eigen::VectorXd phi = featurize(op, c.input);
    c.predictive_variance = predictive_variance(op.model, phi);
    Gaussian1D qhat;
    if (cfg.oracle_passthrough) {
      qhat = qb;
    } else {
      try {
        qhat = std::get<Gaussian1D>(predict_q(op, c.input));
      } catch (const DomainError&) {
        c.excluded = true;
        c.exclusion_reason = "prediction";
        return;
      }
    }
    c.predicted = qhat.mean_log_variance();
    c.kl = kl_divergence(qa, qhat);
    c.kl_noise = kl_divergence(qa, qb);
  });
  std::vector<double> kls;
  std::vector<double> noise;
  for (const auto& c : rep.cases) {
    if (c.excluded) {
      ++rep.n_excluded;
    } else {
      kls.push_back(c.kl);
      noise.push_back(c.kl_noise);
    }
  }
  rep.n_evaluated = kls.size();
  if (kls.empty()) {
    throw DomainError("eval: every test case was excluded");
  }
  rep.median_kl = median(kls);
  rep.noise_floor = median(noise);
  rep.ratio = rep.median_kl / rep.noise_floor;
  double sum = 0.0;
  for (double k : kls) {
    sum += k;
  }
  rep.mean_kl = sum / static_cast<double>(kls.size());
  rep.p90_kl = percentile(kls, 0.9);

  constexpr int kBins = 20;
  constexpr double kLo = -8.0;
  constexpr double kHi = 2.0;
  rep.histogram_counts.assign(kBins, 0);
  for (int b = 0; b <= kBins; ++b) {
    rep.histogram_edges.push_back(kLo + (kHi - kLo) * b / kBins);
  }
  for (double k : kls) {
    const double lk = std::log10(std::max(k, 1e-300));
    const int b = std::clamp(static_cast<int>(std::floor((lk - kLo) / (kHi - kLo) * kBins)), 0, kBins - 1);
    ++rep.histogram_counts[static_cast<std::size_t>(b)];
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline nlohmann::json eval_report_json(const EvalReport& rep, bool passthrough) {
  return {{"n_cases", rep.cases.size()},
          {"n_evaluated", rep.n_evaluated},
          {"n_excluded", rep.n_excluded},
          {"kl_direction", "oracle_to_prediction"},
          {"median_kl", rep.median_kl},
          {"mean_kl", rep.mean_kl},
          {"p90_kl", rep.p90_kl},
          {"noise_floor_median_kl", rep.noise_floor},
          {"ratio_to_noise_floor", rep.ratio},
          {"oracle_passthrough", passthrough},
          {"log10_kl_histogram", {{"edges", rep.histogram_edges}, {"counts", rep.histogram_counts}}}};
}

inline std::string eval_cases_csv(const EvalReport& rep) {
  std::string out =
      "case_id,mx_mean,mx_log_variance,mz_alpha,mz_beta,oracle_mean,oracle_log_variance,reference_mean,"
      "reference_log_variance,pred_mean,pred_log_variance,predictive_variance,kl,kl_noise,excluded\n";
  for (std::size_t i = 0; i < rep.cases.size(); ++i) {
    const auto& c = rep.cases[i];
    const auto mx = c.input.m_x.mean_log_variance();
    out += std::to_string(i);
    for (double v : {mx.mean, mx.log_variance, c.input.m_z.alpha(), c.input.m_z.beta(), c.oracle.mean,
                     c.oracle.log_variance, c.reference.mean, c.reference.log_variance, c.predicted.mean,
                     c.predicted.log_variance, c.predictive_variance, c.kl, c.kl_noise}) {
      out += ',';
      out += io::format_double(v);
    }
    out += ',';
    out += c.excluded ? c.exclusion_reason : "";
    out += '\n';
  }
  return out;
}

inline EvalReport cmd_eval(const RunConfig& cfg) {
  const auto loaded = load_model(require_path(cfg.model, "model"));
  const auto& out = require_path(cfg.out, "out");
  const EvalReport rep = evaluate_operator(loaded.op, cfg);
  io::write_file(out, eval_report_json(rep, cfg.oracle_passthrough).dump(2) + "\n");
  io::write_file(sibling_path(out, ".cases.csv"), eval_cases_csv(rep));
  io::write_file(sibling_path(out, ".timings.json"),
                 nlohmann::json{{"eval_seconds", rep.seconds}}.dump(2) + "\n");
  return rep;
}

// ---------------------------------------------------------------- ep-run / active-run

inline nlohmann::json ep_result_json(const EpResult& r, const FactorGraph& g) {
  nlohmann::json marginals = nlohmann::json::array();
  for (std::size_t v = 0; v < r.marginals.size(); ++v) {
    auto m = io::distribution_to_json(r.marginals[v]);
    m["variable"] = g.variables[v].name;
    marginals.push_back(std::move(m));
  }
  return {{"marginals", std::move(marginals)},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"max_delta", r.max_delta},
          {"skipped_updates", r.skipped_updates},
          {"oracle_queries", r.oracle_queries}};
}

inline std::vector<BetaDist> observation_messages(const FactorGraph& g) {
  std::vector<BetaDist> obs;
  for (const auto& [var, b] : g.observations) {
    obs.push_back(b);
  }
  return obs;
}

/// Mean over Gaussian variables of KL(reference marginal || other marginal).
inline double mean_gaussian_marginal_kl(const EpResult& reference, const EpResult& other, const FactorGraph& g,
                                        nlohmann::json* per_variable = nullptr) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < g.variables.size(); ++v) {
    if (g.variables[v].family != Family::gaussian) {
      continue;
    }
    const double kl = kl_divergence(reference.marginals[v], other.marginals[v]);
    if (per_variable != nullptr) {
      per_variable->push_back({{"variable", g.variables[v].name}, {"kl", kl}});
    }
    sum += kl;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

struct EpRunSummary {
  EpResult oracle;
  EpResult op;
  double mean_kl = 0.0;
  SourceTimings oracle_timings;
  SourceTimings operator_timings;
  double operator_setup_seconds = 0.0;
};

inline nlohmann::json timings_json(const SourceTimings& t) {
  return {{"messages", t.messages}, {"seconds", t.seconds}, {"per_message_seconds", t.per_message()}};
}

inline EpRunSummary cmd_ep_run(const RunConfig& cfg) {
  const auto loaded = load_model(require_path(cfg.model, "model"));
  const FactorGraph graph = io::graph_from_json(io::read_file(require_path(cfg.graph, "graph")));
  const auto& out = require_path(cfg.out, "out");

  EpRunSummary s;
  OracleSource oracle(cfg.n_importance, cfg.seed, cfg.oracle);
  s.oracle = run_ep(graph, oracle, cfg.damping);
  s.oracle_timings = oracle.timings();

  OperatorSource opsrc(loaded.op);
  opsrc.prewarm(observation_messages(graph));
  s.op = run_ep(graph, opsrc, cfg.damping);
  s.operator_timings = opsrc.timings();
  s.operator_setup_seconds = opsrc.setup_seconds();

  nlohmann::json per_var = nlohmann::json::array();
  s.mean_kl = mean_gaussian_marginal_kl(s.oracle, s.op, graph, &per_var);
  const nlohmann::json report = {
      {"oracle", ep_result_json(s.oracle, graph)},
      {"operator", ep_result_json(s.op, graph)},
      {"comparison", {{"kl_direction", "oracle_to_operator"}, {"per_variable", per_var}, {"mean_kl", s.mean_kl}}}};
  io::write_file(out, report.dump(2) + "\n");

  auto op_t = timings_json(s.operator_timings);
  op_t["setup_seconds"] = s.operator_setup_seconds;
  const double op_per = s.operator_timings.per_message();
  const nlohmann::json timings = {
      {"oracle", timings_json(s.oracle_timings)},
      {"operator", op_t},
      {"speedup", op_per > 0.0 ? s.oracle_timings.per_message() / op_per : 0.0}};
  io::write_file(sibling_path(out, ".timings.json"), timings.dump(2) + "\n");
  return s;
}

struct ActiveRunSummary {
  EpResult result;
  std::vector<QueryLogEntry> log;
  MessageOperator updated;
  double tau = 0.0;
};

inline ActiveRunSummary cmd_active_run(const RunConfig& cfg) {
  auto loaded = load_model(require_path(cfg.model, "model"));
  const FactorGraph graph = io::graph_from_json(io::read_file(require_path(cfg.graph, "graph")));
  const auto& out = require_path(cfg.out, "out");
  const std::string model_out = cfg.model_out.empty() ? sibling_path(out, ".model.json") : cfg.model_out;

  UncertaintyPolicy policy{cfg.tau.value_or(loaded.op.tau_default), cfg.budget};
  std::vector<std::string> names;
  for (const auto& f : graph.factors) {
    names.push_back(f.name);
  }
  ActiveSource src(std::move(loaded.op), policy, cfg.n_importance, cfg.seed, names, cfg.oracle);
  ActiveRunSummary s;
  s.result = run_ep(graph, src, cfg.damping);
  s.log = src.query_log();
  s.updated = src.op();
  s.tau = policy.tau;

  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : s.log) {
    log.push_back({{"factor", e.factor},
                   {"iteration", e.iteration},
                   {"variance", e.variance},
                   {"tau", e.tau},
                   {"action", e.action},
                   {"variance_after", e.variance_after}});
  }
  const nlohmann::json report = {{"run", ep_result_json(s.result, graph)},
                                 {"tau", s.tau},
                                 {"budget", policy.budget},
                                 {"oracle_queries", src.oracle_queries()},
                                 {"query_log", std::move(log)}};
  io::write_file(out, report.dump(2) + "\n");
  auto meta = loaded.meta;
  io::write_file(model_out, io::model_to_json(s.updated, meta));
  io::write_file(sibling_path(out, ".timings.json"),
                 nlohmann::json{{"source", timings_json(src.timings())}}.dump(2) + "\n");
  return s;
}

}  // namespace epop

#endif  // EPOP_COMMANDS_HPP
