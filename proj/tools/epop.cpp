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

#include <charconv>
#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <epop/commands.hpp>

namespace {

enum class FlagType { integer, number, text, boolean, number_list, interval };

struct FlagSpec {
  const char* key;
  FlagType type;
  const char* help;
};

constexpr FlagSpec kFlags[] = {
    {"threads", FlagType::integer, "worker threads (0 = hardware concurrency)"},
    {"prior_mean", FlagType::interval, "incoming-message prior range for the Gaussian mean: lo hi"},
    {"prior_log_variance", FlagType::interval, "prior range for the Gaussian log-variance: lo hi"},
    {"prior_alpha", FlagType::interval, "prior range for Beta alpha: lo hi"},
    {"prior_beta", FlagType::interval, "prior range for Beta beta: lo hi"},
    {"n_train", FlagType::integer, "training cases"},
    {"n_test", FlagType::integer, "evaluation cases"},
    {"n_importance", FlagType::integer, "importance samples per oracle call"},
    {"proposal_inflation", FlagType::number, "proposal variance multiplier"},
    {"ess_floor_min", FlagType::number, "minimum effective sample size"},
    {"ess_floor_fraction", FlagType::number, "effective sample size floor as a fraction of samples"},
    {"feature_kind", FlagType::text, "joint or product"},
    {"num_features", FlagType::integer, "random feature dimension D"},
    {"quadrature_order", FlagType::integer, "Beta quadrature order"},
    {"cv_folds", FlagType::integer, "cross-validation folds"},
    {"bandwidth_multipliers", FlagType::number_list, "bandwidth multiplier grid"},
    {"lambdas", FlagType::number_list, "ridge regularization grid"},
    {"tau_percentile", FlagType::number, "percentile of training variances used as default tau"},
    {"oracle_passthrough", FlagType::boolean, "eval: score a second oracle run instead of the operator"},
    {"delta", FlagType::number, "EP damping in (0, 1]"},
    {"max_iters", FlagType::integer, "EP sweep limit"},
    {"tol", FlagType::number, "EP convergence tolerance on natural parameters"},
    {"tau", FlagType::number, "predictive-variance threshold for oracle queries"},
    {"budget", FlagType::integer, "oracle query budget"},
    {"dataset", FlagType::text, "training dataset CSV"},
    {"model", FlagType::text, "operator model JSON"},
    {"graph", FlagType::text, "factor graph JSON"},
    {"model_out", FlagType::text, "active-run: updated model path"},
};

std::string flag_name(const char* key) {
  std::string s = std::string("--") + key;
  for (auto& c : s) {
    if (c == '_') {
      c = '-';
    }
  }
  return s;
}

double to_number(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw epop::UsageError(flag_name(key.c_str()) + ": not a number: '" + text + "'");
  }
  return v;
}

struct FlagValues {
  std::map<std::string, std::string> scalars;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, bool> booleans;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
};

void register_flags(CLI::App& sub, FlagValues& v) {
  sub.add_option("--config", v.config, "JSON config file; flags override its values");
  sub.add_option("--seed", v.seed, "master seed");
  sub.add_option("--out", v.out, "output path");
  for (const auto& f : kFlags) {
    const std::string name = flag_name(f.key);
    switch (f.type) {
      case FlagType::boolean:
        sub.add_flag(name, v.booleans[f.key], f.help);
        break;
      case FlagType::number_list:
        sub.add_option(name, v.lists[f.key], f.help)->expected(1, -1);
        break;
      case FlagType::interval:
        sub.add_option(name, v.lists[f.key], f.help)->expected(2);
        break;
      default:
        sub.add_option(name, v.scalars[f.key], f.help);
    }
  }
}

epop::RunConfig build_config(const CLI::App& sub, const FlagValues& v) {
  epop::RunConfig cfg;
  if (!v.config.empty()) {
    epop::load_config_file(cfg, v.config);
  }
  nlohmann::json overrides = nlohmann::json::object();
  if (sub.count("--seed") > 0) {
    overrides["seed"] = v.seed;
  }
  if (sub.count("--out") > 0) {
    overrides["out"] = v.out;
  }
  for (const auto& f : kFlags) {
    const std::string name = flag_name(f.key);
    if (sub.count(name) == 0) {
      continue;
    }
    switch (f.type) {
      case FlagType::integer: {
        const double x = to_number(f.key, v.scalars.at(f.key));
        if (x < 0.0 || x != static_cast<double>(static_cast<long long>(x))) {
          throw epop::UsageError(name + ": expected a non-negative integer");
        }
        overrides[f.key] = static_cast<long long>(x);
        break;
      }
      case FlagType::number:
        overrides[f.key] = to_number(f.key, v.scalars.at(f.key));
        break;
      case FlagType::text:
        overrides[f.key] = v.scalars.at(f.key);
        break;
      case FlagType::boolean:
        overrides[f.key] = v.booleans.at(f.key);
        break;
      case FlagType::number_list:
      case FlagType::interval: {
        std::vector<double> xs;
        for (const auto& s : v.lists.at(f.key)) {
          xs.push_back(to_number(f.key, s));
        }
        overrides[f.key] = xs;
        break;
      }
    }
  }
  epop::apply_config_json(cfg, overrides);
  return cfg;
}

int run(const std::string& command, const epop::RunConfig& cfg) {
  if (command == "gen-data") {
    const auto s = epop::cmd_gen_data(cfg);
    std::cout << "wrote " << cfg.out << ": " << s.rows << " rows, " << s.resample_count << " resampled\n";
  } else if (command == "train") {
    const auto r = epop::cmd_train(cfg);
    const auto& best = r.cv.best();
    std::cout << "wrote " << cfg.out << ": D=" << r.op.features.dimension()
              << " bandwidth_multiplier=" << best.bandwidth_multiplier << " lambda=" << best.lambda
              << " tau_default=" << r.op.tau_default << "\n";
  } else if (command == "eval") {
    const auto r = epop::cmd_eval(cfg);
    std::cout << "wrote " << cfg.out << ": median_kl=" << r.median_kl << " noise_floor=" << r.noise_floor
              << " ratio=" << r.ratio << " excluded=" << r.n_excluded << "\n";
  } else if (command == "ep-run") {
    const auto r = epop::cmd_ep_run(cfg);
    std::cout << "wrote " << cfg.out << ": mean_kl=" << r.mean_kl << " oracle_iters=" << r.oracle.iterations
              << " operator_iters=" << r.op.iterations << "\n";
  } else {
    const auto r = epop::cmd_active_run(cfg);
    std::cout << "wrote " << cfg.out << ": oracle_queries=" << r.result.oracle_queries << " tau=" << r.tau
              << " iterations=" << r.result.iterations << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned expectation-propagation message operators"};
  app.require_subcommand(1);
  const char* commands[] = {"gen-data", "train", "eval", "ep-run", "active-run"};
  const char* descriptions[] = {"generate an oracle-labelled training set", "fit a message operator",
                                "score an operator against the oracle", "run EP with oracle and operator",
                                "run EP with oracle queries gated by predictive variance"};
  std::map<std::string, FlagValues> values;
  std::map<std::string, CLI::App*> subs;
  for (int i = 0; i < 5; ++i) {
    auto* sub = app.add_subcommand(commands[i], descriptions[i]);
    register_flags(*sub, values[commands[i]]);
    subs[commands[i]] = sub;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) {
      command = name;
    }
  }
  try {
    const auto cfg = build_config(*subs.at(command), values.at(command));
    return run(command, cfg);
  } catch (const epop::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
