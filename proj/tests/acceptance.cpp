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

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include <epop/ep_engine.hpp>
#include <epop/io.hpp>
#include <epop/kernels.hpp>
#include <epop/message_operator.hpp>
#include <epop/regress.hpp>
#include <epop/sources.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace epop;

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path work_dir;

std::string path(const std::string& name) { return (work_dir / name).string(); }

std::string read(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& p) { return json::parse(read(p)); }

void cli(const std::string& args) {
  const std::string cmd = std::string(EPOP_CLI_PATH) + " " + args + " >/dev/null";
  const int status = std::system(cmd.c_str());
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw std::runtime_error("command failed: epop " + args);
  }
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

const std::string kDefaults = std::string("--config ") + EPOP_CONFIG_DIR + "/default.json";
const std::string kGraph = std::string(EPOP_CONFIG_DIR) + "/demo_graph.json";
double c1_threshold = 0.0;
bool c1_model_ready = false;

Outcome criterion1() {
  const auto start = std::chrono::steady_clock::now();
  cli("gen-data " + kDefaults + " --out " + path("train.csv"));
  cli("train " + kDefaults + " --dataset " + path("train.csv") + " --out " + path("model.json"));
  cli("eval " + kDefaults + " --model " + path("model.json") + " --out " + path("eval.json"));
  const double runtime = seconds_since(start);
  c1_model_ready = true;
  const auto rep = read_json(path("eval.json"));
  const double median = rep["median_kl"].get<double>();
  const double floor = rep["noise_floor_median_kl"].get<double>();
  c1_threshold = 20.0 * floor;
  const bool ok = median <= c1_threshold && runtime <= 600.0;
  return {ok, fmt("median KL %.3g vs 20x noise floor %.3g (ratio %.1f); pipeline %.0f s", median, c1_threshold,
                  median / floor, runtime)};
}

Outcome criterion2() {
  const auto start = std::chrono::steady_clock::now();
  constexpr int d = 2000;
  Rng rng = make_rng(2, 1);
  std::vector<IncomingTuple> tuples;
  for (int i = 0; i < 200; ++i) {
    tuples.push_back(sample_incoming(IncomingPrior{}, rng));
  }
  const Eigen::Vector2d bw = median_heuristic_bandwidths(tuples);
  const auto joint = draw_rff(2, d, Eigen::VectorXd(bw), rng);
  const auto sx = draw_rff(1, d, bw(0), rng);
  const auto sz = draw_rff(1, d, bw(1), rng);
  double err_point = 0.0, err_product = 0.0, err_joint = 0.0;
  for (int p = 0; p < 100; ++p) {
    const auto& a = tuples[2 * p];
    const auto& b = tuples[2 * p + 1];
    Eigen::VectorXd pa(2), pb(2);
    pa << a.m_x.mean(), a.m_z.mean();
    pb << b.m_x.mean(), b.m_z.mean();
    err_point = std::max(err_point, std::abs(rff_point(joint, pa).dot(rff_point(joint, pb)) -
                                             gaussian_kernel(pa, pb, Eigen::VectorXd(bw))));
    const double exact = exact_kernel(FeatureKind::joint, a, b, bw);
    const double product = expected_feature_gaussian(sx, a.m_x).dot(expected_feature_gaussian(sx, b.m_x)) *
                           expected_feature_beta(sz, a.m_z).dot(expected_feature_beta(sz, b.m_z));
    err_product = std::max(err_product, std::abs(product - exact_kernel(FeatureKind::product, a, b, bw)));
    err_joint = std::max(err_joint, std::abs(joint_features(joint, a).dot(joint_features(joint, b)) - exact));
  }
  const double runtime = seconds_since(start);
  const bool ok = err_point <= 0.05 && err_product <= 0.05 && err_joint <= 0.05 && runtime <= 60.0;
  return {ok, fmt("max error point %.3g, product %.3g, joint %.3g (limit 0.05); %.1f s", err_point, err_product,
                  err_joint, runtime)};
}

template <class Draw, class Exact>
int mc_violations(int cases, Rng& rng, Draw&& draw, Exact&& exact_and_spec) {
  int bad = 0;
  for (int c = 0; c < cases; ++c) {
    const auto [spec, dist] = exact_and_spec(rng);
    const Eigen::VectorXd phi = draw.expected(spec, dist);
    const auto xs = sample(dist, 100000, rng);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(phi.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(phi.size());
    for (double x : xs) {
      const Eigen::VectorXd f = rff_point(spec, Eigen::VectorXd::Constant(1, x));
      m += f;
      m2 += f.cwiseProduct(f);
    }
    m /= static_cast<double>(xs.size());
    m2 /= static_cast<double>(xs.size());
    for (Eigen::Index j = 0; j < phi.size(); ++j) {
      const double se = std::sqrt((m2(j) - m(j) * m(j)) / static_cast<double>(xs.size()));
      if (std::abs(phi(j) - m(j)) > 3.0 * se) {
        ++bad;
      }
    }
  }
  return bad;
}

Outcome criterion3() {
  struct GaussianExpected {
    Eigen::VectorXd expected(const RffSpec& s, const ExpFamDist& d) const {
      return expected_feature_gaussian(s, std::get<Gaussian1D>(d));
    }
  };
  struct BetaExpected {
    Eigen::VectorXd expected(const RffSpec& s, const ExpFamDist& d) const {
      return expected_feature_beta(s, std::get<BetaDist>(d));
    }
  };
  Rng rng = make_rng(3, 1);
  const int bad_g = mc_violations(10, rng, GaussianExpected{}, [](Rng& r) {
    auto spec = draw_rff(1, 10, uniform_in(r, 0.3, 3.0), r);
    ExpFamDist d = Gaussian1D::from_mean_variance(uniform_in(r, -5, 5), std::exp(uniform_in(r, std::log(0.1), std::log(10.0))));
    return std::pair{spec, d};
  });
  const int bad_b = mc_violations(10, rng, BetaExpected{}, [](Rng& r) {
    auto spec = draw_rff(1, 10, uniform_in(r, 0.05, 1.0), r);
    ExpFamDist d = BetaDist{uniform_in(r, 1, 10), uniform_in(r, 1, 10)};
    return std::pair{spec, d};
  });
  const auto s = draw_rff(1, 2000, 0.2, rng);
  const auto phi = expected_feature_beta(s, BetaDist{1.0, 1.0});
  double err_uniform = 0.0;
  for (int j = 0; j < s.num_features(); ++j) {
    const double w = s.frequencies(j, 0);
    const double b = s.phases(j);
    err_uniform = std::max(err_uniform, std::abs(phi(j) - s.scale() * (std::sin(w + b) - std::sin(b)) / w));
  }
  const bool ok = bad_g == 0 && bad_b == 0 && err_uniform <= 1e-8;
  return {ok, fmt("entries outside 3 SE: Gaussian %.0f/100, Beta %.0f/100; Beta(1,1) identity error %.2g", bad_g,
                  bad_b, err_uniform)};
}

Outcome criterion4() {
  Rng rng = make_rng(4, 1);
  std::vector<IncomingTuple> tuples;
  for (int i = 0; i < 240; ++i) {
    tuples.push_back(sample_incoming(IncomingPrior{}, rng));
  }
  const auto map = make_feature_map(FeatureKind::joint, 150, median_heuristic_bandwidths(tuples), 4);
  const Eigen::MatrixXd Phi = featurize_all(map, tuples);
  Eigen::MatrixXd Y(2, 240);
  for (int i = 0; i < 240; ++i) {
    Y.col(i) << uniform_in(rng, -5, 5), uniform_in(rng, -2, 2);
  }
  const double lambda = 1e-2;
  auto model = fit(Phi.leftCols(200), Y.leftCols(200), lambda);
  bool decreasing = true;
  for (int i = 200; i < 220; ++i) {
    const double before = predictive_variance(model, Phi.col(i));
    update_online_in_place(model, Phi.col(i), Y.col(i));
    decreasing = decreasing && predictive_variance(model, Phi.col(i)) < before;
  }
  const auto batch = fit(Phi.leftCols(220), Y.leftCols(220), lambda);
  const double rel_w = (model.W - batch.W).norm() / batch.W.norm();

  std::vector<Eigen::VectorXd> inputs;
  for (int i = 0; i < 200; ++i) {
    inputs.emplace_back(Phi.col(i));
  }
  const auto primal = fit(Phi.leftCols(200), Y.leftCols(200), lambda);
  const auto dual = fit_dual(inputs, [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b); },
                             Y.leftCols(200), lambda);
  double rel_pred = 0.0;
  for (int i = 220; i < 240; ++i) {
    const Eigen::VectorXd p = predict(primal, Phi.col(i));
    rel_pred = std::max(rel_pred, (dual.predict(Phi.col(i)) - p).norm() / p.norm());
  }
  const bool ok = rel_w <= 1e-8 && decreasing && rel_pred <= 1e-8;
  return {ok, fmt("online vs batch rel. Frobenius %.2g; primal vs dual rel. %.2g; variance strictly decreasing: ",
                  rel_w, rel_pred) +
                  (decreasing ? "yes" : "no")};
}

Outcome criterion5() {
  FactorGraph g;
  g.variables = {{"a", Family::gaussian}, {"b", Family::gaussian}, {"c", Family::gaussian}, {"d", Family::gaussian}};
  Factor pa{"pa", FactorKind::gaussian_prior, {0}, Gaussian1D::from_mean_variance(-1.0, 2.0)};
  Factor ab{"ab", FactorKind::linear_gaussian, {0, 1}};
  ab.coefficient = 0.8;
  ab.offset = 0.3;
  ab.noise_variance = 0.4;
  Factor bc{"bc", FactorKind::linear_gaussian, {1, 2}};
  bc.coefficient = -1.5;
  bc.offset = 1.0;
  bc.noise_variance = 0.25;
  Factor cd{"cd", FactorKind::linear_gaussian, {2, 3}};
  cd.coefficient = 1.0;
  cd.offset = 0.0;
  cd.noise_variance = 1.0;
  Factor pd{"pd", FactorKind::gaussian_prior, {3}, Gaussian1D::from_mean_variance(0.7, 0.3)};
  g.factors = {pa, ab, bc, cd, pd};

  Eigen::Matrix4d P = Eigen::Matrix4d::Zero();
  Eigen::Vector4d h = Eigen::Vector4d::Zero();
  P(0, 0) += 1.0 / 2.0;
  h(0) += -1.0 / 2.0;
  P(3, 3) += 1.0 / 0.3;
  h(3) += 0.7 / 0.3;
  for (const auto* f : {&ab, &bc, &cd}) {
    const int i = f->variables[0];
    const int j = f->variables[1];
    const double c = f->coefficient, o = f->offset, s2 = f->noise_variance;
    P(j, j) += 1.0 / s2;
    P(i, i) += c * c / s2;
    P(i, j) -= c / s2;
    P(j, i) -= c / s2;
    h(j) += o / s2;
    h(i) -= c * o / s2;
  }
  const Eigen::Matrix4d S = P.inverse();
  const Eigen::Vector4d mu = S * h;

  class NoLogistic : public LogisticMessageSource {
   public:
    Gaussian1D message_to_x(const IncomingTuple&, const EdgeContext&) override { return Gaussian1D::flat(); }
  } src;
  const auto r = run_ep(g, src, {0.5, 5000, 1e-14});
  double err = 0.0;
  for (int v = 0; v < 4; ++v) {
    const auto m = std::get<Gaussian1D>(r.marginals[v]);
    const auto e = Gaussian1D::from_mean_variance(mu(v), S(v, v));
    err = std::max({err, std::abs(m.eta1() - e.eta1()), std::abs(m.eta2() - e.eta2())});
  }
  return {r.converged && err <= 1e-10, fmt("max natural-parameter error %.2g after %.0f sweeps", err,
                                          static_cast<double>(r.iterations))};
}

std::vector<double> c8_speedups;

Outcome criterion6() {
  if (!c1_model_ready) {
    throw std::runtime_error("criterion 1 did not produce a model");
  }
  double sum = 0.0;
  c8_speedups.clear();
  for (int seed = 1; seed <= 10; ++seed) {
    const std::string out = path("ep_seed" + std::to_string(seed) + ".json");
    cli("ep-run " + kDefaults + " --seed " + std::to_string(seed) + " --model " + path("model.json") + " --graph " +
        kGraph + " --out " + out);
    sum += read_json(out)["comparison"]["mean_kl"].get<double>();
    const auto t = read_json(path("ep_seed" + std::to_string(seed) + ".timings.json"));
    c8_speedups.push_back(t["speedup"].get<double>());
  }
  const double mean = sum / 10.0;
  const double limit = 5.0 * c1_threshold;
  return {mean <= limit, fmt("mean marginal KL over 10 seeds %.3g vs limit %.3g", mean, limit)};
}

Outcome criterion7() {
  const std::vector<IncomingTuple> cases = {
      {Gaussian1D::from_mean_variance(0.0, 1.0), BetaDist{2.0, 2.0}},
      {Gaussian1D::from_mean_variance(1.5, 0.5), BetaDist{5.0, 2.0}},
      {Gaussian1D::from_mean_variance(-2.0, 3.0), BetaDist{2.0, 6.0}},
      {Gaussian1D::from_mean_variance(0.5, 8.0), BetaDist{3.0, 3.0}},
      {Gaussian1D::from_mean_variance(-1.0, 0.2), BetaDist{1.5, 1.2}},
  };
  auto error = [&](std::size_t n, std::uint64_t stream) {
    double total = 0.0;
    for (std::size_t c = 0; c < cases.size(); ++c) {
      const auto exact = test::tilted_moments_quadrature(cases[c]);
      for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng = make_rng(seed, stream, c);
        const auto r = oracle_to_x(cases[c], n, rng);
        total += std::abs(r.moments.mean - exact[0]) + std::abs(r.moments.second_moment - exact[1]);
      }
    }
    return total / (50.0 * static_cast<double>(cases.size()));
  };
  const double e1 = error(1000, 401);
  const double e4 = error(4000, 402);
  const double ratio = e1 / e4;
  return {ratio >= 1.6 && ratio <= 2.6, fmt("mean moment error %.3g (n=1000) / %.3g (n=4000) = ratio %.2f", e1, e4, ratio)};
}

Outcome criterion8() {
  if (c8_speedups.empty()) {
    throw std::runtime_error("criterion 6 did not produce timings");
  }
  std::vector<double> v = c8_speedups;
  std::sort(v.begin(), v.end());
  const double med = 0.5 * (v[(v.size() - 1) / 2] + v[v.size() / 2]);
  return {med >= 10.0, fmt("median per-message speedup over 10 ep-runs %.1fx (range %.1fx to %.1fx, limit 10x)", med,
                           v.front(), v.back())};
}

Outcome criterion9() {
  const std::string small =
      "--seed 11 --n-train 80 --n-test 20 --n-importance 1000 --num-features 60 --cv-folds 3 "
      "--bandwidth-multipliers 0.5 1 2 --lambdas 0.0001 0.01 1";
  const std::vector<std::string> runs = {"a", "b", "c"};
  const std::vector<std::string> threads = {"1", "1", "3"};
  std::vector<std::string> files = {"data.csv", "model.json", "eval.json", "eval.cases.csv", "ep.json", "active.json",
                                    "active.model.json"};
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const std::string base = small + " --threads " + threads[r];
    auto p = [&](const std::string& f) { return path("det_" + runs[r] + "_" + f); };
    cli("gen-data " + base + " --out " + p("data.csv"));
    cli("train " + base + " --dataset " + p("data.csv") + " --out " + p("model.json"));
    cli("eval " + base + " --model " + p("model.json") + " --out " + p("eval.json"));
    cli("ep-run " + base + " --model " + p("model.json") + " --graph " + kGraph + " --out " + p("ep.json"));
    cli("active-run " + base + " --tau 1e-6 --budget 10 --model " + p("model.json") + " --graph " + kGraph +
        " --out " + p("active.json"));
  }
  int mismatches = 0;
  for (const auto& f : files) {
    const std::string ref = read(path("det_a_" + f));
    if (ref.empty()) {
      ++mismatches;
    }
    for (const char* r : {"b", "c"}) {
      if (read(path(std::string("det_") + r + "_" + f)) != ref) {
        ++mismatches;
      }
    }
  }
  return {mismatches == 0, fmt("%.0f mismatching files of 14 comparisons (rerun and 1 vs 3 threads)", mismatches)};
}

}  // namespace

int main() {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  work_dir = fs::current_path() / "acceptance_work";
  fs::create_directories(work_dir);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"held-out KL within 20x oracle noise floor", criterion1},
      {"random-feature kernel fidelity", criterion2},
      {"expected features vs Monte Carlo", criterion3},
      {"ridge online/batch and primal/dual equivalence", criterion4},
      {"EP exact on linear-Gaussian chain", criterion5},
      {"graph-level operator vs oracle EP", criterion6},
      {"importance-sampling error rate", criterion7},
      {"operator latency vs oracle", criterion8},
      {"byte-identical CLI outputs", criterion9},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] criterion %zu: %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
