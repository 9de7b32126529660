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

#ifndef EPOP_REGRESS_HPP
#define EPOP_REGRESS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <epop/errors.hpp>
#include <epop/parallel.hpp>
#include <epop/random.hpp>

/**
 * \file
 * \brief Ridge regression from feature vectors to moment vectors.
 *
 * Layout follows the matrix form: features are columns of Phi (D x N), targets are
 * columns of Y (D_y x N), and g(phi) = W phi with W = Y Phi^T (Phi Phi^T + lambda I)^-1.
 */

namespace epop {

/// Primal ridge model with the regularized Gram inverse kept for variance and updates.
struct RidgeModel {
  Eigen::MatrixXd W;      ///< D_y x D
  double lambda = 1.0;
  Eigen::MatrixXd A_inv;  ///< (Phi Phi^T + lambda I)^-1, exactly symmetric
  double noise_scale = 1.0;
  std::size_t n_train = 0;

  [[nodiscard]] Eigen::Index feature_dim() const noexcept { return W.cols(); }
  [[nodiscard]] Eigen::Index output_dim() const noexcept { return W.rows(); }
};

inline constexpr double kMinNoiseScale = 1e-12;

namespace detail {

/// Cholesky of a symmetric positive-definite matrix, adding jitter 1e-10 ... 1e-6 on failure.
inline Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& spd) {
  Eigen::LLT<Eigen::MatrixXd> llt(spd);
  if (llt.info() == Eigen::Success) {
    return llt;
  }
  for (double jitter : {1e-10, 1e-8, 1e-6}) {
    Eigen::MatrixXd jittered = spd;
    jittered.diagonal().array() += jitter;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) {
      return llt;
    }
  }
  throw NumericalError("ridge: matrix is not positive definite even with jitter");
}

inline void symmetrize(Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = v;
      m(j, i) = v;
    }
  }
}

}  // namespace detail

inline RidgeModel fit(const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& Y, double lambda) {
  if (Phi.cols() < 1 || Phi.cols() != Y.cols()) {
    throw DomainError("fit: need N >= 1 and matching columns in Phi and Y");
  }
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("fit: lambda must be positive");
  }
  if (!Phi.allFinite() || !Y.allFinite()) {
    throw NumericalError("fit: non-finite inputs");
  }
  const Eigen::Index D = Phi.rows();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(D, D);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(Phi);
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  gram.diagonal().array() += lambda;
  const auto llt = detail::robust_llt(gram);

  RidgeModel model;
  model.lambda = lambda;
  model.A_inv = llt.solve(Eigen::MatrixXd::Identity(D, D));
  detail::symmetrize(model.A_inv);
  model.W = llt.solve(Phi * Y.transpose()).transpose();
  if (!model.W.allFinite()) {
    throw NumericalError("fit: non-finite weights");
  }
  const double residual = (Y - model.W * Phi).squaredNorm() / static_cast<double>(Y.size());
  model.noise_scale = std::max(residual, kMinNoiseScale);
  model.n_train = static_cast<std::size_t>(Phi.cols());
  return model;
}

inline Eigen::VectorXd predict(const RidgeModel& model, const Eigen::VectorXd& phi) {
  if (phi.size() != model.feature_dim()) {
    throw DomainError("predict: feature length mismatch");
  }
  return model.W * phi;
}

/// noise_scale * phi^T A_inv phi.
inline double predictive_variance(const RidgeModel& model, const Eigen::VectorXd& phi) {
  if (phi.size() != model.feature_dim()) {
    throw DomainError("predictive_variance: feature length mismatch");
  }
  const double v = phi.dot(model.A_inv * phi);
  return model.noise_scale * std::max(v, 0.0);
}

/// Adds one example with the rank-1 inverse identity; equal to refitting on the augmented data.
/**
 * noise_scale is left unchanged so predictive variances can only go down.
 */
inline void update_online_in_place(RidgeModel& model, const Eigen::VectorXd& phi, const Eigen::VectorXd& y) {
  if (phi.size() != model.feature_dim() || y.size() != model.output_dim()) {
    throw DomainError("update_online: dimension mismatch");
  }
  const Eigen::VectorXd k = model.A_inv * phi;
  const double denom = 1.0 + phi.dot(k);
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    throw NumericalError("update_online: non-positive rank-1 denominator");
  }
  const Eigen::Index D = model.feature_dim();
  for (Eigen::Index j = 0; j < D; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double v = model.A_inv(i, j) - k(i) * k(j) / denom;
      model.A_inv(i, j) = v;
      model.A_inv(j, i) = v;
    }
  }
  const Eigen::VectorXd residual = y - model.W * phi;
  model.W.noalias() += residual * (k / denom).transpose();
  ++model.n_train;
}

inline RidgeModel update_online(RidgeModel model, const Eigen::VectorXd& phi, const Eigen::VectorXd& y) {
  update_online_in_place(model, phi, y);
  return model;
}

/// Dual ridge model over arbitrary inputs: g(x) = sum_i a_i kappa(x_i, x).
template <class Input, class Kernel>
struct DualModel {
  std::vector<Input> inputs;
  Kernel kernel;
  Eigen::MatrixXd A;  ///< D_y x N, A = Y (K + lambda I)^-1

  [[nodiscard]] Eigen::VectorXd predict(const Input& x) const {
    Eigen::VectorXd k(static_cast<Eigen::Index>(inputs.size()));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      k(static_cast<Eigen::Index>(i)) = kernel(inputs[i], x);
    }
    return A * k;
  }
};

template <class Input, class Kernel>
DualModel<Input, Kernel> fit_dual(std::vector<Input> inputs, Kernel kernel, const Eigen::MatrixXd& Y, double lambda) {
  const auto n = static_cast<Eigen::Index>(inputs.size());
  if (n < 1 || Y.cols() != n) {
    throw DomainError("fit_dual: need N >= 1 and matching target columns");
  }
  if (!(lambda > 0.0)) {
    throw DomainError("fit_dual: lambda must be positive");
  }
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      K(i, j) = kernel(inputs[static_cast<std::size_t>(i)], inputs[static_cast<std::size_t>(j)]);
      K(j, i) = K(i, j);
    }
  }
  K.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("fit_dual: K + lambda I is singular to working precision");
  }
  Eigen::MatrixXd A = llt.solve(Y.transpose()).transpose();
  return {std::move(inputs), std::move(kernel), std::move(A)};
}

struct CvGrid {
  std::vector<double> bandwidth_multipliers{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> lambdas{1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2};
};

struct CvEntry {
  double bandwidth_multiplier = 1.0;
  double lambda = 1.0;
};

struct CvReport {
  std::vector<CvEntry> grid;
  Eigen::MatrixXd fold_errors;  ///< grid.size() x folds, mean squared held-out error
  std::size_t chosen = 0;

  [[nodiscard]] double mean_error(std::size_t entry) const { return fold_errors.row(static_cast<Eigen::Index>(entry)).mean(); }
  [[nodiscard]] const CvEntry& best() const { return grid.at(chosen); }
};

/// K-fold cross-validation of ridge over (bandwidth multiplier, lambda).
/**
 * `features(multiplier)` returns Phi (D x N) for that multiplier. Each fold is solved in the
 * dual through sub-blocks of K = Phi^T Phi, which gives the primal predictions exactly
 * while reusing one Gram matrix for every fold and lambda. The chosen entry minimizes the
 * mean fold error; exact ties go to the larger lambda.
 */
template <class FeatureProvider>
CvReport cross_validate(FeatureProvider&& features, const Eigen::MatrixXd& Y, const CvGrid& grid, int folds, Rng& rng,
                        int threads = 0) {
  if (grid.bandwidth_multipliers.empty() || grid.lambdas.empty()) {
    throw DomainError("cross_validate: empty grid");
  }
  const Eigen::Index n = Y.cols();
  if (folds < 2 || n < folds) {
    throw DomainError("cross_validate: need 2 <= folds <= N");
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<int>> test_idx(static_cast<std::size_t>(folds));
  std::vector<std::vector<int>> train_idx(static_cast<std::size_t>(folds));
  for (int f = 0; f < folds; ++f) {
    const auto lo = static_cast<std::size_t>(f * n / folds);
    const auto hi = static_cast<std::size_t>((f + 1) * n / folds);
    for (std::size_t p = 0; p < perm.size(); ++p) {
      (p >= lo && p < hi ? test_idx : train_idx)[static_cast<std::size_t>(f)].push_back(perm[p]);
    }
  }

  CvReport report;
  for (double m : grid.bandwidth_multipliers) {
    for (double l : grid.lambdas) {
      report.grid.push_back({m, l});
    }
  }
  report.fold_errors.resize(static_cast<Eigen::Index>(report.grid.size()), folds);
  const auto n_lambda = grid.lambdas.size();

  for (std::size_t mi = 0; mi < grid.bandwidth_multipliers.size(); ++mi) {
    const Eigen::MatrixXd Phi = features(grid.bandwidth_multipliers[mi]);
    if (Phi.cols() != n) {
      throw DomainError("cross_validate: feature matrix has wrong number of columns");
    }
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
    K.selfadjointView<Eigen::Lower>().rankUpdate(Phi.transpose());
    K.triangularView<Eigen::StrictlyUpper>() = K.transpose();

    const auto tasks = static_cast<std::size_t>(folds) * n_lambda;
    parallel_for(tasks, threads, [&](std::size_t t) {
      const auto f = t / n_lambda;
      const auto li = t % n_lambda;
      const auto& tr = train_idx[f];
      const auto& te = test_idx[f];
      Eigen::MatrixXd K_tr = K(tr, tr);
      K_tr.diagonal().array() += grid.lambdas[li];
      const auto llt = detail::robust_llt(K_tr);
      const Eigen::MatrixXd alpha = llt.solve(Y(Eigen::all, tr).transpose());
      const Eigen::MatrixXd pred = K(te, tr) * alpha;
      const Eigen::MatrixXd diff = pred - Y(Eigen::all, te).transpose();
      report.fold_errors(static_cast<Eigen::Index>(mi * n_lambda + li), static_cast<Eigen::Index>(f)) =
          diff.squaredNorm() / static_cast<double>(diff.size());
    });
  }

  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < report.grid.size(); ++e) {
    const double err = report.mean_error(e);
    if (!std::isfinite(err)) {
      continue;
    }
    if (err < best_err || (err == best_err && report.grid[e].lambda > report.grid[best].lambda)) {
      best_err = err;
      best = e;
    }
  }
  if (!std::isfinite(best_err)) {
    throw NumericalError("cross_validate: no grid entry produced finite errors");
  }
  report.chosen = best;
  return report;
}

}  // namespace epop

#endif  // EPOP_REGRESS_HPP
