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

#include <cmath>
#include <variant>

#include <gtest/gtest.h>

#include <epop/expfam.hpp>
#include <epop/errors.hpp>
#include <epop/random.hpp>

#include "oracles.hpp"

namespace epop {
namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

TEST(NaturalParams, StandardNormal) {
  const auto eta = to_natural(Gaussian1D::from_mean_variance(0.0, 1.0));
  EXPECT_EQ(eta.eta[0], 0.0);
  EXPECT_EQ(eta.eta[1], -0.5);
}

TEST(NaturalParams, FromNaturalGivesMeanAndVariance) {
  const auto g = std::get<Gaussian1D>(from_natural(NaturalParams{Family::gaussian, {2.0, -1.0}}));
  EXPECT_NEAR(g.mean(), 1.0, 1e-15);
  EXPECT_NEAR(g.variance(), 0.5, 1e-15);
}

TEST(NaturalParams, UniformBeta) {
  const auto eta = to_natural(BetaDist{1.0, 1.0});
  EXPECT_EQ(eta.eta[0], 0.0);
  EXPECT_EQ(eta.eta[1], 0.0);
}

TEST(NaturalParams, ImproperGaussianIsFlaggedNotThrown) {
  const ExpFamDist d = from_natural(NaturalParams{Family::gaussian, {0.3, 0.5}});
  EXPECT_FALSE(is_proper(d));
  EXPECT_FALSE(is_proper(from_natural(NaturalParams{Family::gaussian, {0.0, 0.0}})));
}

TEST(NaturalParams, NonPositiveBetaThrows) {
  EXPECT_THROW(from_natural(NaturalParams{Family::beta, {-1.0, 0.5}}), DomainError);
  EXPECT_THROW(BetaDist(0.0, 1.0), DomainError);
  EXPECT_THROW(BetaDist(2.0, -3.0), DomainError);
}

TEST(NaturalParams, RoundTripRandom) {
  Rng rng = make_rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double m = uniform_in(rng, -50.0, 50.0);
    const double v = std::exp(uniform_in(rng, -8.0, 8.0));
    const auto g = Gaussian1D::from_mean_variance(m, v);
    const auto g2 = std::get<Gaussian1D>(from_natural(to_natural(g)));
    EXPECT_LE(rel_err(g2.mean(), m), 1e-12);
    EXPECT_LE(std::abs(g2.variance() - v) / v, 1e-12);
    const double a = uniform_in(rng, 0.05, 100.0);
    const double b = uniform_in(rng, 0.05, 100.0);
    const auto bb = std::get<BetaDist>(from_natural(to_natural(BetaDist{a, b})));
    EXPECT_LE(rel_err(bb.alpha(), a), 1e-12);
    EXPECT_LE(rel_err(bb.beta(), b), 1e-12);
  }
}

TEST(LogPartition, GaussianNormalizes) {
  // h(x) = (2 pi)^(-1/2), u(x) = (x, x^2)
  for (const auto& g : {Gaussian1D::from_mean_variance(0.0, 1.0), Gaussian1D::from_mean_variance(1.5, 0.3)}) {
    const auto eta = to_natural(g);
    const double A = log_partition(eta);
    const auto r = test::gauss_legendre(2000, g.mean() - 20.0, g.mean() + 20.0);
    double total = 0.0;
    for (std::size_t i = 0; i < r.x.size(); ++i) {
      const double x = r.x[i];
      total += r.w[i] * std::exp(eta.eta[0] * x + eta.eta[1] * x * x - A) / std::sqrt(2.0 * std::numbers::pi);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LogPartition, GradientAtStandardNormal) {
  const auto grad = log_partition_gradient(NaturalParams{Family::gaussian, {0.0, -0.5}});
  EXPECT_NEAR(grad[0], 0.0, 1e-15);
  EXPECT_NEAR(grad[1], 1.0, 1e-15);
}

TEST(LogPartition, BetaTwoTwo) {
  EXPECT_NEAR(log_partition(to_natural(BetaDist{2.0, 2.0})), std::log(1.0 / 6.0), 1e-14);
}

TEST(LogPartition, ImproperThrows) {
  EXPECT_THROW(log_partition(NaturalParams{Family::gaussian, {0.0, 0.1}}), DomainError);
  EXPECT_THROW(log_partition(NaturalParams{Family::beta, {-1.5, 0.0}}), DomainError);
}

TEST(LogPartition, GradientMatchesFiniteDifference) {
  Rng rng = make_rng(12);
  for (int i = 0; i < 100; ++i) {
    NaturalParams p = i % 2 == 0
                          ? to_natural(Gaussian1D::from_mean_variance(uniform_in(rng, -3, 3), uniform_in(rng, 0.2, 4)))
                          : to_natural(BetaDist{uniform_in(rng, 0.5, 10), uniform_in(rng, 0.5, 10)});
    const auto grad = log_partition_gradient(p);
    for (int k = 0; k < 2; ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(p.eta[k]));
      NaturalParams up = p;
      NaturalParams dn = p;
      up.eta[k] += h;
      dn.eta[k] -= h;
      const double fd = (log_partition(up) - log_partition(dn)) / (2.0 * h);
      EXPECT_LE(std::abs(fd - grad[k]), 1e-6 * std::max(1.0, std::abs(grad[k])));
    }
  }
}

TEST(Kl, Examples) {
  const auto n01 = Gaussian1D::from_mean_variance(0.0, 1.0);
  EXPECT_EQ(kl_divergence(n01, n01), 0.0);
  EXPECT_NEAR(kl_divergence(Gaussian1D::from_mean_variance(1.0, 1.0), n01), 0.5, 1e-15);
  EXPECT_NEAR(kl_divergence(BetaDist{3.0, 2.0}, BetaDist{3.0, 2.0}), 0.0, 1e-14);
}

TEST(Kl, NonNegativeAndZeroOnlyAtEquality) {
  Rng rng = make_rng(13);
  for (int i = 0; i < 500; ++i) {
    const auto p = Gaussian1D::from_mean_variance(uniform_in(rng, -3, 3), uniform_in(rng, 0.1, 5));
    const auto q = Gaussian1D::from_mean_variance(uniform_in(rng, -3, 3), uniform_in(rng, 0.1, 5));
    EXPECT_GT(kl_divergence(p, q), 0.0);
    const BetaDist a{uniform_in(rng, 0.5, 10), uniform_in(rng, 0.5, 10)};
    const BetaDist b{uniform_in(rng, 0.5, 10), uniform_in(rng, 0.5, 10)};
    EXPECT_GT(kl_divergence(a, b), 0.0);
    EXPECT_LE(kl_divergence(a, a), 1e-12);
  }
}

TEST(Kl, BetaMatchesQuadrature) {
  const BetaDist p{2.5, 4.0};
  const BetaDist q{6.0, 1.5};
  const double kl = test::beta_expectation(p.alpha(), p.beta(), [&](double z) {
    return test::beta_log_density(z, p.alpha(), p.beta()) - test::beta_log_density(z, q.alpha(), q.beta());
  }, 2000);
  EXPECT_NEAR(kl_divergence(p, q), kl, 1e-8);
}

TEST(Kl, MismatchAndImproperThrow) {
  const ExpFamDist g = Gaussian1D::from_mean_variance(0.0, 1.0);
  const ExpFamDist b = BetaDist{2.0, 2.0};
  EXPECT_THROW(kl_divergence(g, b), DomainError);
  EXPECT_THROW(kl_divergence(Gaussian1D::from_natural(0.0, 0.5), Gaussian1D::from_mean_variance(0.0, 1.0)),
               DomainError);
}

TEST(Project, Examples) {
  const auto g = project_to_gaussian({0.0, 1.0});
  EXPECT_NEAR(g.mean(), 0.0, 1e-15);
  EXPECT_NEAR(g.variance(), 1.0, 1e-15);
  const auto h = project_to_gaussian({0.5, 0.3});
  EXPECT_NEAR(h.mean(), 0.5, 1e-14);
  EXPECT_NEAR(h.variance(), 0.05, 1e-14);
  EXPECT_THROW(project_to_gaussian({1.0, 1.0}), DegenerateMomentError);
}

TEST(Project, MinimizesKlOverGrid) {
  Rng rng = make_rng(14);
  for (int t = 0; t < 100; ++t) {
    // Three-point distribution with chosen mean/variance.
    const double m = uniform_in(rng, -2, 2);
    const double s = uniform_in(rng, 0.3, 2);
    const double pts[3] = {m - s * std::sqrt(1.5), m, m + s * std::sqrt(1.5)};
    const double wts[3] = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double m1 = 0.0;
    double m2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      m1 += wts[k] * pts[k];
      m2 += wts[k] * pts[k] * pts[k];
    }
    const auto g = project_to_gaussian({m1, m2});
    // KL(r || N) = const - E_r log N; compare the cross-entropy term.
    auto cross = [&](double mu, double var) {
      double c = 0.0;
      for (int k = 0; k < 3; ++k) {
        c -= wts[k] * log_pdf(Gaussian1D::from_mean_variance(mu, var), pts[k]);
      }
      return c;
    };
    const double best = cross(g.mean(), g.variance());
    for (int i = -25; i <= 25; ++i) {
      for (int j = -25; j <= 25; ++j) {
        const double mu = g.mean() + 0.02 * i * std::sqrt(g.variance());
        const double var = g.variance() * std::exp(0.02 * j);
        EXPECT_GE(cross(mu, var), best - 1e-12);
      }
    }
  }
}

TEST(Divide, Examples) {
  const auto r = divide(Gaussian1D::from_mean_variance(0.0, 0.5), Gaussian1D::from_mean_variance(0.0, 1.0));
  EXPECT_NEAR(r.eta1(), 0.0, 1e-15);
  EXPECT_NEAR(r.eta2(), -0.5, 1e-15);
  const auto q = Gaussian1D::from_mean_variance(0.7, 2.0);
  EXPECT_EQ(divide(q, Gaussian1D::flat()), q);
  const auto bad = divide(Gaussian1D::from_mean_variance(0.0, 1.0), Gaussian1D::from_mean_variance(0.0, 0.5));
  EXPECT_FALSE(bad.is_proper());
  EXPECT_NEAR(bad.precision(), -1.0, 1e-15);
}

TEST(Divide, MultiplyInvertsDivide) {
  Rng rng = make_rng(15);
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    const auto q = Gaussian1D::from_mean_variance(uniform_in(rng, -3, 3), uniform_in(rng, 0.1, 2));
    const auto c = Gaussian1D::from_mean_variance(uniform_in(rng, -3, 3), uniform_in(rng, 0.1, 5));
    const auto d = divide(q, c);
    if (!d.is_proper()) {
      continue;
    }
    ++checked;
    const auto back = multiply(d, c);
    EXPECT_NEAR(back.eta1(), q.eta1(), 1e-12 * std::max(1.0, std::abs(q.eta1())));
    EXPECT_NEAR(back.eta2(), q.eta2(), 1e-12 * std::max(1.0, std::abs(q.eta2())));
    const BetaDist bq{uniform_in(rng, 3, 10), uniform_in(rng, 3, 10)};
    const BetaDist bc{uniform_in(rng, 1, 3), uniform_in(rng, 1, 3)};
    const auto bb = multiply(divide(bq, bc), bc);
    EXPECT_NEAR(bb.alpha(), bq.alpha(), 1e-12 * bq.alpha());
    EXPECT_NEAR(bb.beta(), bq.beta(), 1e-12 * bq.beta());
  }
  EXPECT_GT(checked, 50);
}

TEST(Divide, FamilyMismatchThrows) {
  EXPECT_THROW(divide(ExpFamDist{Gaussian1D::flat()}, ExpFamDist{BetaDist{}}), DomainError);
}

TEST(Sample, GaussianMean) {
  Rng rng = make_rng(16);
  const auto xs = sample(Gaussian1D::from_mean_variance(0.0, 1.0), 1000000, rng);
  double m = 0.0;
  for (double x : xs) {
    m += x;
  }
  EXPECT_LT(std::abs(m / xs.size()), 0.01);
}

TEST(Sample, UniformBetaMean) {
  Rng rng = make_rng(17);
  const auto xs = sample(BetaDist{1.0, 1.0}, 1000000, rng);
  double m = 0.0;
  for (double x : xs) {
    m += x;
    ASSERT_GT(x, 0.0);
    ASSERT_LT(x, 1.0);
  }
  EXPECT_NEAR(m / xs.size(), 0.5, 0.01);
}

TEST(Sample, Errors) {
  Rng rng = make_rng(18);
  EXPECT_THROW(sample(Gaussian1D::from_mean_variance(0.0, 1.0), 0, rng), DomainError);
  EXPECT_THROW(sample(Gaussian1D::from_natural(0.0, 0.5), 10, rng), DomainError);
}

TEST(Sample, DeterministicPerSeed) {
  Rng a = make_rng(19);
  Rng b = make_rng(19);
  EXPECT_EQ(sample(BetaDist{2.0, 3.0}, 100, a), sample(BetaDist{2.0, 3.0}, 100, b));
}

TEST(BetaFit, MeanVarianceMatchingAndInfeasible) {
  const auto b = fit_beta_mean_variance(0.5, 0.05);
  EXPECT_NEAR(b.alpha(), 2.0, 1e-12);
  EXPECT_NEAR(b.beta(), 2.0, 1e-12);
  EXPECT_THROW(fit_beta_mean_variance(0.5, 0.25), InfeasibleBetaError);
}

}  // namespace
}  // namespace epop
