#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "common.hpp"

using namespace bma;
using bma::test::dense_mvn_logpdf;

namespace {

/// Dense covariance of the clustered model, built entry by entry.
double dense_loglik(const LikelihoodContext& ctx, const ParameterVector& th) {
  const auto n = static_cast<Eigen::Index>(ctx.size());
  Eigen::VectorXd y(n), m(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  const auto& recs = ctx.data().records();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    y(i) = recs[ui].y;
    m(i) = ctx.mean(th, ui);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      const bool same = ctx.clustered() && recs[ui].cluster == recs[uj].cluster;
      if (i == j) cov(i, j) = recs[ui].se * recs[ui].se + th.tau * th.tau;
      else if (same) cov(i, j) = th.rho * th.tau * th.tau;
    }
  }
  return dense_mvn_logpdf(y, m, cov);
}

LikelihoodContext one_study(double y, double se) {
  StudyRecord r;
  r.y = y;
  r.se = se;
  return LikelihoodContext(Dataset({r}, EffectSizeMeasure::SMD, {}));
}

/// Integral over y of the selection density of a single study, split at the
/// weight-function thresholds.
double selection_mass(const WeightFunctionPrior& w, const ParameterVector& th, double se) {
  std::vector<double> edges{-12.0};
  for (double c : w.cutpoints) {
    if (w.sided == Sidedness::OneSided) {
      edges.push_back(norm_quantile(1.0 - c) * se);
    } else {
      const double t = norm_quantile(1.0 - c / 2.0) * se;
      edges.push_back(t);
      edges.push_back(-t);
    }
  }
  edges.push_back(12.0);
  std::sort(edges.begin(), edges.end());
  auto f = [&](double y) { return std::exp(loglik_selection(th, one_study(y, se), w)); };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, edges[i], edges[i + 1], 10, 1e-12);
  return total;
}

}  // namespace

TEST(LikelihoodProperty, ShermanMorrisonMatchesDenseMvn) {
  Rng rng(2024);
  for (int rep = 0; rep < 25; ++rep) {
    const int k = 3 + static_cast<int>(rng.uniform() * 12);
    const int size = 1 + static_cast<int>(rng.uniform() * 4);
    const LikelihoodContext ctx(bma::test::random_dataset(rng, k, 0.2, 0.2, size), std::nullopt, true);
    ParameterVector th;
    th.mu = rng.normal() * 0.3;
    th.tau = 0.05 + 0.5 * rng.uniform();
    th.rho = rng.uniform();
    th.pet = rep % 3 == 0 ? 0.7 : 0.0;
    EXPECT_NEAR(loglik_normal(th, ctx), dense_loglik(ctx, th), 1e-9);
  }
}

TEST(LikelihoodProperty, IndependentCaseMatchesDenseMvn) {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const LikelihoodContext ctx(bma::test::random_dataset(rng, 8));
    ParameterVector th;
    th.mu = rng.normal();
    th.tau = rng.uniform();
    th.peese = 0.5 * rng.uniform();
    EXPECT_NEAR(loglik_normal(th, ctx), dense_loglik(ctx, th), 1e-10);
  }
}

TEST(Likelihood, ClusteredReducesToIndependentWithoutSharedVariance) {
  Rng rng(9);
  const auto data = bma::test::random_dataset(rng, 9, 0.2, 0.2, 3);
  const LikelihoodContext clustered(data, std::nullopt, true), flat(data);
  ParameterVector th;
  th.mu = 0.1;
  th.tau = 0.3;
  th.rho = 0.0;
  EXPECT_DOUBLE_EQ(loglik_normal(th, clustered), loglik_normal(th, flat));
  th.rho = 0.5;
  th.tau = 0.0;
  EXPECT_DOUBLE_EQ(loglik_normal(th, clustered), loglik_normal(th, flat));
}

TEST(Likelihood, RegressionMean) {
  CsvSchema s;
  s.effect = "yi";
  s.se = "sei";
  s.covariates = {"gender"};
  const auto data = load_csv(bma::test::fixture("synthetic_regression.csv"), s, EffectSizeMeasure::LogOR);
  const LikelihoodContext ctx(data, build_design(data, {"gender"}));
  ParameterVector th;
  th.mu = 0.2;
  th.beta = {0.3};
  th.pet = 1.0;
  const double x = ctx.design()->X(0, 1);
  EXPECT_DOUBLE_EQ(ctx.mean(th, 0), 0.2 + 0.3 * x + ctx.se()[0]);
  EXPECT_NEAR(loglik_normal(th, ctx), dense_loglik(ctx, th), 1e-10);
}

TEST(Likelihood, PValues) {
  EXPECT_NEAR(pvalue(1.959963984540054 * 0.2, 0.2, Sidedness::OneSided), 0.025, 1e-12);
  EXPECT_NEAR(pvalue(-1.959963984540054 * 0.2, 0.2, Sidedness::TwoSided), 0.05, 1e-12);
}

TEST(Likelihood, GaussHermiteRule) {
  const auto& gh = detail::gauss_hermite21();
  double w = 0.0, m2 = 0.0, m4 = 0.0;
  for (int i = 0; i < 21; ++i) {
    w += gh.w[static_cast<std::size_t>(i)];
    m2 += gh.w[static_cast<std::size_t>(i)] * std::pow(gh.x[static_cast<std::size_t>(i)], 2);
    m4 += gh.w[static_cast<std::size_t>(i)] * std::pow(gh.x[static_cast<std::size_t>(i)], 4);
    EXPECT_NEAR(gh.x[static_cast<std::size_t>(i)], -gh.x[static_cast<std::size_t>(20 - i)], 1e-14);
  }
  EXPECT_NEAR(w, std::sqrt(M_PI), 1e-13);
  EXPECT_NEAR(m2, std::sqrt(M_PI) / 2.0, 1e-13);
  EXPECT_NEAR(m4, 3.0 * std::sqrt(M_PI) / 4.0, 1e-12);
}

TEST(SelectionProperty, UnitWeightsGiveTheNormalLikelihood) {
  Rng rng(31);
  const WeightFunctionPrior w{{0.025, 0.05}, Sidedness::OneSided, {1, 1, 1}};
  for (int rep = 0; rep < 10; ++rep) {
    const auto data = bma::test::random_dataset(rng, 10, 0.3, 0.2, 3);
    const LikelihoodContext flat(data), clustered(data, std::nullopt, true);
    ParameterVector th;
    th.mu = 0.2;
    th.tau = 0.1 + 0.3 * rng.uniform();
    th.rho = rng.uniform();
    th.omega = {1.0, 1.0, 1.0};
    EXPECT_NEAR(loglik_selection(th, flat, w), loglik_normal(th, flat), 1e-10);
    EXPECT_NEAR(loglik_selection(th, clustered, w), loglik_normal(th, clustered), 1e-8);
  }
}

TEST(SelectionProperty, DensityIsNormalized) {
  const std::vector<WeightFunctionPrior> ws{
      {{0.05}, Sidedness::TwoSided, {1, 1}},
      {{0.05, 0.10}, Sidedness::TwoSided, {1, 1, 1}},
      {{0.025, 0.05, 0.5}, Sidedness::OneSided, {1, 1, 1, 1}},
  };
  Rng rng(77);
  for (const auto& w : ws) {
    for (int rep = 0; rep < 4; ++rep) {
      ParameterVector th;
      th.mu = rng.normal() * 0.4;
      th.tau = rep % 2 ? 0.0 : 0.3 * rng.uniform();
      th.omega = w.sample(rng);
      const double se = 0.1 + 0.3 * rng.uniform();
      EXPECT_NEAR(selection_mass(w, th, se), 1.0, 1e-7);
    }
  }
}

TEST(SelectionProperty, ClusterDensityIsNormalized) {
  // joint density of a two-study cluster integrates to one
  const WeightFunctionPrior w{{0.05}, Sidedness::OneSided, {1, 1}};
  ParameterVector th;
  th.mu = 0.1;
  th.tau = 0.3;
  th.rho = 0.6;
  th.omega = {1.0, 0.3};
  const double se1 = 0.15, se2 = 0.25;
  auto density = [&](double y1, double y2) {
    StudyRecord a, b;
    a.y = y1, a.se = se1, a.cluster = "c";
    b.y = y2, b.se = se2, b.cluster = "c";
    const LikelihoodContext ctx(Dataset({a, b}, EffectSizeMeasure::SMD, {}), std::nullopt, true);
    return std::exp(loglik_selection(th, ctx, w));
  };
  using boost::math::quadrature::gauss_kronrod;
  const double t1 = norm_quantile(0.95) * se1, t2 = norm_quantile(0.95) * se2;
  auto inner = [&](double y1) {
    auto g = [&](double y2) { return density(y1, y2); };
    return gauss_kronrod<double, 31>::integrate(g, -4.0, t2, 8, 1e-11) +
           gauss_kronrod<double, 31>::integrate(g, t2, 4.0, 8, 1e-11);
  };
  const double total = gauss_kronrod<double, 31>::integrate(inner, -4.0, t1, 8, 1e-10) +
                       gauss_kronrod<double, 31>::integrate(inner, t1, 4.0, 8, 1e-10);
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Selection, RejectsMismatchedWeights) {
  const WeightFunctionPrior w{{0.05}, Sidedness::OneSided, {1, 1}};
  ParameterVector th;
  th.omega = {1.0, 0.5, 0.2};
  EXPECT_THROW(loglik_selection(th, one_study(0.1, 0.2), w), InputError);
}
