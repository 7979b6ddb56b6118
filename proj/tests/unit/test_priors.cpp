#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/cauchy.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/inverse_gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/uniform.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "common.hpp"

using namespace bma;

namespace {

struct Case {
  std::string name;
  PriorDistribution prior;
  std::function<double(double)> pdf;
  std::function<double(double)> cdf;
};

std::vector<Case> cases() {
  namespace bm = boost::math;
  const bm::normal n(0.3, 0.7);
  const bm::inverse_gamma_distribution<> ig(1.0, 0.15);
  const bm::gamma_distribution<> g(2.0, 1.0 / 3.0);
  const bm::uniform u(-1.0, 2.0);
  const bm::cauchy c(0.0, 0.5);
  const bm::cauchy c1(0.0, 1.0);
  const bm::normal sn(0.0, 1.0);
  const double zlo = bm::cdf(sn, -0.5), zhi = bm::cdf(sn, 1.5);
  return {
      {"normal", PriorDistribution::normal(0.3, 0.7), [=](double x) { return bm::pdf(n, x); },
       [=](double x) { return bm::cdf(n, x); }},
      {"invgamma", PriorDistribution::inverse_gamma(1.0, 0.15), [=](double x) { return x > 0 ? bm::pdf(ig, x) : 0.0; },
       [=](double x) { return x > 0 ? bm::cdf(ig, x) : 0.0; }},
      {"gamma", PriorDistribution::gamma(2.0, 3.0), [=](double x) { return x > 0 ? bm::pdf(g, x) : 0.0; },
       [=](double x) { return x > 0 ? bm::cdf(g, x) : 0.0; }},
      {"uniform", PriorDistribution::uniform(-1.0, 2.0), [=](double x) { return x >= -1 && x <= 2 ? bm::pdf(u, x) : 0.0; },
       [=](double x) { return std::clamp((x + 1.0) / 3.0, 0.0, 1.0); }},
      {"cauchy", PriorDistribution::cauchy(0.0, 0.5), [=](double x) { return bm::pdf(c, x); },
       [=](double x) { return bm::cdf(c, x); }},
      {"half-cauchy", PriorDistribution::cauchy(0.0, 1.0).truncated(0.0, kInf),
       [=](double x) { return x >= 0 ? 2.0 * bm::pdf(c1, x) : 0.0; },
       [=](double x) { return x >= 0 ? 2.0 * bm::cdf(c1, x) - 1.0 : 0.0; }},
      {"truncated-normal", PriorDistribution::normal(0.0, 1.0).truncated(-0.5, 1.5),
       [=](double x) { return x >= -0.5 && x <= 1.5 ? bm::pdf(sn, x) / (zhi - zlo) : 0.0; },
       [=](double x) { return std::clamp((bm::cdf(sn, x) - zlo) / (zhi - zlo), 0.0, 1.0); }},
  };
}

double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

}  // namespace

TEST(PriorsProperty, DensityAndCdfMatchReferenceDistributions) {
  for (const auto& c : cases()) {
    SCOPED_TRACE(c.name);
    const auto [lo, hi] = c.prior.support();
    for (double q : {0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
      const double x = c.prior.quantile(q);
      EXPECT_GE(x, lo);
      EXPECT_LE(x, hi);
      EXPECT_NEAR(c.prior.pdf(x), c.pdf(x), 1e-10 * std::max(1.0, c.pdf(x)));
      EXPECT_NEAR(c.prior.cdf(x), c.cdf(x), 1e-10);
      EXPECT_NEAR(c.cdf(x), q, 1e-9);
    }
  }
}

TEST(PriorsProperty, DensityIntegratesToOne) {
  using boost::math::quadrature::gauss_kronrod;
  for (const auto& c : cases()) {
    SCOPED_TRACE(c.name);
    const auto [lo, hi] = c.prior.support();
    auto f = [&](double x) { return c.prior.pdf(x); };
    double total;
    if (c.name == "cauchy") {
      // split at the mode; the transformed tails converge slowly otherwise
      total = gauss_kronrod<double, 61>::integrate(f, -kInf, 0.0, 20, 1e-12) +
              gauss_kronrod<double, 61>::integrate(f, 0.0, kInf, 20, 1e-12);
    } else {
      total = gauss_kronrod<double, 61>::integrate(f, lo, hi, 20, 1e-12);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(PriorsProperty, QuantileInvertsCdf) {
  for (const auto& c : cases()) {
    SCOPED_TRACE(c.name);
    for (int i = 1; i < 100; ++i) {
      const double q = i / 100.0;
      EXPECT_NEAR(c.prior.cdf(c.prior.quantile(q)), q, 1e-9);
    }
  }
}

TEST(PriorsProperty, SamplesPassKolmogorovSmirnov) {
  // critical value of D at alpha = 0.001 is 1.95 / sqrt(n)
  constexpr std::size_t n = 20000;
  std::uint64_t seed = 11;
  for (const auto& c : cases()) {
    SCOPED_TRACE(c.name);
    Rng rng(seed++);
    std::vector<double> xs(n);
    for (double& x : xs) x = c.prior.sample(rng);
    EXPECT_LT(ks_statistic(xs, c.cdf), 1.95 / std::sqrt(static_cast<double>(n)));
  }
}

TEST(PriorsProperty, RescalingIsAChangeOfVariables) {
  const double k = 2.5;
  for (const auto& c : cases()) {
    SCOPED_TRACE(c.name);
    const auto r = c.prior.rescaled(k);
    for (double q : {0.05, 0.5, 0.95}) {
      const double x = c.prior.quantile(q);
      EXPECT_NEAR(r.quantile(q), k * x, 1e-9 * std::max(1.0, std::abs(k * x)));
      EXPECT_NEAR(r.pdf(k * x), c.prior.pdf(x) / k, 1e-10);
    }
  }
}

TEST(Priors, PointMass) {
  const auto p = PriorDistribution::point(0.0);
  EXPECT_TRUE(p.is_point());
  Rng rng(1);
  EXPECT_EQ(p.sample(rng), 0.0);
  EXPECT_EQ(p.quantile(0.3), 0.0);
  EXPECT_EQ(p.rescaled(3.0).point_value(), 0.0);
}

TEST(Priors, JsonRoundTrip) {
  for (const auto& c : cases()) {
    const auto j = c.prior.to_json_value();
    EXPECT_EQ(prior_from_json(j), c.prior) << j.dump();
  }
  EXPECT_EQ(PriorDistribution::normal(0, 1).describe(), "Normal(mean = 0, sd = 1)");
}

TEST(Priors, RejectsInvalidParameters) {
  EXPECT_THROW(PriorDistribution::normal(0.0, 0.0), InputError);
  EXPECT_THROW(PriorDistribution::inverse_gamma(-1.0, 1.0), InputError);
  EXPECT_THROW(PriorDistribution::uniform(1.0, 1.0), InputError);
  EXPECT_THROW(PriorDistribution::normal(0.0, 1.0).truncated(2.0, 1.0), InputError);
  EXPECT_THROW(PriorDistribution::normal(0.0, 1.0).quantile(1.0), DomainError);
}

TEST(WeightFunctionPrior, SamplesAreMonotoneWithUnitFirstWeight) {
  WeightFunctionPrior w{{0.025, 0.05, 0.5}, Sidedness::OneSided, {1, 1, 1, 1}};
  w.validate();
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto om = w.sample(rng);
    ASSERT_EQ(om.size(), 4u);
    EXPECT_EQ(om[0], 1.0);
    for (std::size_t j = 1; j < om.size(); ++j) {
      EXPECT_LE(om[j], om[j - 1]);
      EXPECT_GT(om[j], 0.0);
    }
    EXPECT_TRUE(std::isfinite(w.logpdf(om)));
  }
}

TEST(WeightFunctionPrior, TwoBinDensityIsBeta) {
  // omega_2 = eta_2 ~ Beta(alpha_2, alpha_1)
  WeightFunctionPrior w{{0.05}, Sidedness::TwoSided, {2.0, 3.0}};
  const boost::math::beta_distribution<> b(3.0, 2.0);
  for (double x : {0.1, 0.4, 0.8}) {
    const double om[] = {1.0, x};
    EXPECT_NEAR(std::exp(w.logpdf(om)), boost::math::pdf(b, x), 1e-12);
  }
}

TEST(WeightFunctionPrior, Validation) {
  EXPECT_THROW((WeightFunctionPrior{{}, Sidedness::OneSided, {1}}.validate()), InputError);
  EXPECT_THROW((WeightFunctionPrior{{0.5, 0.05}, Sidedness::OneSided, {1, 1, 1}}.validate()), InputError);
  EXPECT_THROW((WeightFunctionPrior{{0.05}, Sidedness::OneSided, {1}}.validate()), InputError);
  EXPECT_THROW((WeightFunctionPrior{{1.5}, Sidedness::OneSided, {1, 1}}.validate()), InputError);
}

TEST(PriorProfile, DefaultScalesPerMeasure) {
  const auto smd = default_profile(EffectSizeMeasure::SMD);
  EXPECT_EQ(smd.effect().alt, PriorDistribution::normal(0.0, 1.0));
  EXPECT_EQ(smd.heterogeneity().alt, PriorDistribution::inverse_gamma(1.0, 0.15));
  const auto z = default_profile(EffectSizeMeasure::FishersZ);
  EXPECT_EQ(z.effect().alt, PriorDistribution::normal(0.0, 0.5));
  EXPECT_EQ(z.heterogeneity().alt, PriorDistribution::inverse_gamma(1.0, 0.075));
  const auto lor = default_profile(EffectSizeMeasure::LogOR);
  EXPECT_NEAR(lor.effect().alt.scale(), M_PI / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(smd.coefficient().scale(), 0.25, 1e-15);
  EXPECT_THROW(default_profile(EffectSizeMeasure::LogRR), InputError);
}

TEST(PriorProfile, RescalingComposes) {
  const auto p = default_profile(EffectSizeMeasure::SMD);
  EXPECT_EQ(p.rescaled(2.0).rescaled(3.0).effect().alt, p.rescaled(6.0).effect().alt);
  EXPECT_EQ(p.rescaled(2.0).effect().null, PriorDistribution::point(0.0));
  EXPECT_NEAR(p.rescaled(2.0).heterogeneity().alt.scale(), 0.3, 1e-15);
  EXPECT_THROW(p.rescaled(0.0), InputError);
}

TEST(MedicineCatalog, LoadsAndLooksUpEntries) {
  const auto cat = MedicineCatalog::load(bma::test::fixture("synthetic_catalog.json"));
  EXPECT_EQ(cat.version(), "test-1");
  ASSERT_EQ(cat.entries().size(), 2u);
  const auto p = medicine_profile(cat, EffectSizeMeasure::LogOR, "Synthetic A");
  EXPECT_EQ(p.effect().alt, PriorDistribution::normal(0.0, 0.4));
  EXPECT_EQ(p.source(), ProfileSource::Medicine);
  EXPECT_NEAR(p.coefficient().scale(), 0.2, 1e-15);
  try {
    medicine_profile(cat, EffectSizeMeasure::LogOR, "Airways");
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Synthetic A"), std::string::npos);
    EXPECT_NE(msg.find("Synthetic B"), std::string::npos);
  }
}

TEST(MedicineCatalog, BundledCatalogHasTheLayoutOnly) {
  const auto cat = MedicineCatalog::load(std::string(BMA_DATA_DIR) + "/medicine_catalog.json");
  EXPECT_TRUE(cat.entries().empty());
  EXPECT_THROW(MedicineCatalog::load(bma::test::fixture("missing.json")), InputError);
  EXPECT_THROW(MedicineCatalog::from_json(nlohmann::json{{"entries", 3}}), InputError);
}
