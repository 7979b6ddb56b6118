#include <gtest/gtest.h>

#include "common.hpp"

using namespace bma;

namespace {

Dataset synthetic() {
  CsvSchema s;
  s.effect = "yi";
  s.se = "sei";
  s.id = "study";
  s.covariates = {"gender", "smoke", "no2"};
  return load_csv(bma::test::fixture("synthetic_regression.csv"), s, EffectSizeMeasure::LogOR);
}

double total_prior(const Ensemble& e) {
  double p = 0.0;
  for (const auto& m : e.models) p += m.prior_prob;
  return p;
}

}  // namespace

TEST(EnsembleProperty, PriorProbabilitiesSumToOne) {
  const auto data = synthetic();
  const auto profile = default_profile(EffectSizeMeasure::LogOR);
  const std::vector<std::vector<std::string>> mods{{}, {"gender"}, {"gender", "smoke", "no2"}};
  for (bool eff : {false, true})
    for (bool het : {false, true})
      for (bool bias : {false, true})
        for (auto family : {BiasFamily::PSMA, BiasFamily::PP, BiasFamily::TwoW})
          for (const auto& m : mods) {
            EnsembleSwitches sw;
            sw.effect_bma = eff;
            sw.heterogeneity_bma = het;
            sw.bias_bma = bias;
            sw.bias_family = family;
            const auto e = build_ensemble(profile, sw, m, false, data);
            EXPECT_NEAR(total_prior(e), 1.0, 1e-12);
            for (const auto& c : e.components) {
              const double p = e.component_prior_prob(c);
              const bool averaged = c.kind == Component::Kind::Effect         ? eff
                                    : c.kind == Component::Kind::Heterogeneity ? het
                                                                               : true;
              EXPECT_NEAR(p, averaged ? 0.5 : 1.0, 1e-12) << c.name;
            }
          }
}

TEST(Ensemble, ModelCounts) {
  const auto data = synthetic();
  const auto profile = default_profile(EffectSizeMeasure::LogOR);
  EnsembleSwitches sw;
  EXPECT_EQ(build_ensemble(profile, sw, {}, false, data).models.size(), 4u);
  EXPECT_EQ(build_ensemble(profile, sw, {"gender", "smoke", "no2"}, false, data).models.size(), 32u);
  sw.bias_bma = true;
  EXPECT_EQ(build_ensemble(profile, sw, {}, false, data).models.size(), 36u);
  sw.bias_family = BiasFamily::PP;
  EXPECT_EQ(build_ensemble(profile, sw, {}, false, data).models.size(), 12u);
  sw.moderators_bma = false;
  sw.bias_bma = false;
  const auto fixed = build_ensemble(profile, sw, {"gender"}, false, data);
  EXPECT_EQ(fixed.models.size(), 4u);
  EXPECT_TRUE(fixed.models.front().moderator_included[0]);
}

TEST(Ensemble, PsmaVariantWeights) {
  const auto data = synthetic();
  EnsembleSwitches sw;
  sw.bias_bma = true;
  const auto e = build_ensemble(default_profile(EffectSizeMeasure::LogOR), sw, {}, false, data);
  double sel = 0.0, pet = 0.0, peese = 0.0, none = 0.0;
  for (const auto& m : e.models) {
    switch (m.bias.kind) {
      case BiasVariant::Kind::Selection: sel += m.prior_prob; break;
      case BiasVariant::Kind::PET: pet += m.prior_prob; break;
      case BiasVariant::Kind::PEESE: peese += m.prior_prob; break;
      case BiasVariant::Kind::None: none += m.prior_prob; break;
    }
  }
  EXPECT_NEAR(none, 0.5, 1e-12);
  EXPECT_NEAR(sel, 0.25, 1e-12);
  EXPECT_NEAR(pet, 0.125, 1e-12);
  EXPECT_NEAR(peese, 0.125, 1e-12);
  EXPECT_EQ(e.components.back().name, "Publication bias");
}

TEST(Ensemble, PriorsFollowComponentStates) {
  const auto data = synthetic();
  const auto profile = default_profile(EffectSizeMeasure::LogOR);
  const auto e = build_ensemble(profile, EnsembleSwitches{}, {"gender"}, false, data);
  for (const auto& m : e.models) {
    EXPECT_EQ(m.priors.mu, m.has_effect() ? profile.effect().alt : profile.effect().null);
    EXPECT_EQ(m.priors.tau, m.has_heterogeneity() ? profile.heterogeneity().alt : profile.heterogeneity().null);
    EXPECT_EQ(m.priors.beta[0].is_point(), !m.moderator_included[0]);
  }
  EXPECT_EQ(e.components.front().name, "Adjusted effect");
  const auto j = to_json(e);
  EXPECT_EQ(j["models"].size(), 8u);
  EXPECT_DOUBLE_EQ(j["components"][2]["prior_prob"].get<double>(), 0.5);
}

TEST(Ensemble, RejectsInvalidSpecifications) {
  const auto data = synthetic();
  const auto profile = default_profile(EffectSizeMeasure::LogOR);
  EXPECT_THROW(build_ensemble(profile, {}, {"age"}, false, data), InputError);
  EXPECT_THROW(build_ensemble(profile, {}, {"gender", "gender"}, false, data), InputError);
  EXPECT_THROW(build_ensemble(profile, {}, {}, true, data), InputError);
  EnsembleSwitches custom;
  custom.bias_bma = true;
  custom.bias_family = BiasFamily::Custom;
  EXPECT_THROW(build_ensemble(profile, custom, {}, false, data), InputError);
  custom.custom_bias = {{BiasVariant::none(), 1.0}};
  EXPECT_THROW(build_ensemble(profile, custom, {}, false, data), InputError);
  custom.custom_bias = {{BiasVariant::selection({0.05}, Sidedness::OneSided), 2.0},
                        {BiasVariant::pet(BiasPriors{}.pet), 1.0}};
  const auto e = build_ensemble(profile, custom, {}, false, data);
  EXPECT_EQ(e.models.size(), 12u);
  EXPECT_NEAR(total_prior(e), 1.0, 1e-12);
  EXPECT_THROW(BiasVariant::pet(PriorDistribution::normal(0, 1)), InputError);
  EXPECT_THROW(parse_bias_family("psma"), InputError);
}

TEST(ContrastsProperty, OrthonormalIdentities) {
  for (int k = 2; k <= 8; ++k) {
    SCOPED_TRACE(k);
    const auto C = orthonormal_contrasts(k);
    ASSERT_EQ(C.rows(), k);
    ASSERT_EQ(C.cols(), k - 1);
    EXPECT_TRUE((C.transpose() * C).isApprox(Eigen::MatrixXd::Identity(k - 1, k - 1), 1e-12));
    EXPECT_LT((Eigen::RowVectorXd::Ones(k) * C).norm(), 1e-12);
    const Eigen::MatrixXd centering =
        Eigen::MatrixXd::Identity(k, k) - Eigen::MatrixXd::Constant(k, k, 1.0 / k);
    EXPECT_TRUE((C * C.transpose()).isApprox(centering, 1e-12));
  }
  EXPECT_THROW(orthonormal_contrasts(1), InputError);
}

TEST(ContrastsProperty, LevelEffectsAreExchangeable) {
  // With iid coefficient priors the implied level deviations have covariance
  // C C', which must be invariant under any relabelling of the levels.
  for (int k = 2; k <= 6; ++k) {
    const auto C = orthonormal_contrasts(k);
    const Eigen::MatrixXd S = C * C.transpose();
    Eigen::VectorXi perm(k);
    for (int i = 0; i < k; ++i) perm(i) = (i * 3 + 1) % k;
    if (std::gcd(3, k) != 1) perm.setLinSpaced(k, k - 1, 0);
    Eigen::PermutationMatrix<Eigen::Dynamic> P(perm);
    EXPECT_TRUE((P * S * P.transpose()).isApprox(S, 1e-12));
    for (int i = 0; i < k; ++i) EXPECT_NEAR(S(i, i), (k - 1.0) / k, 1e-12);
  }
  // treatment coding is not exchangeable
  const auto T = treatment_contrasts(3);
  const Eigen::MatrixXd ST = T * T.transpose();
  EXPECT_NE(ST(0, 0), ST(1, 1));
}

TEST(Design, SyntheticRegressionStructure) {
  const auto data = synthetic();
  const auto d = build_design(data, {"gender", "smoke", "no2"});
  ASSERT_EQ(d.X.rows(), 9);
  ASSERT_EQ(d.X.cols(), 4);
  ASSERT_EQ(d.terms.size(), 3u);
  for (const auto& t : d.terms) {
    EXPECT_EQ(t.kind, CovariateKind::Categorical);
    EXPECT_EQ(t.ncols, 1);
    EXPECT_EQ(t.levels.size(), 2u);
  }
  for (Eigen::Index i = 0; i < 9; ++i) {
    EXPECT_EQ(d.X(i, 0), 1.0);
    for (Eigen::Index c = 1; c < 4; ++c) EXPECT_NEAR(std::abs(d.X(i, c)), std::sqrt(0.5), 1e-12);
  }
  EXPECT_EQ(coefficient_names(d), (std::vector<std::string>{"beta:gender", "beta:smoke", "beta:no2"}));
  EXPECT_LT(d.terms[0].average_row().norm(), 1e-12);

  const auto t = build_design(data, {"gender"}, {{"gender", ContrastKind::Treatment}});
  EXPECT_EQ(t.X.col(1).sum(), 4.0);  // four male studies
}

TEST(Design, ContinuousModeratorsAreStandardized) {
  std::vector<StudyRecord> recs;
  for (int i = 0; i < 5; ++i) {
    StudyRecord r;
    r.y = 0.1 * i;
    r.se = 0.2;
    r.covariates["year"] = 2000.0 + 2 * i;
    recs.push_back(r);
  }
  const Dataset data(recs, EffectSizeMeasure::SMD, {{"year", CovariateKind::Continuous}});
  const auto d = build_design(data, {"year"});
  EXPECT_NEAR(d.X.col(1).mean(), 0.0, 1e-12);
  EXPECT_NEAR(d.X.col(1).squaredNorm() / 5.0, 1.0, 1e-12);
  EXPECT_NEAR(d.terms[0].row_for_value(2004.0)(0), 0.0, 1e-12);

  for (auto& r : recs) r.covariates["year"] = 2000.0;
  const Dataset flat(recs, EffectSizeMeasure::SMD, {{"year", CovariateKind::Continuous}});
  EXPECT_THROW(build_design(flat, {"year"}), InputError);
}
