#include <fstream>

#include <gtest/gtest.h>

#include "bma/config.hpp"
#include "bma/report.hpp"
#include "common.hpp"

using namespace bma;

namespace {

Estimate est(const std::string& p, double mean, double median, double lo, double hi) {
  Estimate e;
  e.parameter = p;
  e.mean = mean;
  e.median = median;
  e.lower = lo;
  e.upper = hi;
  return e;
}

EnsembleSummary handmade(bool moderators) {
  EnsembleSummary s;
  s.measure = "SMD";
  s.transform = "identity";
  s.studies = 7;
  ComponentTest effect{"Effect", 0.5, 1.0, 15.2, true, true};
  ComponentTest het{"Heterogeneity", 0.5, 0.4, std::log(0.6667), true, false};
  s.tests = {effect, het};
  s.averaged = {est("mu", 0.36, 0.36, 0.27, 0.45), est("tau", 0.08, 0.07, 0.0, 0.2)};
  s.averaged[0].pi_lower = -0.1;
  s.averaged[0].pi_upper = 0.8;
  s.conditional = s.averaged;
  if (moderators) {
    s.has_moderators = true;
    s.tests.push_back(ComponentTest{"gender", 0.5, 0.9, std::log(9.0), true, false});
    s.averaged.push_back(est("beta:gender[male]", -0.1, -0.1, -0.2, 0.0));
    s.emms.push_back(EmmRow{"gender", "female", est("gender[female]", 0.4, 0.4, 0.3, 0.5), 12.5});
    s.emms.push_back(EmmRow{"gender", "male", est("gender[male]", 0.1, 0.1, 0.0, 0.2), std::nullopt});
  }
  s.models = {ModelRow{"M1", 0.25, 0.1, -3.2, 0.001, "bridge", 0.33, 812.0, 1.002}};
  s.footnotes = {"Bayes factors above 100 are sensitive to Monte Carlo error; an example note."};
  s.warnings = {"model [mu tau]: R-hat 1.07 exceeds 1.05", "unicode \xCF\x84 and \"quotes\""};
  return s;
}

nlohmann::json report_schema() {
  std::ifstream in(bma::test::source("docs/report.schema.json"));
  return nlohmann::json::parse(in);
}

}  // namespace

TEST(ReportText, InfinityAndBands) {
  const auto text = render_tables(handmade(false));
  EXPECT_NE(text.find("Meta-Analytic Tests"), std::string::npos);
  EXPECT_NE(text.find("\xE2\x88\x9E"), std::string::npos);
  EXPECT_NE(text.find("0.667"), std::string::npos);
  EXPECT_NE(text.find("Effect: extreme evidence for inclusion"), std::string::npos);
  EXPECT_NE(text.find("Heterogeneity: weak evidence against inclusion"), std::string::npos);
  EXPECT_EQ(text.find("Meta-Regression"), std::string::npos);
  EXPECT_EQ(text.find("Estimated Marginal Means"), std::string::npos);
  EXPECT_EQ(text.find("Model Summary"), std::string::npos);
}

TEST(ReportText, DirectionsAndOptionalTables) {
  ReportOptions o;
  o.bf = BfDirection::BF01;
  o.models = true;
  o.conditional = true;
  const auto text = render_tables(handmade(true), o);
  EXPECT_NE(text.find("Inclusion BF01"), std::string::npos);
  EXPECT_NE(text.find("1.500"), std::string::npos);  // 1 / 0.6667
  EXPECT_NE(text.find("Meta-Regression Terms Tests"), std::string::npos);
  EXPECT_NE(text.find("Meta-Regression Coefficients (model-averaged)"), std::string::npos);
  EXPECT_NE(text.find("Conditional Meta-Analytic Estimates"), std::string::npos);
  EXPECT_NE(text.find("Estimated Marginal Means"), std::string::npos);
  EXPECT_NE(text.find("12.500"), std::string::npos);
  EXPECT_NE(text.find("Model Summary"), std::string::npos);
  o.bf = BfDirection::LogBF10;
  EXPECT_NE(render_tables(handmade(true), o).find("log(BF10)"), std::string::npos);
}

TEST(ReportText, WarningsAndFootnotesVerbatim) {
  const auto s = handmade(false);
  const auto text = render_tables(s);
  for (const auto& w : s.warnings) EXPECT_NE(text.find(w), std::string::npos) << w;
  for (const auto& f : s.footnotes) EXPECT_NE(text.find(f), std::string::npos) << f;
  const auto j = to_json(s);
  EXPECT_EQ(j.at("warnings").get<std::vector<std::string>>(), s.warnings);
  EXPECT_EQ(j.at("footnotes").get<std::vector<std::string>>(), s.footnotes);
}

TEST(ReportJson, RoundTripRendersIdentically) {
  for (bool mod : {false, true}) {
    const auto s = handmade(mod);
    const auto j = to_json(s);
    const auto back = summary_from_json(nlohmann::json::parse(j.dump()));
    ReportOptions o;
    o.models = o.conditional = true;
    EXPECT_EQ(render_tables(back, o), render_tables(s, o));
    EXPECT_EQ(to_json(back), j);
  }
}

TEST(ReportJson, NonFiniteValuesAreStrings) {
  const auto j = to_json(handmade(false));
  EXPECT_EQ(j.at("tests")[0].at("infinite_display"), true);
  EXPECT_EQ(j.at("tests")[0].at("unstable"), true);
  EXPECT_NEAR(j.at("tests")[0].at("log_bf10").get<double>(), 15.2, 1e-12);
  auto s = handmade(false);
  s.tests[1].applicable = false;
  s.tests[1].log_bf10 = kNaN;
  const auto k = to_json(s);
  EXPECT_EQ(k.at("tests")[1].at("log_bf10"), "NaN");
  EXPECT_TRUE(std::isnan(summary_from_json(k).tests[1].log_bf10));
}

TEST(ReportJson, ValidatesAgainstPublishedSchema) {
  const auto schema = report_schema();
  for (bool mod : {false, true}) {
    const auto errors = validate_against(schema, to_json(handmade(mod)));
    EXPECT_TRUE(errors.empty()) << format_schema_errors(errors);
  }
  auto broken = to_json(handmade(false));
  broken.erase("tests");
  EXPECT_FALSE(validate_against(schema, broken).empty());
}

TEST(ReportJson, FittedSummaryValidates) {
  Rng rng(2);
  const auto data = bma::test::random_dataset(rng, 6, 0.3, 0.1);
  const auto e = build_ensemble(default_profile(EffectSizeMeasure::SMD), EnsembleSwitches{}, {}, false, data);
  LikelihoodContext ctx(data);
  McmcSettings m;
  m.adaptation = 200;
  m.burnin = 200;
  m.sampling = 300;
  const auto fits = fit_ensemble(e, ctx, m, 1);
  const auto s = summarize(e, fits, ctx, SummaryOptions{});
  const auto j = to_json(s);
  const auto errors = validate_against(report_schema(), j);
  EXPECT_TRUE(errors.empty()) << format_schema_errors(errors);
  EXPECT_EQ(render_tables(summary_from_json(j)), render_tables(s));
}
