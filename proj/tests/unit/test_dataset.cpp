#include <gtest/gtest.h>

#include <sstream>

#include "common.hpp"

using namespace bma;

namespace {

Dataset parse(const std::string& text, CsvSchema schema, EffectSizeMeasure m = EffectSizeMeasure::SMD) {
  std::istringstream in(text);
  return parse_csv(in, schema, m);
}

CsvSchema basic() {
  CsvSchema s;
  s.effect = "yi";
  s.se = "sei";
  return s;
}

}  // namespace

TEST(Dataset, ParsesStandardErrorsAndVariances) {
  auto d = parse("yi,sei\n0.1,0.2\n0.3,0.4\n", basic());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_DOUBLE_EQ(d.records()[1].y, 0.3);
  EXPECT_DOUBLE_EQ(d.records()[1].se, 0.4);
  EXPECT_EQ(d.records()[0].id, "1");

  CsvSchema v;
  v.effect = "yi";
  v.variance = "vi";
  auto dv = parse("yi,vi\n0.1,0.04\n", v);
  EXPECT_DOUBLE_EQ(dv.records()[0].se, 0.2);
}

TEST(Dataset, InfersCovariateKindsAndHonoursOverrides) {
  CsvSchema s = basic();
  s.covariates = {"year", "arm"};
  auto d = parse("yi,sei,year,arm\n0.1,0.2,2001,a\n0.2,0.2,2003,b\n", s);
  EXPECT_EQ(d.covariate_kinds().at("year"), CovariateKind::Continuous);
  EXPECT_EQ(d.covariate_kinds().at("arm"), CovariateKind::Categorical);
  EXPECT_EQ(d.levels("arm"), (std::vector<std::string>{"a", "b"}));

  s.kind_overrides["year"] = CovariateKind::Categorical;
  auto o = parse("yi,sei,year,arm\n0.1,0.2,2001,a\n0.2,0.2,2003,b\n", s);
  EXPECT_EQ(o.covariate_kinds().at("year"), CovariateKind::Categorical);
}

TEST(Dataset, QuotedFieldsAndBom) {
  CsvSchema s = basic();
  s.id = "study";
  auto d = parse("\xEF\xBB\xBFstudy,yi,sei\n\"Smith, 2001\",0.1,0.2\n\"A \"\"B\"\"\",0.2,0.3\n", s);
  EXPECT_EQ(d.records()[0].id, "Smith, 2001");
  EXPECT_EQ(d.records()[1].id, "A \"B\"");
}

TEST(Dataset, RejectsInvalidRows) {
  EXPECT_THROW(parse("yi,sei\n0.1,0\n", basic()), InputError);
  EXPECT_THROW(parse("yi,sei\n0.1,-1\n", basic()), InputError);
  EXPECT_THROW(parse("yi,sei\nabc,0.1\n", basic()), InputError);
  EXPECT_THROW(parse("yi,sei\n0.1,0.2,3\n", basic()), InputError);
  EXPECT_THROW(parse("yi,sei\n", basic()), InputError);
  EXPECT_THROW(parse("", basic()), InputError);
  EXPECT_THROW(parse("yi,other\n0.1,0.2\n", basic()), InputError);

  CsvSchema c = basic();
  c.cluster = "g";
  EXPECT_THROW(parse("yi,sei,g\n0.1,0.2,a\n0.1,0.2,\n", c), InputError);

  CsvSchema both = basic();
  both.variance = "vi";
  EXPECT_THROW(parse("yi,sei,vi\n0.1,0.2,0.04\n", both), InputError);

  CsvSchema cov = basic();
  cov.covariates = {"x"};
  EXPECT_THROW(parse("yi,sei,x\n0.1,0.2,\n", cov), InputError);
}

TEST(Dataset, ErrorMessagesNameTheRow) {
  try {
    parse("yi,sei\n0.1,0.2\n0.1,0\n", basic());
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

TEST(Dataset, CsvAndJsonRoundTrip) {
  CsvSchema s = basic();
  s.id = "study";
  s.cluster = "g";
  s.covariates = {"x", "arm"};
  auto d = parse("study,yi,sei,g,x,arm\na,0.1,0.2,u,1.5,p\nb,-0.25,0.125,u,2,q\nc,0.3,0.3,v,3,p\n", s);
  const auto again = parse(to_csv(d), csv_schema_for(d));
  EXPECT_EQ(to_json(again), to_json(d));
  EXPECT_EQ(to_json(dataset_from_json(to_json(d))), to_json(d));
  EXPECT_TRUE(again.has_clusters());
}

TEST(Dataset, LoadsBundledData) {
  CsvSchema k;
  k.effect = "yi";
  k.variance = "vi";
  k.cluster = "district";
  const auto d = load_csv(std::string(BMA_DATA_DIR) + "/konstantopoulos2011.csv", k, EffectSizeMeasure::SMD);
  EXPECT_EQ(d.size(), 56u);
  EXPECT_TRUE(d.has_clusters());

  CsvSchema c;
  c.effect = "yi";
  c.se = "sei";
  const auto z = load_csv(bma::test::source("examples/analyses/cohen1981_z.csv"), c, EffectSizeMeasure::FishersZ);
  EXPECT_EQ(z.size(), 20u);
}

TEST(EffectSize, FishersZ) {
  const auto e = fishers_z(0.5, 28);
  EXPECT_NEAR(e.y, 0.5493061443340548, 1e-15);
  EXPECT_NEAR(e.se, 0.2, 1e-15);
  EXPECT_THROW(fishers_z(1.0, 10), DomainError);
  EXPECT_THROW(fishers_z(0.2, 3), DomainError);
}

TEST(EffectSize, LogOddsRatioFromInterval) {
  const auto e = logor_from_ci(2.0, 1.0, 4.0);
  EXPECT_NEAR(e.y, 0.6931471805599453, 1e-14);
  EXPECT_NEAR(e.se, 0.353653019151067, 1e-9);
  const auto f = logor_from_ci(1.3, 1.1, 1.6, 0.90);
  EXPECT_NEAR(f.y, 0.26236426446749106, 1e-14);
  EXPECT_NEAR(f.se, 0.11389872123024634, 1e-9);
  EXPECT_THROW(logor_from_ci(2.0, 2.5, 4.0), DomainError);
  EXPECT_THROW(logor_from_ci(2.0, 0.0, 4.0), DomainError);
  EXPECT_THROW(logor_from_ci(2.0, 1.0, 4.0, 1.0), DomainError);
}

TEST(Transforms, RoundTripNames) {
  for (auto t : {Transform::Identity, Transform::FishersZToR, Transform::Exponential})
    EXPECT_EQ(parse_transform(to_string(t)), t);
  EXPECT_THROW(parse_transform("log"), InputError);
  EXPECT_DOUBLE_EQ(apply_transform(Transform::FishersZToR, std::atanh(0.36)), 0.36);
  EXPECT_DOUBLE_EQ(apply_transform(Transform::Exponential, 0.0), 1.0);
}

TEST(TransformProperty, QuantilesCommuteWithMonotoneTransforms) {
  Rng rng(7);
  std::vector<double> draws(1001);
  for (double& x : draws) x = 0.3 + 0.4 * rng.normal();
  for (auto t : {Transform::FishersZToR, Transform::Exponential}) {
    const auto direct = summarize_draws("x", apply_transform(t, draws));
    const auto raw = summarize_draws("x", draws);
    EXPECT_DOUBLE_EQ(direct.median, apply_transform(t, raw.median));
    EXPECT_DOUBLE_EQ(direct.lower, apply_transform(t, raw.lower));
    EXPECT_DOUBLE_EQ(direct.upper, apply_transform(t, raw.upper));
  }
}
