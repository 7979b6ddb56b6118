#include <regex>

#include <gtest/gtest.h>

#include "bma/svg.hpp"
#include "common.hpp"

using namespace bma;

namespace {

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + needle.size())) ++n;
  return n;
}

McmcSettings short_run() {
  McmcSettings m;
  m.adaptation = 200;
  m.burnin = 200;
  m.sampling = 300;
  m.marglik = MarglikMethod::Bridge;
  return m;
}

/// Small fitted analysis kept alive for the whole suite.
struct Scene {
  Dataset data;
  Ensemble ensemble;
  LikelihoodContext ctx;
  std::vector<FitResult> fits;
  EnsembleSummary summary;

  PlotContext plot() const { return PlotContext{ensemble, fits, ctx, summary, Transform::Identity, 7}; }
};

std::unique_ptr<Scene> regression_scene() {
  CsvSchema s;
  s.effect = "yi";
  s.se = "sei";
  s.id = "study";
  s.covariates = {"gender"};
  auto data = load_csv(bma::test::fixture("synthetic_regression.csv"), s, EffectSizeMeasure::LogOR);
  auto e = build_ensemble(default_profile(EffectSizeMeasure::LogOR), EnsembleSwitches{}, {"gender"}, false, data);
  LikelihoodContext ctx(data, build_design(data, {"gender"}));
  auto fits = fit_ensemble(e, ctx, short_run(), 1);
  SummaryOptions o;
  o.emm_terms = {"gender"};
  auto summary = summarize(e, fits, ctx, o);
  return std::unique_ptr<Scene>(new Scene{std::move(data), std::move(e), std::move(ctx), std::move(fits), std::move(summary)});
}

std::unique_ptr<Scene> bias_scene() {
  Rng rng(11);
  auto data = bma::test::random_dataset(rng, 10, 0.3, 0.1);
  EnsembleSwitches sw;
  sw.bias_bma = true;
  auto e = build_ensemble(default_profile(EffectSizeMeasure::SMD), sw, {}, false, data);
  LikelihoodContext ctx(data);
  auto fits = fit_ensemble(e, ctx, short_run(), 1);
  auto summary = summarize(e, fits, ctx, SummaryOptions{});
  return std::unique_ptr<Scene>(new Scene{std::move(data), std::move(e), std::move(ctx), std::move(fits), std::move(summary)});
}

class SvgRegression : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { scene_ = regression_scene().release(); }
  static void TearDownTestSuite() {
    delete scene_;
    scene_ = nullptr;
  }
  static Scene* scene_;
};
Scene* SvgRegression::scene_ = nullptr;

class SvgBias : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { scene_ = bias_scene().release(); }
  static void TearDownTestSuite() {
    delete scene_;
    scene_ = nullptr;
  }
  static Scene* scene_;
};
Scene* SvgBias::scene_ = nullptr;

PlotSpec spec(PlotKind k, std::string parameter = "", std::string moderator = "") {
  PlotSpec p;
  p.kind = k;
  p.parameter = std::move(parameter);
  p.moderator = std::move(moderator);
  return p;
}

void well_formed(const std::string& svg) {
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u) << svg.substr(0, 80);
  EXPECT_NE(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\""), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
  EXPECT_EQ(svg.find("inf\""), std::string::npos);
}

}  // namespace

TEST_F(SvgRegression, RenderingIsDeterministic) {
  for (auto k : {PlotKind::Forest, PlotKind::Bubble, PlotKind::PriorPosterior, PlotKind::Trace}) {
    const auto s = spec(k, "mu", "gender");
    const auto a = render_plot(s, scene_->plot());
    EXPECT_EQ(a, render_plot(s, scene_->plot())) << to_string(k);
    well_formed(a);
  }
}

TEST_F(SvgRegression, TraceDrawsOneLinePerChain) {
  const auto svg = render_plot(spec(PlotKind::Trace, "mu"), scene_->plot());
  EXPECT_EQ(count(svg, "<polyline"), 4u);
  EXPECT_THROW(render_plot(spec(PlotKind::Trace), scene_->plot()), InputError);
  EXPECT_THROW(render_plot(spec(PlotKind::Trace, "omega[1]"), scene_->plot()), InputError);
}

TEST_F(SvgRegression, PriorPosteriorShowsDensityAndSpikes) {
  const auto svg = render_plot(spec(PlotKind::PriorPosterior, "mu"), scene_->plot());
  EXPECT_GE(count(svg, "<polyline"), 2u);  // prior and posterior densities
  EXPECT_GE(count(svg, "<polygon"), 2u);   // arrow heads at zero
}

TEST_F(SvgRegression, BubbleHasOneBoxPerLevel) {
  const auto svg = render_plot(spec(PlotKind::Bubble, "", "gender"), scene_->plot());
  std::regex box("<rect[^>]*fill=\"#dddddd\"");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), box), std::sregex_iterator()), 2);
  EXPECT_EQ(count(svg, "<circle"), 9u);
  EXPECT_THROW(render_plot(spec(PlotKind::Bubble, "", "smoke"), scene_->plot()), InputError);
  EXPECT_THROW(render_plot(spec(PlotKind::Bubble), scene_->plot()), InputError);
}

TEST_F(SvgRegression, ForestSections) {
  auto s = spec(PlotKind::Forest);
  const auto studies = render_plot(s, scene_->plot());
  EXPECT_NE(studies.find("Pooled (model-averaged)"), std::string::npos);
  EXPECT_NE(studies.find(">s1<"), std::string::npos);
  s.sections = {"studies", "emm", "models"};
  const auto all = render_plot(s, scene_->plot());
  EXPECT_NE(all.find("female"), std::string::npos);
  EXPECT_GT(all.size(), studies.size());
  s.sections = {"nonsense"};
  EXPECT_THROW(render_plot(s, scene_->plot()), InputError);
}

TEST_F(SvgRegression, BiasPlotsNeedBiasModels) {
  EXPECT_THROW(render_plot(spec(PlotKind::WeightFunction), scene_->plot()), InputError);
  EXPECT_THROW(render_plot(spec(PlotKind::PetPeese), scene_->plot()), InputError);
}

TEST_F(SvgBias, WeightFunctionAndPetPeese) {
  const auto w = render_plot(spec(PlotKind::WeightFunction), scene_->plot());
  well_formed(w);
  EXPECT_EQ(w, render_plot(spec(PlotKind::WeightFunction), scene_->plot()));
  EXPECT_EQ(count(w, "<polyline"), 1u);
  const auto p = render_plot(spec(PlotKind::PetPeese), scene_->plot());
  well_formed(p);
  EXPECT_EQ(count(p, "<circle"), 10u);
}
