#pragma once

// Random small instances for the quadrature / bridge / closed-form oracle
// comparison.

#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace bma::test {

struct OracleInstance {
  std::string kind;
  Dataset data;
  std::optional<DesignMatrix> design;
  ModelSpec model;
  std::optional<double> closed_form;  // exact log marginal likelihood when Gaussian
};

struct OracleOutcome {
  OracleInstance instance;
  LogMarginal quadrature;
  LogMarginal bridge;
  double joint_mcse() const { return std::hypot(quadrature.mcse, bridge.mcse); }
};

inline OracleInstance make_oracle_instance(std::uint64_t seed, int index) {
  Rng rng(stream_seed(seed, static_cast<std::uint64_t>(index)));
  const int k = 3 + static_cast<int>(rng.uniform() * 6);  // 3..8 studies
  const int kind = index % 6;
  std::vector<StudyRecord> recs;
  for (int i = 0; i < k; ++i) {
    StudyRecord r;
    r.id = "s" + std::to_string(i + 1);
    r.se = 0.1 + 0.3 * rng.uniform();
    r.y = 0.25 + 0.15 * rng.normal() + r.se * rng.normal();
    r.covariates["x"] = rng.normal();
    recs.push_back(r);
  }
  Dataset data(recs, EffectSizeMeasure::SMD, {{"x", CovariateKind::Continuous}});
  const double s0 = 0.3 + rng.uniform();

  ModelSpec m;
  m.priors.mu = PriorDistribution::normal(0.0, s0);
  m.priors.tau = PriorDistribution::point(0.0);
  m.priors.rho = PriorDistribution::uniform(0.0, 1.0);
  OracleInstance out{"", data, std::nullopt, m, std::nullopt};
  const auto n = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd X1 = Eigen::MatrixXd::Ones(n, 1);
  switch (kind) {
    case 0:
      out.kind = "mu, tau=0";
      out.model.heterogeneity = ComponentState::Null;
      out.closed_form = gaussian_log_marginal(data, X1, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, s0));
      break;
    case 1: {
      const double tau = 0.05 + 0.2 * rng.uniform();
      out.kind = "mu, tau fixed";
      out.model.priors.tau = PriorDistribution::point(tau);
      out.closed_form =
          gaussian_log_marginal(data, X1, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, s0), tau);
      break;
    }
    case 2: {
      out.kind = "mu, beta, tau=0";
      out.model.heterogeneity = ComponentState::Null;
      out.design = build_design(data, {"x"});
      const double sb = 0.5 * s0;
      out.model.moderator_included = {true};
      out.model.priors.beta = {PriorDistribution::normal(0.0, sb)};
      Eigen::VectorXd sd(2);
      sd << s0, sb;
      out.closed_form = gaussian_log_marginal(data, out.design->X, Eigen::VectorXd::Zero(2), sd);
      break;
    }
    case 3:
      out.kind = "mu, tau";
      out.model.priors.tau = PriorDistribution::inverse_gamma(1.0, 0.15);
      break;
    case 4:
      out.kind = "mu=0, tau";
      out.model.effect = ComponentState::Null;
      out.model.priors.mu = PriorDistribution::point(0.0);
      out.model.priors.tau = PriorDistribution::inverse_gamma(1.0, 0.15);
      break;
    default:
      out.kind = "mu, tau, selection";
      out.model.priors.tau = PriorDistribution::inverse_gamma(1.0, 0.15);
      out.model.bias = BiasVariant::selection({0.05}, Sidedness::OneSided);
      break;
  }
  return out;
}

inline McmcSettings oracle_settings(std::uint64_t seed) {
  McmcSettings s;
  s.chains = 4;
  s.adaptation = 500;
  s.burnin = 500;
  s.sampling = 4000;
  s.seed = seed;
  s.marglik = MarglikMethod::Bridge;
  return s;
}

inline OracleOutcome run_oracle_instance(std::uint64_t seed, int index) {
  auto inst = make_oracle_instance(seed, index);
  const LikelihoodContext ctx(inst.data, inst.design);
  const auto fit = fit_model(inst.model, ctx, oracle_settings(seed), static_cast<std::uint64_t>(index));
  const ModelPosterior post(inst.model, ctx);
  const auto quad = quadrature_log_marginal(post);
  return {std::move(inst), quad, fit.log_marglik};
}

}  // namespace bma::test
