#pragma once

// Model ensembles implied by the averaging switches, and meta-regression
// design matrices built from orthonormal contrasts.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bma/dataset.hpp"
#include "bma/error.hpp"
#include "bma/priors.hpp"

namespace bma {

enum class ComponentState { Null, Present };

/// Publication-bias component of one model.
struct BiasVariant {
  enum class Kind { None, Selection, PET, PEESE };

  Kind kind = Kind::None;
  WeightFunctionPrior weights;  // Selection only
  PriorDistribution slope;      // PET / PEESE only

  static BiasVariant none() { return {}; }
  static BiasVariant selection(std::vector<double> cutpoints, Sidedness sided,
                               std::vector<double> alphas = {}) {
    if (alphas.empty()) alphas.assign(cutpoints.size() + 1, 1.0);
    BiasVariant b;
    b.kind = Kind::Selection;
    b.weights = {std::move(cutpoints), sided, std::move(alphas)};
    b.weights.validate();
    return b;
  }
  static BiasVariant pet(PriorDistribution slope) { return slope_variant(Kind::PET, std::move(slope)); }
  static BiasVariant peese(PriorDistribution slope) { return slope_variant(Kind::PEESE, std::move(slope)); }

  std::string label() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::PET: return "PET";
      case Kind::PEESE: return "PEESE";
      case Kind::Selection: {
        std::string s = "weight function " + to_string(weights.sided) + " (";
        for (std::size_t i = 0; i < weights.cutpoints.size(); ++i) {
          char buf[16];
          std::snprintf(buf, sizeof buf, "%g", weights.cutpoints[i]);
          s += (i ? ", " : "") + std::string(buf);
        }
        return s + ")";
      }
    }
    return "none";
  }

 private:
  static BiasVariant slope_variant(Kind k, PriorDistribution slope) {
    if (slope.support().first < 0.0) throw InputError("PET/PEESE slope priors must be truncated to [0, inf)");
    BiasVariant b;
    b.kind = k;
    b.slope = std::move(slope);
    return b;
  }
};

/// A bias variant with its (relative) prior weight inside the bias-present half.
struct WeightedBiasVariant {
  BiasVariant variant;
  double weight = 1.0;
};

enum class BiasFamily { PSMA, PP, TwoW, Custom };

inline std::string to_string(BiasFamily f) {
  switch (f) {
    case BiasFamily::PSMA: return "PSMA";
    case BiasFamily::PP: return "PP";
    case BiasFamily::TwoW: return "2w";
    case BiasFamily::Custom: return "custom";
  }
  return "PSMA";
}

inline BiasFamily parse_bias_family(const std::string& s) {
  for (auto f : {BiasFamily::PSMA, BiasFamily::PP, BiasFamily::TwoW, BiasFamily::Custom})
    if (to_string(f) == s) return f;
  throw InputError("unknown publication-bias family '" + s + "'");
}

/// Bias-present variants of a family with their prior weights (summing to 1).
inline std::vector<WeightedBiasVariant> bias_variants(BiasFamily family, const BiasPriors& priors) {
  using S = Sidedness;
  std::vector<WeightedBiasVariant> out;
  switch (family) {
    case BiasFamily::PSMA:
      for (auto [cuts, sided] : std::vector<std::pair<std::vector<double>, S>>{
               {{0.05}, S::TwoSided},
               {{0.05, 0.10}, S::TwoSided},
               {{0.05}, S::OneSided},
               {{0.025, 0.05}, S::OneSided},
               {{0.05, 0.50}, S::OneSided},
               {{0.025, 0.05, 0.50}, S::OneSided}})
        out.push_back({BiasVariant::selection(cuts, sided), 1.0 / 12.0});
      out.push_back({BiasVariant::pet(priors.pet), 0.25});
      out.push_back({BiasVariant::peese(priors.peese), 0.25});
      break;
    case BiasFamily::PP:
      out.push_back({BiasVariant::pet(priors.pet), 0.5});
      out.push_back({BiasVariant::peese(priors.peese), 0.5});
      break;
    case BiasFamily::TwoW:
      out.push_back({BiasVariant::selection({0.05}, S::TwoSided), 0.5});
      out.push_back({BiasVariant::selection({0.05, 0.10}, S::TwoSided), 0.5});
      break;
    case BiasFamily::Custom:
      throw InputError("the custom bias family needs an explicit variant list");
  }
  return out;
}

struct EnsembleSwitches {
  bool effect_bma = true;
  bool heterogeneity_bma = true;
  bool moderators_bma = true;
  bool bias_bma = false;
  BiasFamily bias_family = BiasFamily::PSMA;
  std::vector<WeightedBiasVariant> custom_bias;  // used when bias_family == Custom
};

/// Resolved priors of one model; excluded components carry spikes at 0.
struct ModelPriors {
  PriorDistribution mu;
  PriorDistribution tau;
  PriorDistribution rho;
  std::vector<PriorDistribution> beta;  // one per moderator term
};

struct ModelSpec {
  ComponentState effect = ComponentState::Present;
  ComponentState heterogeneity = ComponentState::Present;
  BiasVariant bias;
  std::vector<bool> moderator_included;
  bool multilevel = false;
  ModelPriors priors;
  double prior_prob = 1.0;

  bool has_effect() const { return effect == ComponentState::Present; }
  bool has_heterogeneity() const { return heterogeneity == ComponentState::Present; }
  bool has_bias() const { return bias.kind != BiasVariant::Kind::None; }

  std::string label() const {
    std::string s = has_effect() ? "mu" : "mu=0";
    s += has_heterogeneity() ? ", tau" : ", tau=0";
    if (multilevel && has_heterogeneity()) s += ", rho";
    for (std::size_t t = 0; t < moderator_included.size(); ++t)
      if (moderator_included[t]) s += ", beta" + std::to_string(t + 1);
    if (has_bias()) s += ", " + bias.label();
    return s;
  }
};

/// A component whose inclusion is tested: effect, heterogeneity, bias or a
/// moderator term.
struct Component {
  std::string name;
  enum class Kind { Effect, Heterogeneity, Bias, Moderator } kind;
  std::size_t term = 0;

  bool included_in(const ModelSpec& m) const {
    switch (kind) {
      case Kind::Effect: return m.has_effect();
      case Kind::Heterogeneity: return m.has_heterogeneity();
      case Kind::Bias: return m.has_bias();
      case Kind::Moderator: return m.moderator_included[term];
    }
    return false;
  }
};

struct Ensemble {
  std::vector<ModelSpec> models;
  std::vector<std::string> terms;
  std::vector<Component> components;
  bool multilevel = false;

  double component_prior_prob(const Component& c) const {
    double p = 0.0;
    for (const auto& m : models)
      if (c.included_in(m)) p += m.prior_prob;
    return p;
  }

  const Component& component(const std::string& name) const {
    for (const auto& c : components)
      if (c.name == name) return c;
    throw InputError("unknown component '" + name + "'");
  }
};

inline Ensemble build_ensemble(const PriorProfile& profile, const EnsembleSwitches& sw,
                               const std::vector<std::string>& moderators, bool multilevel,
                               const Dataset& data) {
  for (const auto& t : moderators)
    if (!data.covariate_kinds().contains(t)) throw InputError("moderator '" + t + "' is not in the dataset");
  for (std::size_t i = 0; i < moderators.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (moderators[i] == moderators[j]) throw InputError("moderator '" + moderators[i] + "' listed twice");
  if (multilevel && !data.has_clusters())
    throw InputError("multilevel model requires a cluster column in the dataset");

  struct Option {
    double prob;
    ComponentState state;
  };
  auto binary = [](bool averaged) {
    return averaged ? std::vector<Option>{{0.5, ComponentState::Null}, {0.5, ComponentState::Present}}
                    : std::vector<Option>{{1.0, ComponentState::Present}};
  };
  const auto effect_opts = binary(sw.effect_bma);
  const auto het_opts = binary(sw.heterogeneity_bma);

  std::vector<WeightedBiasVariant> bias_opts{{BiasVariant::none(), 1.0}};
  if (sw.bias_bma) {
    auto variants = sw.bias_family == BiasFamily::Custom ? sw.custom_bias
                                                         : bias_variants(sw.bias_family, profile.bias);
    if (variants.empty()) throw InputError("publication-bias averaging needs at least one bias model");
    double total = 0.0;
    for (const auto& v : variants) {
      if (!(v.weight > 0.0)) throw InputError("bias model prior weights must be positive");
      if (v.variant.kind == BiasVariant::Kind::None) throw InputError("custom bias variants must adjust for bias");
      total += v.weight;
    }
    bias_opts = {{BiasVariant::none(), 0.5}};
    for (auto& v : variants) bias_opts.push_back({v.variant, 0.5 * v.weight / total});
  }

  const std::size_t n_terms = moderators.size();
  const std::size_t n_patterns = sw.moderators_bma ? (std::size_t{1} << n_terms) : 1;
  const auto eff = profile.effect();
  const auto het = profile.heterogeneity();
  const auto coef = profile.coefficient();

  Ensemble e;
  e.terms = moderators;
  e.multilevel = multilevel;
  for (const auto& eo : effect_opts)
    for (const auto& ho : het_opts)
      for (const auto& bo : bias_opts)
        for (std::size_t pattern = 0; pattern < n_patterns; ++pattern) {
          ModelSpec m;
          m.effect = eo.state;
          m.heterogeneity = ho.state;
          m.bias = bo.variant;
          m.multilevel = multilevel;
          double p = eo.prob * ho.prob * bo.weight;
          for (std::size_t t = 0; t < n_terms; ++t) {
            const bool in = !sw.moderators_bma || ((pattern >> t) & 1u);
            m.moderator_included.push_back(in);
            if (sw.moderators_bma) p *= 0.5;
            m.priors.beta.push_back(in ? coef : PriorDistribution::point(0.0));
          }
          m.priors.mu = m.has_effect() ? eff.alt : eff.null;
          m.priors.tau = m.has_heterogeneity() ? het.alt : het.null;
          m.priors.rho = profile.allocation();
          m.prior_prob = p;
          e.models.push_back(std::move(m));
        }

  e.components.push_back({moderators.empty() ? "Effect" : "Adjusted effect", Component::Kind::Effect});
  e.components.push_back({"Heterogeneity", Component::Kind::Heterogeneity});
  if (sw.bias_bma) e.components.push_back({"Publication bias", Component::Kind::Bias});
  for (std::size_t t = 0; t < n_terms; ++t)
    e.components.push_back({moderators[t], Component::Kind::Moderator, t});
  return e;
}

/// Model-specification document: every model with its priors and prior
/// probability plus per-component inclusion probabilities.
inline nlohmann::json to_json(const Ensemble& e) {
  nlohmann::json j;
  j["terms"] = e.terms;
  j["multilevel"] = e.multilevel;
  auto& comps = j["components"] = nlohmann::json::array();
  for (const auto& c : e.components)
    comps.push_back({{"name", c.name}, {"prior_prob", e.component_prior_prob(c)}});
  auto& models = j["models"] = nlohmann::json::array();
  for (const auto& m : e.models) {
    nlohmann::json jm{{"label", m.label()},
                      {"effect", m.has_effect() ? "present" : "null"},
                      {"heterogeneity", m.has_heterogeneity() ? "present" : "null"},
                      {"bias", m.bias.label()},
                      {"prior_prob", m.prior_prob}};
    nlohmann::json pri{{"mu", m.priors.mu.describe()}, {"tau", m.priors.tau.describe()}};
    if (m.multilevel && m.has_heterogeneity()) pri["rho"] = m.priors.rho.describe();
    for (std::size_t t = 0; t < e.terms.size(); ++t) pri["beta[" + e.terms[t] + "]"] = m.priors.beta[t].describe();
    if (m.bias.kind == BiasVariant::Kind::PET || m.bias.kind == BiasVariant::Kind::PEESE)
      pri[m.bias.kind == BiasVariant::Kind::PET ? "pet" : "peese"] = m.bias.slope.describe();
    if (m.bias.kind == BiasVariant::Kind::Selection) {
      std::string a = "CumulativeDirichlet(alpha = (";
      for (std::size_t i = 0; i < m.bias.weights.alphas.size(); ++i)
        a += (i ? ", " : "") + detail::fmt_param(m.bias.weights.alphas[i]);
      pri["omega"] = a + "))";
    }
    jm["priors"] = pri;
    models.push_back(std::move(jm));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Design matrices

/// k x (k-1) contrasts with orthonormal columns orthogonal to the constant
/// vector (Gram-Schmidt on [1, e_1, ..., e_{k-1}]), so C C' = I - J/k.
inline Eigen::MatrixXd orthonormal_contrasts(int k) {
  if (k < 2) throw InputError("contrasts need at least two levels");
  Eigen::MatrixXd basis(k, k);
  basis.col(0).setOnes();
  for (int j = 1; j < k; ++j) basis.col(j) = Eigen::VectorXd::Unit(k, j - 1);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < j; ++i) basis.col(j) -= basis.col(i).dot(basis.col(j)) * basis.col(i);
    basis.col(j).normalize();
  }
  return basis.rightCols(k - 1);
}

/// Indicator columns for levels 2..k (reference = first level).
inline Eigen::MatrixXd treatment_contrasts(int k) {
  if (k < 2) throw InputError("contrasts need at least two levels");
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, k - 1);
  for (int j = 1; j < k; ++j) c(j, j - 1) = 1.0;
  return c;
}

enum class ContrastKind { Orthonormal, Treatment };

struct TermMeta {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  ContrastKind contrast = ContrastKind::Orthonormal;
  std::vector<std::string> levels;  // categorical
  Eigen::MatrixXd contrasts;        // categorical, levels x columns
  double center = 0.0;              // continuous
  double scale = 1.0;               // continuous
  int first_col = 1;
  int ncols = 1;

  /// Design-row block for a categorical level.
  Eigen::RowVectorXd row_for_level(const std::string& level) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] == level) return contrasts.row(static_cast<Eigen::Index>(i));
    throw InputError("term '" + name + "' has no level '" + level + "'");
  }
  /// Design-row block for a continuous value (original units).
  Eigen::RowVectorXd row_for_value(double x) const {
    Eigen::RowVectorXd r(1);
    r(0) = (x - center) / scale;
    return r;
  }
  /// Block averaged uniformly over levels (or at the mean for continuous).
  Eigen::RowVectorXd average_row() const {
    if (kind == CovariateKind::Continuous) return Eigen::RowVectorXd::Zero(1);
    return contrasts.colwise().mean();
  }
};

struct DesignMatrix {
  Eigen::MatrixXd X;  // column 0 is the intercept
  std::vector<TermMeta> terms;

  int columns() const { return static_cast<int>(X.cols()); }
};

inline DesignMatrix build_design(const Dataset& data, const std::vector<std::string>& terms,
                                 const std::map<std::string, ContrastKind>& contrast_overrides = {}) {
  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<TermMeta> metas;
  int col = 1;
  for (const auto& name : terms) {
    auto it = data.covariate_kinds().find(name);
    if (it == data.covariate_kinds().end()) throw InputError("moderator '" + name + "' is not in the dataset");
    TermMeta t;
    t.name = name;
    t.kind = it->second;
    t.first_col = col;
    if (t.kind == CovariateKind::Categorical) {
      t.levels = data.levels(name);
      if (t.levels.size() < 2)
        throw InputError("categorical moderator '" + name + "' needs at least two observed levels");
      if (auto c = contrast_overrides.find(name); c != contrast_overrides.end()) t.contrast = c->second;
      const int k = static_cast<int>(t.levels.size());
      t.contrasts = t.contrast == ContrastKind::Orthonormal ? orthonormal_contrasts(k) : treatment_contrasts(k);
      t.ncols = k - 1;
    } else {
      double s = 0.0, ss = 0.0;
      for (const auto& r : data.records()) s += std::get<double>(r.covariates.at(name));
      t.center = s / static_cast<double>(n);
      for (const auto& r : data.records()) {
        const double d = std::get<double>(r.covariates.at(name)) - t.center;
        ss += d * d;
      }
      t.scale = std::sqrt(ss / static_cast<double>(n));
      if (!(t.scale > 1e-12 * std::max(1.0, std::abs(t.center))))
        throw InputError("continuous moderator '" + name + "' is constant");
      t.ncols = 1;
    }
    col += t.ncols;
    metas.push_back(std::move(t));
  }

  DesignMatrix d;
  d.X = Eigen::MatrixXd::Zero(n, col);
  d.X.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = data.records()[static_cast<std::size_t>(i)];
    for (const auto& t : metas) {
      const auto& v = rec.covariates.at(t.name);
      const Eigen::RowVectorXd block = t.kind == CovariateKind::Categorical
                                           ? t.row_for_level(std::get<std::string>(v))
                                           : t.row_for_value(std::get<double>(v));
      d.X.block(i, t.first_col, 1, t.ncols) = block;
    }
  }
  d.terms = std::move(metas);
  return d;
}

}  // namespace bma
