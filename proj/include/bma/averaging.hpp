#pragma once

// Ensemble inference from per-model fits: posterior model probabilities,
// inclusion Bayes factors, model-averaged and conditional draws, prediction
// intervals, I^2, estimated marginal means and Savage-Dickey tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "bma/dataset.hpp"
#include "bma/error.hpp"
#include "bma/inference.hpp"
#include "bma/modelspace.hpp"
#include "bma/numerics.hpp"
#include "bma/random.hpp"

namespace bma {

inline constexpr double kInfinityDisplayThreshold = 1e-12;
inline constexpr std::size_t kResampleSize = 20000;

// ---------------------------------------------------------------------------
// Model probabilities and component tests

inline std::vector<double> posterior_model_probs(std::span<const double> prior, std::span<const double> log_marglik) {
  if (prior.size() != log_marglik.size()) throw InputError("prior and marginal likelihood counts differ");
  double total = 0.0;
  for (double p : prior) total += p;
  if (std::abs(total - 1.0) > 1e-9) throw InputError("prior model probabilities must sum to 1");
  std::vector<double> lw(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i) {
    if (!std::isfinite(log_marglik[i])) throw InputError("missing marginal likelihood for model " + std::to_string(i + 1));
    lw[i] = prior[i] > 0.0 ? std::log(prior[i]) + log_marglik[i] : -kInf;
  }
  const double norm = log_sum_exp(lw);
  for (double& w : lw) w = std::exp(w - norm);
  return lw;
}

inline std::vector<double> posterior_model_probs(const std::vector<FitResult>& fits) {
  std::vector<double> prior, lml;
  for (const auto& f : fits) {
    prior.push_back(f.model.prior_prob);
    lml.push_back(f.log_marglik.value);
  }
  return posterior_model_probs(prior, lml);
}

enum class BfDirection { BF10, BF01, LogBF10 };

inline std::string to_string(BfDirection d) {
  switch (d) {
    case BfDirection::BF10: return "BF10";
    case BfDirection::BF01: return "BF01";
    case BfDirection::LogBF10: return "logBF10";
  }
  return "BF10";
}

inline BfDirection parse_bf_direction(const std::string& s) {
  if (s == "BF10") return BfDirection::BF10;
  if (s == "BF01") return BfDirection::BF01;
  if (s == "logBF10") return BfDirection::LogBF10;
  throw InputError("unknown Bayes factor direction '" + s + "' (expected BF10, BF01 or logBF10)");
}

struct ComponentTest {
  std::string component;
  double prior_prob = 0.0;
  double posterior_prob = 0.0;
  double log_bf10 = 0.0;      // NaN when not applicable, +-inf when a side has no mass
  bool applicable = true;     // false when the prior inclusion probability is 0 or 1
  bool infinite = false;      // exclusion posterior mass below the display threshold

  double bf10() const { return std::exp(log_bf10); }
  double bf01() const { return std::exp(-log_bf10); }
  double value(BfDirection d) const {
    switch (d) {
      case BfDirection::BF10: return bf10();
      case BfDirection::BF01: return bf01();
      case BfDirection::LogBF10: return log_bf10;
    }
    return bf10();
  }
  bool unstable() const { return applicable && log_bf10 > std::log(100.0); }
};

/// Exclusion posterior mass below which a BF10 is displayed as infinite: the
/// resolution of `draws` posterior model-indicator samples, never below
/// kInfinityDisplayThreshold.
inline double display_threshold(std::size_t draws) {
  return draws > 0 ? std::max(kInfinityDisplayThreshold, 1.0 / static_cast<double>(draws)) : kInfinityDisplayThreshold;
}

/// Inclusion test from per-model log prior + log marginal likelihood, computed
/// in log space so that extreme Bayes factors keep their numeric value.
inline ComponentTest inclusion_test(const std::string& name, std::span<const double> prior,
                                    std::span<const double> log_marglik, const std::vector<bool>& included,
                                    double display_threshold = kInfinityDisplayThreshold) {
  ComponentTest t;
  t.component = name;
  std::vector<double> in, out;
  double p_in = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const double lw = prior[i] > 0.0 ? std::log(prior[i]) + log_marglik[i] : -kInf;
    (included[i] ? in : out).push_back(lw);
    if (included[i]) p_in += prior[i];
  }
  t.prior_prob = p_in;
  if (!(p_in > 1e-15 && p_in < 1.0 - 1e-15)) {
    t.applicable = false;
    t.log_bf10 = kNaN;
    t.posterior_prob = p_in >= 0.5 ? 1.0 : 0.0;
    return t;
  }
  const double l_in = log_sum_exp(in), l_out = log_sum_exp(out);
  const double l_all = log_add_exp(l_in, l_out);
  t.posterior_prob = std::exp(l_in - l_all);
  const double post_out = std::exp(l_out - l_all);
  t.log_bf10 = (l_in - l_out) - (std::log(p_in) - std::log1p(-p_in));
  t.infinite = post_out < display_threshold;
  return t;
}

/// Inclusion test from posterior model probabilities.
inline ComponentTest inclusion_bf(std::span<const double> probs, const Ensemble& e, const std::string& component,
                                  double display_threshold = kInfinityDisplayThreshold) {
  const auto& c = e.component(component);
  ComponentTest t;
  t.component = component;
  double prior_in = 0.0, post_in = 0.0, post_out = 0.0;
  for (std::size_t i = 0; i < e.models.size(); ++i) {
    if (c.included_in(e.models[i])) {
      prior_in += e.models[i].prior_prob;
      post_in += probs[i];
    } else {
      post_out += probs[i];
    }
  }
  t.prior_prob = prior_in;
  t.posterior_prob = post_in;
  if (!(prior_in > 1e-15 && prior_in < 1.0 - 1e-15)) {
    t.applicable = false;
    t.log_bf10 = kNaN;
    return t;
  }
  t.log_bf10 = std::log(post_in) - std::log(post_out) - (std::log(prior_in) - std::log1p(-prior_in));
  t.infinite = post_out < display_threshold;
  return t;
}

inline ComponentTest inclusion_bf(const std::vector<FitResult>& fits, const Ensemble& e, const std::string& component) {
  const auto& c = e.component(component);
  std::vector<double> prior, lml;
  std::vector<bool> in;
  std::size_t draws = 0;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    prior.push_back(e.models[i].prior_prob);
    lml.push_back(fits[i].log_marglik.value);
    in.push_back(c.included_in(e.models[i]));
    draws = std::max(draws, fits[i].draws.chains() * fits[i].draws.iterations());
  }
  return inclusion_test(component, prior, lml, in, display_threshold(draws));
}

// ---------------------------------------------------------------------------
// Resampling across models

struct DrawRef {
  std::uint32_t model;
  std::uint32_t draw;  // chain-major index into the model's pooled draws
};

inline std::size_t pooled_size(const FitResult& f) { return f.draws.chains() * f.draws.iterations(); }

/// Stratified (systematic) resample of `size` draws with model shares given by
/// `weights`. A single model with positive weight contributes its draws
/// unchanged.
inline std::vector<DrawRef> resample_index(const std::vector<FitResult>& fits, std::span<const double> weights,
                                           std::uint64_t seed, std::size_t size = kResampleSize) {
  std::vector<DrawRef> out;
  std::size_t positive = 0, only = 0;
  double total = 0.0;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    if (weights[m] > 0.0) {
      ++positive;
      only = m;
    }
    total += weights[m];
  }
  if (positive == 0 || !(total > 0.0)) throw InputError("no posterior mass to resample from");
  if (positive == 1) {
    for (std::size_t d = 0; d < pooled_size(fits[only]); ++d)
      out.push_back({static_cast<std::uint32_t>(only), static_cast<std::uint32_t>(d)});
    return out;
  }
  Rng rng(seed);
  const double u = rng.uniform();
  std::vector<std::size_t> counts(weights.size(), 0);
  double cum = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double pos = (static_cast<double>(i) + u) / static_cast<double>(size) * total;
    while (m + 1 < weights.size() && pos >= cum + weights[m]) cum += weights[m++];
    ++counts[m];
  }
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) continue;
    const std::size_t n = pooled_size(fits[k]);
    const double v = rng.uniform();
    for (std::size_t j = 0; j < counts[k]; ++j) {
      const auto d = static_cast<std::size_t>((static_cast<double>(j) + v) * static_cast<double>(n) /
                                              static_cast<double>(counts[k]));
      out.push_back({static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(std::min(d, n - 1))});
    }
  }
  return out;
}

/// Value a model without `parameter` contributes: 0 for coefficients and
/// bias slopes, nothing otherwise.
inline std::optional<double> null_value(const std::string& parameter) {
  if (parameter == "PET" || parameter == "PEESE" || parameter.rfind("beta:", 0) == 0 || parameter == "mu" ||
      parameter == "tau")
    return 0.0;
  return std::nullopt;
}

inline double draw_value(const FitResult& f, const std::string& parameter, std::size_t flat) {
  const auto& ch = f.draws.at(parameter);
  const std::size_t n = f.draws.iterations();
  return ch[flat / n][flat % n];
}

inline std::vector<double> gather(const std::vector<FitResult>& fits, std::span<const DrawRef> index,
                                  const std::string& parameter) {
  std::vector<double> out;
  out.reserve(index.size());
  for (const auto& r : index) {
    const auto& f = fits[r.model];
    if (f.draws.contains(parameter)) {
      out.push_back(draw_value(f, parameter, r.draw));
    } else if (const auto v = null_value(parameter)) {
      out.push_back(*v);
    } else {
      throw InputError("parameter '" + parameter + "' is not defined in model [" + f.model.label() + "]");
    }
  }
  return out;
}

enum class AverageMode { Averaged, Conditional };

/// Weights for the requested mode: probs, or probs renormalized over the
/// models flagged in `included`.
inline std::vector<double> mode_weights(std::span<const double> probs, AverageMode mode,
                                        const std::vector<bool>& included, const std::string& what = "component") {
  std::vector<double> w(probs.begin(), probs.end());
  if (mode == AverageMode::Averaged) return w;
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!included[i]) w[i] = 0.0;
    total += w[i];
  }
  if (!(total > 0.0)) throw InputError("no posterior mass on models including " + what);
  for (double& x : w) x /= total;
  return w;
}

inline std::vector<double> averaged_draws(const std::vector<FitResult>& fits, std::span<const double> probs,
                                          const std::string& parameter, AverageMode mode,
                                          const std::vector<bool>& included, std::uint64_t seed) {
  const auto w = mode_weights(probs, mode, included, "'" + parameter + "'");
  const auto idx = resample_index(fits, w, seed);
  return gather(fits, idx, parameter);
}

// ---------------------------------------------------------------------------
// Derived quantities

/// Draws of mu + tau * Z for a new study, with fresh Z per draw.
inline std::vector<double> predictive_draws(std::span<const double> mu, std::span<const double> tau, std::uint64_t seed) {
  if (mu.size() != tau.size()) throw InputError("prediction needs paired effect and heterogeneity draws");
  Rng rng(seed);
  std::vector<double> out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] + tau[i] * rng.normal();
  return out;
}

inline std::pair<double, double> prediction_interval(std::span<const double> mu, std::span<const double> tau,
                                                     double level, std::uint64_t seed) {
  auto d = predictive_draws(mu, tau, seed);
  std::sort(d.begin(), d.end());
  return {sorted_quantile(d, (1.0 - level) / 2.0), sorted_quantile(d, (1.0 + level) / 2.0)};
}

/// Higgins-Thompson typical within-study variance.
inline double typical_variance(std::span<const double> se) {
  double sw = 0.0, sw2 = 0.0;
  for (double s : se) {
    const double w = 1.0 / (s * s);
    sw += w;
    sw2 += w * w;
  }
  const double k = static_cast<double>(se.size());
  return (k - 1.0) * sw / (sw * sw - sw2);
}

/// I^2 in percent for each tau draw.
inline std::vector<double> i_squared(std::span<const double> tau, std::span<const double> se) {
  const double s2 = se.size() > 1 ? typical_variance(se) : se.front() * se.front();
  std::vector<double> out(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double t2 = tau[i] * tau[i];
    out[i] = 100.0 * t2 / (t2 + s2);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernel density and Savage-Dickey

/// Unbiased cross-validation bandwidth for a Gaussian kernel on binned pair
/// distances (1000 bins), minimized over [0.1 hmax, hmax] with
/// hmax = 1.144 sd n^(-1/5).
inline double ucv_bandwidth(std::span<const double> x, int nb = 1000) {
  const std::size_t n = x.size();
  if (n < 2) throw InputError("bandwidth selection needs at least two draws");
  const double sd = stddev(x);
  if (!(sd > 0.0)) throw InputError("bandwidth selection needs non-constant draws");
  const double hmax = 1.144 * sd * std::pow(static_cast<double>(n), -0.2);
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double dd = (*mx - *mn) * 1.01 / nb;
  std::vector<double> bins(static_cast<std::size_t>(nb), 0.0);
  for (double v : x) {
    auto b = static_cast<std::size_t>((v - *mn) / dd);
    bins[std::min(b, bins.size() - 1)] += 1.0;
  }
  std::vector<double> cnt(static_cast<std::size_t>(nb), 0.0);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i] == 0.0) continue;
    cnt[0] += bins[i] * (bins[i] - 1.0) / 2.0;
    for (std::size_t j = i + 1; j < bins.size(); ++j) cnt[j - i] += bins[i] * bins[j];
  }
  const double dn = static_cast<double>(n);
  auto ucv = [&](double h) {
    double sum = 0.0;
    for (std::size_t i = 0; i < cnt.size(); ++i) {
      double delta = static_cast<double>(i) * dd / h;
      delta *= delta;
      if (delta >= 1000.0) break;
      sum += (std::exp(-delta / 4.0) - std::sqrt(8.0) * std::exp(-delta / 2.0)) * cnt[i];
    }
    return (0.5 + sum / dn) / (dn * h * std::sqrt(std::numbers::pi));
  };
  const auto r = boost::math::tools::brent_find_minima(ucv, 0.1 * hmax, hmax, 20);
  return r.first;
}

/// Gaussian kernel density with reflection at finite support bounds.
struct KernelDensity {
  std::vector<double> x;
  double h = 1.0;
  double lower = -kInf;
  double upper = kInf;

  double operator()(double at) const {
    if (at < lower || at > upper) return 0.0;
    double s = 0.0;
    for (double v : x) {
      s += std::exp(-0.5 * std::pow((at - v) / h, 2));
      if (std::isfinite(lower)) s += std::exp(-0.5 * std::pow((at - (2.0 * lower - v)) / h, 2));
      if (std::isfinite(upper)) s += std::exp(-0.5 * std::pow((at - (2.0 * upper - v)) / h, 2));
    }
    return s / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  }
};

inline KernelDensity kernel_density(std::vector<double> x, double lower = -kInf, double upper = kInf) {
  KernelDensity k;
  k.h = ucv_bandwidth(x);
  k.x = std::move(x);
  k.lower = lower;
  k.upper = upper;
  return k;
}

struct SavageDickey {
  double bf10 = 1.0;
  double log_bf10_mcse = 0.0;
  double prior_density = 0.0;
  double posterior_density = 0.0;
};

/// BF10 = prior density / posterior density at `at`. The posterior density
/// MCSE comes from 10 contiguous batches evaluated with the full-sample
/// bandwidth.
inline SavageDickey savage_dickey(std::vector<double> prior_draws, std::vector<double> posterior_draws, double at = 0.0,
                                  double lower = -kInf, double upper = kInf) {
  SavageDickey sd;
  const auto prior = kernel_density(std::move(prior_draws), lower, upper);
  const auto post = kernel_density(posterior_draws, lower, upper);
  sd.prior_density = prior(at);
  sd.posterior_density = post(at);
  sd.bf10 = sd.prior_density / sd.posterior_density;
  constexpr std::size_t kBatches = 10;
  std::vector<double> logs;
  for (std::size_t b = 0; b < kBatches; ++b) {
    KernelDensity part = post;
    const std::size_t lo = b * posterior_draws.size() / kBatches, hi = (b + 1) * posterior_draws.size() / kBatches;
    part.x.assign(posterior_draws.begin() + static_cast<std::ptrdiff_t>(lo),
                  posterior_draws.begin() + static_cast<std::ptrdiff_t>(hi));
    logs.push_back(std::log(std::max(part(at), 1e-300)));
  }
  sd.log_bf10_mcse = stddev(logs) / std::sqrt(static_cast<double>(kBatches));
  return sd;
}

// ---------------------------------------------------------------------------
// Estimated marginal means

struct EmmLevel {
  std::string level;
  double value = kNaN;  // covariate value for continuous terms
  std::vector<double> draws;
  std::optional<SavageDickey> test;
};

struct EmmResult {
  std::string term;
  std::vector<EmmLevel> levels;
};

namespace detail {

/// Coefficient of each design column (after the intercept) in the EMM of
/// `term` at design row block `row`; other terms enter at their average row.
inline std::vector<double> emm_weights(const DesignMatrix& design, const std::string& term, const Eigen::RowVectorXd& row) {
  std::vector<double> w(static_cast<std::size_t>(std::max(0, design.columns() - 1)), 0.0);
  for (const auto& t : design.terms) {
    const Eigen::RowVectorXd r = t.name == term ? row : t.average_row();
    for (int k = 0; k < t.ncols; ++k) w[static_cast<std::size_t>(t.first_col + k - 1)] = r(k);
  }
  return w;
}

}  // namespace detail

/// EMMs of `term` ("intercept" gives the adjusted effect) from the
/// model-averaged posterior. With `test`, each level gets a Savage-Dickey
/// BF10 against 0 computed on the continuous parts of the model-averaged
/// prior and posterior; an exact-zero atom (models without the effect and
/// without the contributing terms) is excluded from both sides.
inline EmmResult estimated_marginal_means(const Ensemble& ensemble, const std::vector<FitResult>& fits,
                                          std::span<const double> probs, const LikelihoodContext& ctx,
                                          const std::string& term, bool test, std::uint64_t seed) {
  EmmResult res;
  res.term = term;
  struct Level {
    std::string name;
    double value;
    Eigen::RowVectorXd row;
  };
  std::vector<Level> levels;
  const DesignMatrix empty{};
  const DesignMatrix& design = ctx.design() ? *ctx.design() : empty;
  if (term == "intercept") {
    levels.push_back({"intercept", kNaN, Eigen::RowVectorXd()});
  } else {
    const auto it = std::find_if(design.terms.begin(), design.terms.end(), [&](const TermMeta& t) { return t.name == term; });
    if (it == design.terms.end()) throw InputError("term '" + term + "' is not a moderator of the model");
    if (it->kind == CovariateKind::Categorical) {
      for (const auto& l : it->levels) levels.push_back({l, kNaN, it->row_for_level(l)});
    } else {
      for (double k : {-1.0, 0.0, 1.0}) {
        const double v = it->center + k * it->scale;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        levels.push_back({buf, v, it->row_for_value(v)});
      }
    }
  }
  const auto coef = design.columns() > 1 ? coefficient_names(design) : std::vector<std::string>{};
  const auto idx = resample_index(fits, probs, stream_seed(seed, 1));
  const auto mu = gather(fits, idx, "mu");
  std::vector<std::vector<double>> beta;
  for (const auto& c : coef) beta.push_back(gather(fits, idx, c));

  for (const auto& lv : levels) {
    const auto w = term == "intercept" ? detail::emm_weights(design, "", Eigen::RowVectorXd())
                                       : detail::emm_weights(design, term, lv.row);
    EmmLevel out;
    out.level = lv.name;
    out.value = lv.value;
    out.draws = mu;
    for (std::size_t c = 0; c < beta.size(); ++c)
      if (w[c] != 0.0)
        for (std::size_t i = 0; i < mu.size(); ++i) out.draws[i] += w[c] * beta[c][i];

    if (test) {
      // model-averaged prior of the EMM by sampling models by prior probability
      std::vector<double> prior_w;
      for (const auto& m : ensemble.models) prior_w.push_back(m.prior_prob);
      Rng rng(stream_seed(seed, 2));
      std::vector<double> prior_draws, post_draws;
      std::vector<double> cum(prior_w.size());
      double acc = 0.0;
      for (std::size_t m = 0; m < prior_w.size(); ++m) cum[m] = acc += prior_w[m];
      for (std::size_t i = 0; i < kResampleSize; ++i) {
        const double u = rng.uniform() * acc;
        const auto m = static_cast<std::size_t>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        const auto& pr = ensemble.models[std::min(m, cum.size() - 1)].priors;
        bool atom = pr.mu.is_point();
        double v = pr.mu.sample(rng);
        for (const auto& t : design.terms) {
          const auto ti = static_cast<std::size_t>(&t - design.terms.data());
          for (int k = 0; k < t.ncols; ++k) {
            const double wk = w[static_cast<std::size_t>(t.first_col + k - 1)];
            if (wk == 0.0) continue;
            if (!pr.beta[ti].is_point()) atom = false;
            v += wk * pr.beta[ti].sample(rng);
          }
        }
        if (!atom) prior_draws.push_back(v);
      }
      // posterior draws from models whose EMM is not fixed
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& pr = ensemble.models[idx[i].model].priors;
        bool atom = pr.mu.is_point();
        for (const auto& t : design.terms) {
          const auto ti = static_cast<std::size_t>(&t - design.terms.data());
          for (int k = 0; k < t.ncols; ++k)
            if (w[static_cast<std::size_t>(t.first_col + k - 1)] != 0.0 && !pr.beta[ti].is_point()) atom = false;
        }
        if (!atom) post_draws.push_back(out.draws[i]);
      }
      if (prior_draws.size() > 10 && post_draws.size() > 10) out.test = savage_dickey(prior_draws, post_draws, 0.0);
    }
    res.levels.push_back(std::move(out));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Weight function on a common p-value grid

/// One-sided p-value bin edges shared by every selection model in the
/// ensemble: one-sided cutpoints as given, two-sided cutpoint c as c/2 and
/// 1 - c/2.
inline std::vector<double> common_weight_grid(const Ensemble& e) {
  std::set<double> cuts;
  for (const auto& m : e.models) {
    if (m.bias.kind != BiasVariant::Kind::Selection) continue;
    for (double c : m.bias.weights.cutpoints) {
      if (m.bias.weights.sided == Sidedness::OneSided) {
        cuts.insert(c);
      } else {
        cuts.insert(c / 2.0);
        cuts.insert(1.0 - c / 2.0);
      }
    }
  }
  std::vector<double> edges{0.0};
  edges.insert(edges.end(), cuts.begin(), cuts.end());
  edges.push_back(1.0);
  return edges;
}

/// omega at one-sided p-value p for a draw of model f (1 without selection).
inline double weight_at(const FitResult& f, std::size_t flat, double p) {
  if (f.model.bias.kind != BiasVariant::Kind::Selection) return 1.0;
  const auto& w = f.model.bias.weights;
  const double q = w.sided == Sidedness::OneSided ? p : 2.0 * std::min(p, 1.0 - p);
  std::size_t b = 0;
  while (b < w.cutpoints.size() && q >= w.cutpoints[b]) ++b;
  return draw_value(f, "omega[" + std::to_string(b + 1) + "]", flat);
}

// ---------------------------------------------------------------------------
// Summary

struct Estimate {
  std::string parameter;
  double mean = kNaN, median = kNaN, lower = kNaN, upper = kNaN;
  std::optional<double> pi_lower, pi_upper;
};

inline Estimate summarize_draws(const std::string& name, std::vector<double> draws, double level = 0.95) {
  Estimate e;
  e.parameter = name;
  if (draws.empty()) return e;
  e.mean = mean(draws);
  std::sort(draws.begin(), draws.end());
  e.median = sorted_quantile(draws, 0.5);
  e.lower = sorted_quantile(draws, (1.0 - level) / 2.0);
  e.upper = sorted_quantile(draws, (1.0 + level) / 2.0);
  return e;
}

struct ModelRow {
  std::string label;
  double prior_prob = 0.0;
  double posterior_prob = 0.0;
  double log_marglik = 0.0;
  double log_marglik_mcse = 0.0;
  std::string method;
  double inclusion_bf = 1.0;  // posterior odds / prior odds of this model
  double min_ess = kInf;
  double max_rhat = 1.0;
};

struct EmmRow {
  std::string term;
  std::string level;
  Estimate estimate;
  std::optional<double> bf10;
};

struct EnsembleSummary {
  std::string measure;
  std::string transform;
  std::size_t studies = 0;
  double level = 0.95;
  std::vector<ComponentTest> tests;
  std::vector<Estimate> averaged;
  std::vector<Estimate> conditional;
  std::vector<Estimate> weight_function_averaged;
  std::vector<Estimate> weight_function_conditional;
  std::vector<EmmRow> emms;
  std::vector<ModelRow> models;
  std::vector<std::string> footnotes;
  std::vector<std::string> warnings;
  bool has_moderators = false;
  bool has_bias = false;
  bool has_pet_peese = false;

  const ComponentTest& test(const std::string& component) const {
    for (const auto& t : tests)
      if (t.component == component) return t;
    throw InputError("no test for component '" + component + "'");
  }
  const Estimate& estimate(const std::string& parameter, bool conditional_table = false) const {
    for (const auto& e : conditional_table ? conditional : averaged)
      if (e.parameter == parameter) return e;
    throw InputError("no estimate for '" + parameter + "'");
  }
};

struct SummaryOptions {
  Transform transform = Transform::Identity;
  double level = 0.95;
  std::uint64_t seed = 1;
  std::vector<std::string> emm_terms;
  bool emm_test = false;
};

namespace detail {

inline std::string bf_band(double bf) {
  const double b = bf >= 1.0 ? bf : 1.0 / bf;
  const char* s = b < 3.0 ? "weak" : b < 10.0 ? "moderate" : b < 100.0 ? "strong" : "extreme";
  return std::string(s) + (bf >= 1.0 ? " evidence for" : " evidence against");
}

}  // namespace detail

inline std::string evidence_label(double bf10) { return detail::bf_band(bf10); }

inline EnsembleSummary summarize(const Ensemble& ensemble, const std::vector<FitResult>& fits,
                                 const LikelihoodContext& ctx, const SummaryOptions& opt) {
  if (fits.size() != ensemble.models.size()) throw InputError("fits do not match the ensemble");
  EnsembleSummary s;
  s.measure = to_string(ctx.data().measure());
  s.transform = to_string(opt.transform);
  s.studies = ctx.size();
  s.level = opt.level;
  s.has_moderators = !ensemble.terms.empty();
  const auto probs = posterior_model_probs(fits);

  for (const auto& c : ensemble.components) {
    s.tests.push_back(inclusion_bf(fits, ensemble, c.name));
    if (c.kind == Component::Kind::Bias) s.has_bias = true;
  }
  for (const auto& t : s.tests)
    if (t.unstable() && s.footnotes.empty())
      s.footnotes.push_back(
          "Bayes factors above 100 are sensitive to Monte Carlo error and to the priors; read them as extreme "
          "evidence rather than as precise values.");

  for (std::size_t i = 0; i < fits.size(); ++i) {
    ModelRow r;
    r.label = fits[i].model.label();
    r.prior_prob = fits[i].model.prior_prob;
    r.posterior_prob = probs[i];
    r.log_marglik = fits[i].log_marglik.value;
    r.log_marglik_mcse = fits[i].log_marglik.mcse;
    r.method = to_string(fits[i].log_marglik.method);
    const double prior_odds = r.prior_prob / (1.0 - r.prior_prob);
    r.inclusion_bf = r.prior_prob < 1.0 ? (probs[i] / (1.0 - probs[i])) / prior_odds : 1.0;
    r.min_ess = fits[i].diagnostics.min_ess();
    r.max_rhat = fits[i].diagnostics.max_rhat();
    s.models.push_back(r);
    for (const auto& w : fits[i].warnings) s.warnings.push_back(w);
  }

  const auto se = ctx.se();
  auto includes = [&](auto pred) {
    std::vector<bool> v;
    for (const auto& m : ensemble.models) v.push_back(pred(m));
    return v;
  };
  const auto with_effect = includes([](const ModelSpec& m) { return m.has_effect(); });
  const auto with_het = includes([](const ModelSpec& m) { return m.has_heterogeneity(); });
  const bool any_pet = std::any_of(fits.begin(), fits.end(), [](const FitResult& f) { return f.draws.contains("PET"); });
  const bool any_peese = std::any_of(fits.begin(), fits.end(), [](const FitResult& f) { return f.draws.contains("PEESE"); });
  s.has_pet_peese = any_pet || any_peese;
  const auto coef = ctx.design() ? coefficient_names(*ctx.design()) : std::vector<std::string>{};

  auto transformed = [&](std::vector<double> d) {
    for (double& x : d) x = apply_transform(opt.transform, x);
    return d;
  };

  auto block = [&](AverageMode mode, std::vector<Estimate>& out, std::uint64_t key) {
    auto index_for = [&](const std::vector<bool>& inc, const std::string& what) {
      return resample_index(fits, mode_weights(probs, mode, inc, what), stream_seed(opt.seed, key, out.size()));
    };
    {
      const auto idx = index_for(with_effect, "the effect");
      const auto mu = gather(fits, idx, "mu");
      const auto tau = gather(fits, idx, "tau");
      auto e = summarize_draws("mu", transformed(mu), opt.level);
      auto pred = transformed(predictive_draws(mu, tau, stream_seed(opt.seed, key, 99)));
      std::sort(pred.begin(), pred.end());
      e.pi_lower = sorted_quantile(pred, (1.0 - opt.level) / 2.0);
      e.pi_upper = sorted_quantile(pred, (1.0 + opt.level) / 2.0);
      out.push_back(e);
    }
    {
      const auto idx = index_for(with_het, "heterogeneity");
      const auto tau = gather(fits, idx, "tau");
      out.push_back(summarize_draws("tau", tau, opt.level));
      out.push_back(summarize_draws("I2", i_squared(tau, se), opt.level));
    }
    if (ctx.clustered()) {
      const auto idx = resample_index(fits, mode_weights(probs, AverageMode::Conditional, with_het, "heterogeneity"),
                                      stream_seed(opt.seed, key, 50));
      out.push_back(summarize_draws("rho", gather(fits, idx, "rho"), opt.level));
    }
    for (std::size_t t = 0; t < ensemble.terms.size(); ++t) {
      const auto inc = includes([&](const ModelSpec& m) { return m.moderator_included[t]; });
      const auto idx = index_for(inc, "'" + ensemble.terms[t] + "'");
      const auto& meta = ctx.design()->terms[t];
      for (int k = 0; k < meta.ncols; ++k) {
        const auto& name = coef[static_cast<std::size_t>(meta.first_col + k - 1)];
        out.push_back(summarize_draws(name, gather(fits, idx, name), opt.level));
      }
    }
    for (const std::string p : {"PET", "PEESE"}) {
      if ((p == "PET" && !any_pet) || (p == "PEESE" && !any_peese)) continue;
      const auto inc = includes([&](const ModelSpec& m) {
        return m.bias.kind == (p == "PET" ? BiasVariant::Kind::PET : BiasVariant::Kind::PEESE);
      });
      const auto idx = index_for(inc, p + " models");
      out.push_back(summarize_draws(p, gather(fits, idx, p), opt.level));
    }
  };
  block(AverageMode::Averaged, s.averaged, 11);
  block(AverageMode::Conditional, s.conditional, 12);

  const bool any_selection = std::any_of(ensemble.models.begin(), ensemble.models.end(), [](const ModelSpec& m) {
    return m.bias.kind == BiasVariant::Kind::Selection;
  });
  if (any_selection) {
    const auto edges = common_weight_grid(ensemble);
    const auto sel = includes([](const ModelSpec& m) { return m.bias.kind == BiasVariant::Kind::Selection; });
    for (auto mode : {AverageMode::Averaged, AverageMode::Conditional}) {
      const auto idx = resample_index(fits, mode_weights(probs, mode, sel, "selection models"),
                                      stream_seed(opt.seed, 13, mode == AverageMode::Averaged ? 0 : 1));
      auto& out = mode == AverageMode::Averaged ? s.weight_function_averaged : s.weight_function_conditional;
      for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
        const double mid = 0.5 * (edges[b] + edges[b + 1]);
        std::vector<double> d;
        d.reserve(idx.size());
        for (const auto& r : idx) d.push_back(weight_at(fits[r.model], r.draw, mid));
        char name[80];
        std::snprintf(name, sizeof name, "omega[%.3f, %.3f]", edges[b], edges[b + 1]);
        out.push_back(summarize_draws(name, d, opt.level));
      }
    }
  }

  for (const auto& term : opt.emm_terms) {
    const auto emm = estimated_marginal_means(ensemble, fits, probs, ctx, term, opt.emm_test, stream_seed(opt.seed, 14));
    for (const auto& lv : emm.levels) {
      EmmRow row;
      row.term = term;
      row.level = lv.level;
      row.estimate = summarize_draws(lv.level, transformed(lv.draws), opt.level);
      if (lv.test) row.bf10 = lv.test->bf10;
      s.emms.push_back(row);
    }
  }

  if (!s.warnings.empty())
    s.footnotes.push_back("Some models show convergence problems (see warnings); consider more MCMC iterations.");
  return s;
}

}  // namespace bma
