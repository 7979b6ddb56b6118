#pragma once

// Per-model posterior sampling (adaptive random-walk Metropolis-within-Gibbs),
// log marginal likelihoods (tensor quadrature or warp-III bridge sampling),
// convergence diagnostics and the autofit loop.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "bma/diagnostics.hpp"
#include "bma/error.hpp"
#include "bma/likelihood.hpp"
#include "bma/modelspace.hpp"
#include "bma/numerics.hpp"
#include "bma/priors.hpp"
#include "bma/quadrature.hpp"
#include "bma/random.hpp"

namespace bma {

enum class MarglikMethod { Auto, Quadrature, Bridge };

inline std::string to_string(MarglikMethod m) {
  switch (m) {
    case MarglikMethod::Auto: return "auto";
    case MarglikMethod::Quadrature: return "quadrature";
    case MarglikMethod::Bridge: return "bridge";
  }
  return "auto";
}

inline MarglikMethod parse_marglik_method(const std::string& s) {
  if (s == "auto") return MarglikMethod::Auto;
  if (s == "quadrature") return MarglikMethod::Quadrature;
  if (s == "bridge") return MarglikMethod::Bridge;
  throw InputError("unknown marginal likelihood method '" + s + "' (expected auto, quadrature or bridge)");
}

struct AutofitSettings {
  double target_ess = 500.0;
  double max_time = 300.0;  // seconds of wall clock
};

struct McmcSettings {
  int chains = 4;
  int adaptation = 1000;
  int burnin = 2000;
  int sampling = 5000;
  std::uint64_t seed = 1;
  std::optional<AutofitSettings> autofit;
  MarglikMethod marglik = MarglikMethod::Auto;

  void validate() const {
    if (chains < 2) throw InputError("mcmc.chains must be at least 2");
    if (adaptation < 1 || burnin < 1 || sampling < 1)
      throw InputError("mcmc adaptation, burnin and sampling iterations must be positive");
    if (autofit) {
      if (!(autofit->target_ess > 0.0)) throw InputError("autofit target ESS must be positive");
      if (!(autofit->max_time >= 0.0)) throw InputError("autofit max_time must be non-negative");
    }
  }

  double target_ess() const { return autofit ? autofit->target_ess : 500.0; }
};

/// Post-burnin draws of the reported parameters, values[p][chain][iteration].
struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<Chains> values;

  std::size_t chains() const { return values.empty() ? 0 : values.front().size(); }
  std::size_t iterations() const { return chains() == 0 ? 0 : values.front().front().size(); }

  bool contains(const std::string& name) const {
    return std::find(names.begin(), names.end(), name) != names.end();
  }

  const Chains& at(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InputError("no draws for parameter '" + name + "'");
    return values[static_cast<std::size_t>(it - names.begin())];
  }

  std::vector<double> pooled(const std::string& name) const {
    std::vector<double> out;
    for (const auto& c : at(name)) out.insert(out.end(), c.begin(), c.end());
    return out;
  }
};

struct LogMarginal {
  double value = 0.0;
  double mcse = 0.0;
  MarglikMethod method = MarglikMethod::Quadrature;
};

struct Diagnostics {
  std::vector<std::pair<std::string, ParameterDiagnostics>> parameters;

  double min_ess() const {
    double m = kInf;
    for (const auto& [n, d] : parameters) m = std::min(m, d.ess);
    return m;
  }
  double max_rhat() const {
    double m = 1.0;
    for (const auto& [n, d] : parameters) m = std::max(m, d.rhat);
    return m;
  }
};

struct FitResult {
  ModelSpec model;
  PosteriorDraws draws;
  std::vector<std::string> free_names;
  std::vector<Chains> unconstrained;  // per free parameter, as sampled
  LogMarginal log_marglik;
  Diagnostics diagnostics;
  std::vector<std::string> warnings;
  McmcSettings settings;
  std::uint64_t key = 0;
};

/// Column names of the meta-regression coefficients.
inline std::vector<std::string> coefficient_names(const DesignMatrix& design) {
  std::vector<std::string> out;
  for (const auto& t : design.terms) {
    if (t.ncols == 1) {
      out.push_back("beta:" + t.name);
    } else {
      for (int k = 0; k < t.ncols; ++k) out.push_back("beta:" + t.name + "[" + std::to_string(k + 1) + "]");
    }
  }
  return out;
}

/// The posterior of one model in terms of its free parameters. Natural values
/// live on the parameter's support; unconstrained values are the sampler's
/// coordinates (identity, shifted log or scaled logit per support).
class ModelPosterior {
 public:
  enum class Role { Mu, Tau, Rho, Beta, Stick, Pet, Peese };

  struct Free {
    std::string name;
    Role role;
    std::size_t index = 0;  // beta column (after the intercept) or stick index
    PriorDistribution prior = PriorDistribution::point(0.0);
    double a = 1.0, b = 1.0;  // Beta prior of a stick fraction
    double lo = -kInf, hi = kInf;
  };

  ModelPosterior(ModelSpec model, const LikelihoodContext& ctx) : model_(std::move(model)), ctx_(&ctx) {
    auto add = [&](std::string name, Role role, const PriorDistribution& prior, std::size_t index = 0) {
      Free f{std::move(name), role, index, prior};
      std::tie(f.lo, f.hi) = prior.support();
      free_.push_back(std::move(f));
    };
    const auto& pr = model_.priors;
    if (pr.mu.is_point()) base_.mu = pr.mu.point_value();
    else add("mu", Role::Mu, pr.mu);
    if (pr.tau.is_point()) base_.tau = pr.tau.point_value();
    else add("tau", Role::Tau, pr.tau);
    rho_free_ = ctx.clustered() && !(pr.tau.is_point() && pr.tau.point_value() == 0.0);
    if (rho_free_) {
      if (pr.rho.is_point()) base_.rho = pr.rho.point_value();
      else add("rho", Role::Rho, pr.rho);
    }

    const int ncoef = ctx.coefficient_count();
    base_.beta.assign(static_cast<std::size_t>(ncoef), 0.0);
    if (!model_.moderator_included.empty()) {
      if (!ctx.design()) throw InputError("model has moderators but the context has no design matrix");
      const auto& terms = ctx.design()->terms;
      if (terms.size() != model_.moderator_included.size() || pr.beta.size() != terms.size())
        throw InputError("model moderator terms do not match the design matrix");
      coef_names_ = coefficient_names(*ctx.design());
      for (std::size_t t = 0; t < terms.size(); ++t)
        for (int k = 0; k < terms[t].ncols; ++k) {
          const auto col = static_cast<std::size_t>(terms[t].first_col + k - 1);
          if (pr.beta[t].is_point()) base_.beta[col] = pr.beta[t].point_value();
          else add(coef_names_[col], Role::Beta, pr.beta[t], col);
        }
    } else if (ctx.design()) {
      coef_names_ = coefficient_names(*ctx.design());
    }

    const auto& bias = model_.bias;
    if (bias.kind == BiasVariant::Kind::Selection) {
      const auto& w = bias.weights;
      w.validate();
      base_.omega.assign(w.bins(), 1.0);
      for (std::size_t k = 0; k + 1 < w.bins(); ++k) {
        Free f{"stick[" + std::to_string(k + 1) + "]", Role::Stick, k};
        f.a = w.alphas[k];
        f.b = 0.0;
        for (std::size_t l = k + 1; l < w.bins(); ++l) f.b += w.alphas[l];
        f.lo = 0.0;
        f.hi = 1.0;
        free_.push_back(std::move(f));
      }
    } else if (bias.kind == BiasVariant::Kind::PET) {
      if (bias.slope.is_point()) base_.pet = bias.slope.point_value();
      else add("PET", Role::Pet, bias.slope);
    } else if (bias.kind == BiasVariant::Kind::PEESE) {
      if (bias.slope.is_point()) base_.peese = bias.slope.point_value();
      else add("PEESE", Role::Peese, bias.slope);
    }

    reported_ = {"mu", "tau"};
    if (rho_free_) reported_.push_back("rho");
    for (const auto& n : coef_names_) reported_.push_back(n);
    if (bias.kind == BiasVariant::Kind::Selection)
      for (std::size_t j = 0; j < bias.weights.bins(); ++j) reported_.push_back("omega[" + std::to_string(j + 1) + "]");
    if (bias.kind == BiasVariant::Kind::PET) reported_.push_back("PET");
    if (bias.kind == BiasVariant::Kind::PEESE) reported_.push_back("PEESE");
  }

  const ModelSpec& model() const { return model_; }
  const LikelihoodContext& context() const { return *ctx_; }
  int dim() const { return static_cast<int>(free_.size()); }
  const std::vector<Free>& free() const { return free_; }
  std::vector<std::string> free_names() const {
    std::vector<std::string> out;
    for (const auto& f : free_) out.push_back(f.name);
    return out;
  }
  const std::vector<std::string>& reported_names() const { return reported_; }

  ParameterVector assemble(std::span<const double> x) const {
    ParameterVector th = base_;
    double stick_remaining = 1.0;
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const auto& f = free_[i];
      switch (f.role) {
        case Role::Mu: th.mu = x[i]; break;
        case Role::Tau: th.tau = x[i]; break;
        case Role::Rho: th.rho = x[i]; break;
        case Role::Beta: th.beta[f.index] = x[i]; break;
        case Role::Pet: th.pet = x[i]; break;
        case Role::Peese: th.peese = x[i]; break;
        case Role::Stick:
          stick_remaining *= 1.0 - x[i];
          th.omega[f.index + 1] = stick_remaining;
          break;
      }
    }
    return th;
  }

  double log_prior(std::span<const double> x) const {
    double lp = 0.0;
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const auto& f = free_[i];
      if (f.role == Role::Stick) {
        const double v = x[i];
        if (!(v > 0.0 && v < 1.0)) return -kInf;
        lp += (f.a - 1.0) * std::log(v) + (f.b - 1.0) * std::log1p(-v) + std::lgamma(f.a + f.b) -
              std::lgamma(f.a) - std::lgamma(f.b);
      } else {
        lp += f.prior.logpdf(x[i]);
      }
    }
    return lp;
  }

  double log_likelihood(std::span<const double> x) const { return loglik(model_, assemble(x), *ctx_); }

  std::vector<double> to_natural(std::span<const double> z) const {
    std::vector<double> x(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const auto& f = free_[i];
      const bool flo = std::isfinite(f.lo), fhi = std::isfinite(f.hi);
      if (flo && fhi) x[i] = f.lo + (f.hi - f.lo) * logistic(z[i]);
      else if (flo) x[i] = f.lo + std::exp(z[i]);
      else if (fhi) x[i] = f.hi - std::exp(z[i]);
      else x[i] = z[i];
    }
    return x;
  }

  std::vector<double> to_unconstrained(std::span<const double> x) const {
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto& f = free_[i];
      const bool flo = std::isfinite(f.lo), fhi = std::isfinite(f.hi);
      if (flo && fhi) z[i] = logit((x[i] - f.lo) / (f.hi - f.lo));
      else if (flo) z[i] = std::log(x[i] - f.lo);
      else if (fhi) z[i] = std::log(f.hi - x[i]);
      else z[i] = x[i];
    }
    return z;
  }

  double log_jacobian(std::span<const double> z) const {
    double lj = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const auto& f = free_[i];
      const bool flo = std::isfinite(f.lo), fhi = std::isfinite(f.hi);
      if (flo && fhi) lj += std::log(f.hi - f.lo) + log_logistic(z[i]) + log_logistic(-z[i]);
      else if (flo || fhi) lj += z[i];
    }
    return lj;
  }

  /// Unnormalized log posterior density of the unconstrained coordinates.
  double log_density(std::span<const double> z) const {
    const auto x = to_natural(z);
    const double lp = log_prior(x);
    if (!std::isfinite(lp)) return -kInf;
    const double ll = log_likelihood(x);
    if (std::isnan(ll)) return -kInf;
    return lp + ll + log_jacobian(z);
  }

  std::vector<double> sample_prior(Rng& rng) const {
    std::vector<double> x(free_.size());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const auto& f = free_[i];
      if (f.role == Role::Stick) {
        const double g1 = rng.gamma(f.a), g2 = rng.gamma(f.b);
        x[i] = g1 / (g1 + g2);
      } else {
        x[i] = f.prior.sample(rng);
      }
    }
    return x;
  }

  std::vector<double> prior_quantile(std::span<const double> u) const {
    std::vector<double> x(free_.size());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const auto& f = free_[i];
      x[i] = f.role == Role::Stick ? boost::math::ibeta_inv(f.a, f.b, u[i]) : f.prior.quantile(u[i]);
    }
    return x;
  }

  /// Values of the reported parameters at natural free values x.
  std::vector<double> reported(std::span<const double> x) const {
    const auto th = assemble(x);
    std::vector<double> r{th.mu, th.tau};
    if (rho_free_) r.push_back(th.rho);
    for (double b : th.beta) r.push_back(b);
    if (model_.bias.kind == BiasVariant::Kind::Selection)
      for (double w : th.omega) r.push_back(w);
    if (model_.bias.kind == BiasVariant::Kind::PET) r.push_back(th.pet);
    if (model_.bias.kind == BiasVariant::Kind::PEESE) r.push_back(th.peese);
    return r;
  }

 private:
  ModelSpec model_;
  const LikelihoodContext* ctx_;
  std::vector<Free> free_;
  ParameterVector base_;
  bool rho_free_ = false;
  std::vector<std::string> coef_names_;
  std::vector<std::string> reported_;
};

namespace detail {

struct ChainRun {
  std::vector<std::vector<double>> z;  // [iteration][parameter]
  std::vector<double> acceptance;      // per coordinate during sampling
};

inline void adapt_scale(double& scale, int accepted, int proposed) {
  const double a = static_cast<double>(accepted) / proposed;
  if (a < 0.2 || a > 0.4) scale *= std::exp(std::clamp(3.0 * (a - 0.3), -1.0, 1.0));
}

/// One chain of adaptive Metropolis-within-Gibbs. Per-coordinate random-walk
/// scales adapt in batches of 50 iterations; halfway through adaptation a
/// joint move along the empirical covariance is added (d > 1). Everything is
/// frozen after adaptation.
inline ChainRun run_chain(const ModelPosterior& post, const McmcSettings& s, std::uint64_t seed) {
  Rng rng(seed);
  const int d = post.dim();
  const auto ud = static_cast<std::size_t>(d);
  std::vector<double> z;
  double lp = -kInf;
  for (int attempt = 0; attempt < 100 && !std::isfinite(lp); ++attempt) {
    z = post.to_unconstrained(post.sample_prior(rng));
    lp = post.log_density(z);
  }
  if (!std::isfinite(lp))
    throw NumericalError("non-finite log posterior at initialization after 100 prior draws for model [" +
                         post.model().label() + "]");

  constexpr int kBatch = 50;
  std::vector<double> scale(ud, 0.5);
  std::vector<int> acc(ud, 0);
  double block_scale = 2.38 / std::sqrt(std::max(1, d));
  int block_acc = 0;
  Eigen::MatrixXd chol;
  bool block = false;
  std::vector<std::vector<double>> warm;  // adaptation history for the covariance

  const int total = s.adaptation + s.burnin + s.sampling;
  ChainRun out;
  out.z.reserve(static_cast<std::size_t>(s.sampling));
  std::vector<int> samp_acc(ud, 0);
  std::vector<double> prop(ud);
  Eigen::VectorXd eps(d);

  for (int it = 0; it < total; ++it) {
    const bool adapting = it < s.adaptation;
    for (std::size_t j = 0; j < ud; ++j) {
      prop = z;
      prop[j] += scale[j] * rng.normal();
      const double lpp = post.log_density(prop);
      if (std::log(rng.uniform()) < lpp - lp) {
        z[j] = prop[j];
        lp = lpp;
        if (adapting) ++acc[j];
        else if (it >= s.adaptation + s.burnin) ++samp_acc[j];
      }
    }
    if (block) {
      for (int j = 0; j < d; ++j) eps(j) = rng.normal();
      const Eigen::VectorXd step = block_scale * (chol * eps);
      for (std::size_t j = 0; j < ud; ++j) prop[j] = z[j] + step(static_cast<Eigen::Index>(j));
      const double lpp = post.log_density(prop);
      if (std::log(rng.uniform()) < lpp - lp) {
        z = prop;
        lp = lpp;
        if (adapting) ++block_acc;
      }
    }

    if (adapting) {
      if (it >= s.adaptation / 4) warm.push_back(z);
      if ((it + 1) % kBatch == 0) {
        for (std::size_t j = 0; j < ud; ++j) {
          adapt_scale(scale[j], acc[j], kBatch);
          acc[j] = 0;
        }
        if (block) adapt_scale(block_scale, block_acc, kBatch);
        block_acc = 0;
      }
      if (d > 1 && it + 1 == s.adaptation / 2 && warm.size() >= 2 * ud + 2) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(warm.size()), d);
        for (std::size_t r = 0; r < warm.size(); ++r)
          for (std::size_t j = 0; j < ud; ++j)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = warm[r][j];
        const Eigen::RowVectorXd centre = m.colwise().mean();
        const Eigen::MatrixXd c = m.rowwise() - centre;
        Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(warm.size() - 1);
        cov.diagonal().array() += 1e-8;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() == Eigen::Success) {
          chol = llt.matrixL();
          block = true;
        }
      }
    }
    if (it >= s.adaptation + s.burnin) out.z.push_back(z);
  }
  for (std::size_t j = 0; j < ud; ++j)
    out.acceptance.push_back(static_cast<double>(samp_acc[j]) / s.sampling);
  return out;
}

/// Fixed-point iteration of the optimal bridge estimator on log ratios
/// already shifted by a constant; returns log r.
inline double bridge_iterate(std::span<const double> l1, std::span<const double> l2, double tol) {
  const double n1 = static_cast<double>(l1.size()), n2 = static_cast<double>(l2.size());
  const double s1 = n1 / (n1 + n2), s2 = n2 / (n1 + n2);
  double r = 1.0;
  for (int it = 0; it < 1000; ++it) {
    double num = 0.0, den = 0.0;
    for (double l : l2) num += 1.0 / (s1 + s2 * r * std::exp(-l));
    for (double l : l1) den += 1.0 / (s1 * std::exp(l) + s2 * r);
    const double next = (num / n2) / (den / n1);
    if (!std::isfinite(next) || !(next > 0.0))
      throw NumericalError("bridge sampling produced a non-finite estimate; increase the number of draws");
    const bool done = std::abs(next - r) / next < tol;
    r = next;
    if (done) return std::log(r);
  }
  throw NumericalError("bridge sampling did not converge in 1000 iterations; increase the number of draws");
}

}  // namespace detail

/// Log marginal likelihood by nested adaptive Gauss-Kronrod over the prior
/// quantile cube. The integrand is scaled by the maximum over a coarse grid.
inline LogMarginal quadrature_log_marginal(const ModelPosterior& post, double rel_tol = 1e-9) {
  const int d = post.dim();
  if (d == 0) return {post.log_likelihood({}), 0.0, MarglikMethod::Quadrature};
  if (d > 3)
    throw InputError("quadrature marginal likelihood supports at most 3 free parameters; model [" +
                     post.model().label() + "] has " + std::to_string(d));
  auto ll_at = [&](std::span<const double> u) {
    const double ll = post.log_likelihood(post.prior_quantile(u));
    return std::isnan(ll) ? -kInf : ll;
  };
  const int g = d == 1 ? 41 : d == 2 ? 21 : 11;
  double ref = -kInf;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  std::vector<double> u(static_cast<std::size_t>(d));
  for (;;) {
    for (std::size_t k = 0; k < idx.size(); ++k) u[k] = (idx[k] + 0.5) / g;
    ref = std::max(ref, ll_at(u));
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == g) idx[k++] = 0;
    if (k == idx.size()) break;
  }
  if (!std::isfinite(ref)) throw NumericalError("likelihood is not finite anywhere on the quadrature grid");

  for (int attempt = 0; attempt < 3; ++attempt) {
    double seen = -kInf;
    auto f = [&](std::span<const double> x) {
      const double ll = ll_at(x);
      seen = std::max(seen, ll);
      return std::exp(ll - ref);
    };
    // a coarse pass fixes the scale for the absolute tolerance of the fine pass
    const auto coarse = integrate_cube(f, d, 1e-3);
    if (!(std::isfinite(coarse.value) && coarse.value > 0.0) || seen - ref > 600.0) {
      ref = std::max(ref, seen);
      continue;
    }
    const auto r = integrate_cube(f, d, rel_tol, 0.1 * rel_tol * coarse.value);
    if (std::isfinite(r.value) && r.value > 0.0 && seen - ref < 600.0)
      return {ref + std::log(r.value), r.error / r.value, MarglikMethod::Quadrature};
    ref = std::max(ref, seen);  // retry with a safer scaling
  }
  throw NumericalError("quadrature marginal likelihood failed for model [" + post.model().label() + "]");
}

/// Warp-III bridge sampling. The first half of each chain fixes the warp
/// (mean and Cholesky factor); the second half and as many standard-normal
/// proposals enter the iterative estimator. MCSE comes from batch means of
/// the two sums in the estimator (20 batches each).
inline LogMarginal bridge_log_marginal(const ModelPosterior& post, const std::vector<Chains>& unconstrained,
                                       std::uint64_t seed, double tol = 1e-10) {
  const int d = post.dim();
  if (d == 0) return {post.log_likelihood({}), 0.0, MarglikMethod::Bridge};
  const std::size_t chains = unconstrained.front().size();
  const std::size_t iters = unconstrained.front().front().size();
  if (iters < 20) throw InputError("bridge sampling needs at least 20 sampling iterations per chain");
  const std::size_t half = iters / 2;

  std::vector<Eigen::VectorXd> fit, eval;
  for (std::size_t c = 0; c < chains; ++c)
    for (std::size_t t = 0; t < iters; ++t) {
      Eigen::VectorXd v(d);
      for (int j = 0; j < d; ++j) v(j) = unconstrained[static_cast<std::size_t>(j)][c][t];
      (t < half ? fit : eval).push_back(std::move(v));
    }
  Eigen::VectorXd centre = Eigen::VectorXd::Zero(d);
  for (const auto& v : fit) centre += v;
  centre /= static_cast<double>(fit.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& v : fit) cov += (v - centre) * (v - centre).transpose();
  cov /= static_cast<double>(fit.size() - 1);
  cov.diagonal().array() += 1e-12;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("bridge sampling: posterior covariance is singular");
  const Eigen::MatrixXd L = llt.matrixL();
  const double logdet = L.diagonal().array().log().sum();

  auto log_q = [&](const Eigen::VectorXd& z) {
    return post.log_density(std::span<const double>(z.data(), static_cast<std::size_t>(d)));
  };
  // log of the symmetrized warped density minus the standard normal log density
  auto log_ratio = [&](const Eigen::VectorXd& xi) {
    const Eigen::VectorXd shift = L * xi;
    const double warped = logdet + log_add_exp(log_q(centre + shift), log_q(centre - shift)) - std::log(2.0);
    const double lg = -0.5 * xi.squaredNorm() - d * kLogSqrt2Pi;
    return warped - lg;
  };

  std::vector<double> l1, l2;
  l1.reserve(eval.size());
  for (const auto& z : eval) l1.push_back(log_ratio(L.triangularView<Eigen::Lower>().solve(z - centre)));
  Rng rng(seed);
  Eigen::VectorXd xi(d);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    for (int j = 0; j < d; ++j) xi(j) = rng.normal();
    l2.push_back(log_ratio(xi));
  }
  for (double& l : l1)
    if (std::isnan(l)) l = -kInf;
  for (double& l : l2)
    if (std::isnan(l)) l = -kInf;
  const double lstar = quantile(l1, 0.5);
  for (double& l : l1) l -= lstar;
  for (double& l : l2) l -= lstar;

  const double value = lstar + detail::bridge_iterate(l1, l2, tol);

  // log r = log mean(a) - log mean(b) at the fixed point; the variance of each
  // mean comes from batch means (posterior batches stay inside one chain).
  const double r = std::exp(value - lstar);
  const double n1 = static_cast<double>(l1.size()), n2 = static_cast<double>(l2.size());
  const double s1 = n1 / (n1 + n2), s2 = n2 / (n1 + n2);
  std::vector<double> a, b;
  a.reserve(l2.size());
  b.reserve(l1.size());
  for (double l : l2) a.push_back(1.0 / (s1 + s2 * r * std::exp(-l)));
  for (double l : l1) b.push_back(1.0 / (s1 * std::exp(l) + s2 * r));
  auto batch_var = [](std::span<const double> x, std::size_t groups, std::size_t per_group) {
    std::vector<double> means;
    const std::size_t len = x.size() / groups;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t k = 0; k < per_group; ++k) {
        const std::size_t lo = g * len + k * len / per_group, hi = g * len + (k + 1) * len / per_group;
        means.push_back(mean(x.subspan(lo, hi - lo)));
      }
    const double m = mean(x);
    return variance(means) / static_cast<double>(means.size()) / (m * m);
  };
  constexpr std::size_t kBatches = 20;
  const std::size_t per_chain = std::max<std::size_t>(1, kBatches / chains);
  const double var = batch_var(a, 1, kBatches) + batch_var(b, chains, per_chain);
  return {value, std::sqrt(var), MarglikMethod::Bridge};
}

namespace detail {

/// Runs all chains of one model (sequentially, each on its own stream) and
/// collects draws and diagnostics. No marginal likelihood.
inline FitResult sample_model(const ModelPosterior& post, const McmcSettings& s, std::uint64_t key) {
  FitResult fit;
  fit.model = post.model();
  fit.settings = s;
  fit.key = key;
  fit.free_names = post.free_names();
  const auto d = static_cast<std::size_t>(post.dim());
  const auto nc = static_cast<std::size_t>(s.chains);

  fit.draws.names = post.reported_names();
  fit.draws.values.assign(fit.draws.names.size(), Chains(nc));
  fit.unconstrained.assign(d, Chains(nc));
  std::vector<Chains> natural(d, Chains(nc));

  for (std::size_t c = 0; c < nc; ++c) {
    if (d == 0) {
      const auto r = post.reported({});
      for (std::size_t p = 0; p < r.size(); ++p)
        fit.draws.values[p][c].assign(static_cast<std::size_t>(s.sampling), r[p]);
      continue;
    }
    const auto run = run_chain(post, s, stream_seed(s.seed, key, c));
    for (std::size_t j = 0; j < d; ++j) {
      fit.unconstrained[j][c].reserve(run.z.size());
      natural[j][c].reserve(run.z.size());
    }
    for (auto& p : fit.draws.values) p[c].reserve(run.z.size());
    for (const auto& z : run.z) {
      const auto x = post.to_natural(z);
      const auto r = post.reported(x);
      for (std::size_t j = 0; j < d; ++j) {
        fit.unconstrained[j][c].push_back(z[j]);
        natural[j][c].push_back(x[j]);
      }
      for (std::size_t p = 0; p < r.size(); ++p) fit.draws.values[p][c].push_back(r[p]);
    }
  }

  for (std::size_t j = 0; j < d; ++j) {
    for (const auto& ch : natural[j])
      for (double v : ch)
        if (!std::isfinite(v)) throw NumericalError("non-finite draw of " + fit.free_names[j]);
    fit.diagnostics.parameters.emplace_back(fit.free_names[j], diagnose(natural[j]));
  }
  return fit;
}

inline void add_convergence_warnings(FitResult& fit, double target) {
  for (const auto& [name, d] : fit.diagnostics.parameters) {
    if (d.ess < target) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "model [%s]: %s did not achieve the desired ESS (%.0f < %.0f)",
                    fit.model.label().c_str(), name.c_str(), d.ess, target);
      fit.warnings.emplace_back(buf);
    }
    if (d.rhat > 1.05) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "model [%s]: R-hat of %s is %.3f (> 1.05)", fit.model.label().c_str(),
                    name.c_str(), d.rhat);
      fit.warnings.emplace_back(buf);
    }
  }
}

}  // namespace detail

/// Quadrature for up to three free parameters, except selection models on
/// clustered data whose Gauss-Hermite likelihood makes a 3-d tensor rule
/// too slow; bridge sampling otherwise.
inline MarglikMethod auto_marglik_method(const ModelPosterior& post) {
  const bool heavy = post.context().clustered() && post.model().bias.kind == BiasVariant::Kind::Selection;
  if (post.dim() <= 2 || (post.dim() == 3 && !heavy)) return MarglikMethod::Quadrature;
  return MarglikMethod::Bridge;
}

/// Log marginal likelihood of a fitted model by the requested method.
inline LogMarginal log_marginal_likelihood(const FitResult& fit, const LikelihoodContext& ctx,
                                           MarglikMethod method = MarglikMethod::Auto) {
  const ModelPosterior post(fit.model, ctx);
  if (method == MarglikMethod::Auto) method = auto_marglik_method(post);
  if (method == MarglikMethod::Quadrature) return quadrature_log_marginal(post);
  return bridge_log_marginal(post, fit.unconstrained, stream_seed(fit.settings.seed, fit.key, 0x6272696467ULL));
}

inline void finish_fit(FitResult& fit, const LikelihoodContext& ctx) {
  fit.log_marglik = log_marginal_likelihood(fit, ctx, fit.settings.marglik);
  if (!std::isfinite(fit.log_marglik.value))
    throw NumericalError("non-finite log marginal likelihood for model [" + fit.model.label() + "]");
}

/// One round of sampling at the given settings plus the marginal likelihood.
inline FitResult fit_model(const ModelSpec& model, const LikelihoodContext& ctx, const McmcSettings& settings,
                           std::uint64_t key = 0) {
  settings.validate();
  const ModelPosterior post(model, ctx);
  auto fit = detail::sample_model(post, settings, key);
  detail::add_convergence_warnings(fit, settings.target_ess());
  finish_fit(fit, ctx);
  return fit;
}

/// Doubles the sampling iterations until every free parameter reaches the
/// target ESS or the time budget is spent; the schedule is recorded in the
/// warnings.
inline FitResult autofit(const ModelSpec& model, const LikelihoodContext& ctx, McmcSettings settings,
                         std::uint64_t key = 0) {
  settings.validate();
  if (!settings.autofit) throw InputError("autofit is not enabled in the MCMC settings");
  const auto target = settings.autofit->target_ess;
  const auto start = std::chrono::steady_clock::now();
  const ModelPosterior post(model, ctx);
  std::vector<std::string> schedule;
  FitResult fit;
  for (int round = 1;; ++round) {
    fit = detail::sample_model(post, settings, key);
    const double min_ess = fit.diagnostics.min_ess();
    char buf[160];
    std::snprintf(buf, sizeof buf, "model [%s]: autofit round %d with %d sampling iterations, min ESS %.0f",
                  model.label().c_str(), round, settings.sampling, std::isfinite(min_ess) ? min_ess : 0.0);
    if (min_ess >= target) break;
    schedule.emplace_back(buf);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed >= settings.autofit->max_time) {
      std::snprintf(buf, sizeof buf,
                    "model [%s]: autofit time budget of %g s exhausted; returning best-so-far fit (min ESS %.0f < %.0f)",
                    model.label().c_str(), settings.autofit->max_time, min_ess, target);
      schedule.emplace_back(buf);
      break;
    }
    settings.sampling *= 2;
  }
  fit.warnings = schedule;
  detail::add_convergence_warnings(fit, target);
  finish_fit(fit, ctx);
  return fit;
}

/// fit_model or autofit, depending on the settings.
inline FitResult fit(const ModelSpec& model, const LikelihoodContext& ctx, const McmcSettings& settings,
                     std::uint64_t key = 0) {
  return settings.autofit ? autofit(model, ctx, settings, key) : fit_model(model, ctx, settings, key);
}

/// Fits every model of an ensemble. Models are distributed over `threads`
/// workers; model i always uses stream key i, so results do not depend on
/// scheduling.
inline std::vector<FitResult> fit_ensemble(const Ensemble& ensemble, const LikelihoodContext& ctx,
                                           const McmcSettings& settings, unsigned threads = 0,
                                           const std::function<void(std::size_t, const FitResult&)>& progress = {}) {
  settings.validate();
  const std::size_t n = ensemble.models.size();
  std::vector<std::optional<FitResult>> results(n);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        auto r = fit(ensemble.models[i], ctx, settings, i);
        std::lock_guard lock(mu);
        if (progress) progress(i, r);
        results[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        next = n;
        return;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<FitResult> out;
  out.reserve(n);
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

}  // namespace bma
