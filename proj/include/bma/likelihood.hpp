#pragma once

// Log-likelihoods of every model kind: random/fixed effects, meta-regression,
// multilevel clustering, PET/PEESE mean shifts and step-function selection.

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "bma/dataset.hpp"
#include "bma/modelspace.hpp"
#include "bma/numerics.hpp"
#include "bma/priors.hpp"

namespace bma {

/// Values of all parameters of one model. Inactive parameters stay at their
/// null values (0, or an empty vector).
struct ParameterVector {
  double mu = 0.0;
  double tau = 0.0;
  double rho = 0.0;            // variance allocation, multilevel only
  std::vector<double> beta;    // one per design column after the intercept
  std::vector<double> omega;   // selection weights, omega[0] == 1
  double pet = 0.0;
  double peese = 0.0;
};

/// Data, optional design and optional clustering shared by all models.
class LikelihoodContext {
 public:
  explicit LikelihoodContext(Dataset data, std::optional<DesignMatrix> design = std::nullopt,
                             bool use_clusters = false)
      : data_(std::move(data)), design_(std::move(design)) {
    y_ = data_.effects();
    se_ = data_.standard_errors();
    for (double s : se_) var_.push_back(s * s);
    if (use_clusters) {
      if (!data_.has_clusters()) throw InputError("multilevel model requires a cluster column in the dataset");
      std::map<std::string, std::size_t> index;
      for (std::size_t i = 0; i < data_.size(); ++i) {
        const auto& label = *data_.records()[i].cluster;
        auto [it, fresh] = index.try_emplace(label, clusters_.size());
        if (fresh) clusters_.emplace_back();
        clusters_[it->second].push_back(i);
      }
    }
    if (design_ && design_->X.rows() != static_cast<Eigen::Index>(data_.size()))
      throw InputError("design matrix rows do not match the dataset");
  }

  const Dataset& data() const { return data_; }
  const std::optional<DesignMatrix>& design() const { return design_; }
  bool clustered() const { return !clusters_.empty(); }
  const std::vector<std::vector<std::size_t>>& clusters() const { return clusters_; }
  std::span<const double> y() const { return y_; }
  std::span<const double> se() const { return se_; }
  std::span<const double> var() const { return var_; }
  std::size_t size() const { return y_.size(); }
  int coefficient_count() const { return design_ ? design_->columns() - 1 : 0; }

  /// Mean of study i under theta (regression part plus PET/PEESE shift).
  double mean(const ParameterVector& th, std::size_t i) const {
    double m = th.mu + th.pet * se_[i] + th.peese * var_[i];
    if (design_ && !th.beta.empty()) {
      const auto& X = design_->X;
      for (Eigen::Index c = 1; c < X.cols(); ++c)
        m += X(static_cast<Eigen::Index>(i), c) * th.beta[static_cast<std::size_t>(c - 1)];
    }
    return m;
  }

 private:
  Dataset data_;
  std::optional<DesignMatrix> design_;
  std::vector<double> y_, se_, var_;
  std::vector<std::vector<std::size_t>> clusters_;
};

/// One-sided p-values test for positive effects.
inline double pvalue(double y, double se, Sidedness sided) {
  const double z = y / se;
  return sided == Sidedness::OneSided ? norm_sf(z) : 2.0 * norm_sf(std::abs(z));
}

/// Multivariate normal likelihood. Without clustering the studies are
/// independent with variance se^2 + tau^2; with clustering each cluster has
/// covariance diag(se^2 + (1 - rho) tau^2) + rho tau^2 11', evaluated in O(n)
/// through the matrix determinant lemma and Sherman-Morrison.
inline double loglik_normal(const ParameterVector& th, const LikelihoodContext& ctx) {
  const double t2 = th.tau * th.tau;
  const auto y = ctx.y();
  const auto v = ctx.var();
  if (!ctx.clustered() || t2 == 0.0 || th.rho == 0.0) {
    double ll = 0.0;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      const double s2 = v[i] + t2;
      const double e = y[i] - ctx.mean(th, i);
      ll += -kLogSqrt2Pi - 0.5 * std::log(s2) - 0.5 * e * e / s2;
    }
    return ll;
  }
  const double shared = th.rho * t2;
  const double own = (1.0 - th.rho) * t2;
  double ll = 0.0;
  for (const auto& members : ctx.clusters()) {
    double logdet = 0.0, sum_inv = 0.0, sum_e = 0.0, quad = 0.0;
    for (std::size_t i : members) {
      const double d = v[i] + own;
      const double e = y[i] - ctx.mean(th, i);
      logdet += std::log(d);
      sum_inv += 1.0 / d;
      sum_e += e / d;
      quad += e * e / d;
    }
    const double denom = 1.0 + shared * sum_inv;
    logdet += std::log(denom);
    quad -= shared * sum_e * sum_e / denom;
    ll += -static_cast<double>(members.size()) * kLogSqrt2Pi - 0.5 * (logdet + quad);
  }
  return ll;
}

namespace detail {

/// Gauss-Hermite rule for weight exp(-x^2), computed by Newton iteration on
/// the Hermite recurrence.
template <int N>
struct GaussHermite {
  std::array<double, N> x{};
  std::array<double, N> w{};
  std::array<double, N> log_w{};  // log(w / sqrt(pi)), the normal-expectation weights

  GaussHermite() {
    const double pim4 = 0.7511255444649425;  // pi^(-1/4)
    double z = 0.0, pp = 0.0;
    const int m = (N + 1) / 2;
    for (int i = 0; i < m; ++i) {
      if (i == 0)
        z = std::sqrt(2.0 * N + 1.0) - 1.85575 * std::pow(2.0 * N + 1.0, -0.16667);
      else if (i == 1)
        z -= 1.14 * std::pow(static_cast<double>(N), 0.426) / z;
      else if (i == 2)
        z = 1.86 * z - 0.86 * x[0];
      else if (i == 3)
        z = 1.91 * z - 0.91 * x[1];
      else
        z = 2.0 * z - x[static_cast<std::size_t>(i - 2)];
      for (int it = 0; it < 100; ++it) {
        double p1 = pim4, p2 = 0.0;
        for (int j = 0; j < N; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
        }
        pp = std::sqrt(2.0 * N) * p2;
        const double z1 = z;
        z = z1 - p1 / pp;
        if (std::abs(z - z1) <= 1e-15) break;
      }
      x[static_cast<std::size_t>(i)] = z;
      x[static_cast<std::size_t>(N - 1 - i)] = -z;
      w[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(N - 1 - i)] = 2.0 / (pp * pp);
    }
    for (int i = 0; i < N; ++i)
      log_w[static_cast<std::size_t>(i)] = std::log(w[static_cast<std::size_t>(i)]) - 0.5 * std::log(std::numbers::pi);
  }
};

inline const GaussHermite<21>& gauss_hermite21() {
  static const GaussHermite<21> rule;
  return rule;
}

/// Per-call thresholds and observed bins of a weight function.
struct SelectionGeometry {
  std::vector<double> z;      // standardized thresholds, decreasing (bin boundaries)
  std::vector<int> obs_bin;   // bin of each observed study

  SelectionGeometry(const WeightFunctionPrior& w, const LikelihoodContext& ctx) {
    for (double c : w.cutpoints)
      z.push_back(w.sided == Sidedness::OneSided ? norm_quantile(1.0 - c) : norm_quantile(1.0 - c / 2.0));
    obs_bin.resize(ctx.size());
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      const double p = pvalue(ctx.y()[i], ctx.se()[i], w.sided);
      int b = 0;
      while (b < static_cast<int>(w.cutpoints.size()) && p >= w.cutpoints[static_cast<std::size_t>(b)]) ++b;
      obs_bin[i] = b;
    }
  }
};

/// log of the selection-weighted density of y ~ N(m, s^2) for a study with
/// standard error se (which defines the p-value); log_omega[obs_bin] is the
/// weight of the observed bin.
inline double weighted_logdensity(double y, double se, double m, double s, double log_s, int obs_bin,
                                  std::span<const double> omega, std::span<const double> log_omega,
                                  std::span<const double> z, Sidedness sided) {
  // tail = P(p(Y) < c_j); bins are [c_j, c_{j+1}).
  double A = 0.0, prev = 0.0;
  for (std::size_t j = 0; j <= z.size(); ++j) {
    double tail = 1.0;
    if (j < z.size()) {
      const double t = z[j] * se;
      tail = sided == Sidedness::OneSided ? norm_sf((t - m) / s)
                                          : norm_sf((t - m) / s) + norm_cdf((-t - m) / s);
    }
    A += omega[j] * (tail - prev);
    prev = tail;
  }
  const double e = (y - m) / s;
  return log_omega[static_cast<std::size_t>(obs_bin)] - kLogSqrt2Pi - log_s - 0.5 * e * e - std::log(A);
}

}  // namespace detail

/// Step-function selection model. Singleton (or unclustered) studies use the
/// marginal weighted density with s^2 = se^2 + tau^2; true clusters integrate
/// the shared effect u ~ N(0, rho tau^2) with 21-point adaptive Gauss-Hermite
/// quadrature, weighting each record conditionally on u. The rule is centred
/// and scaled on the conditional posterior of u without selection, which is
/// normal, so unit weights give the normal likelihood to rounding error.
inline double loglik_selection(const ParameterVector& th, const LikelihoodContext& ctx,
                               const WeightFunctionPrior& weights) {
  if (th.omega.size() != weights.bins()) throw InputError("omega does not match the weight function");
  const detail::SelectionGeometry geo(weights, ctx);
  const auto y = ctx.y();
  const auto se = ctx.se();
  const auto v = ctx.var();
  const double t2 = th.tau * th.tau;

  std::vector<double> log_omega(th.omega.size());
  for (std::size_t j = 0; j < th.omega.size(); ++j) log_omega[j] = std::log(th.omega[j]);

  auto marginal = [&](std::size_t i) {
    const double s = std::sqrt(v[i] + t2);
    return detail::weighted_logdensity(y[i], se[i], ctx.mean(th, i), s, std::log(s), geo.obs_bin[i], th.omega,
                                       log_omega, geo.z, weights.sided);
  };

  if (!ctx.clustered() || t2 == 0.0 || th.rho == 0.0) {
    double ll = 0.0;
    for (std::size_t i = 0; i < ctx.size(); ++i) ll += marginal(i);
    return ll;
  }

  const auto& gh = detail::gauss_hermite21();
  const double shared = th.rho * t2;
  const double own = (1.0 - th.rho) * t2;
  double ll = 0.0;
  std::vector<double> m, s, log_s;
  for (const auto& members : ctx.clusters()) {
    if (members.size() == 1) {
      ll += marginal(members.front());
      continue;
    }
    m.clear();
    s.clear();
    log_s.clear();
    double sum_inv = 0.0, sum_e = 0.0;
    for (std::size_t i : members) {
      m.push_back(ctx.mean(th, i));
      s.push_back(std::sqrt(v[i] + own));
      log_s.push_back(std::log(s.back()));
      sum_inv += 1.0 / (v[i] + own);
      sum_e += (y[i] - m.back()) / (v[i] + own);
    }
    const double post_var = shared / (1.0 + shared * sum_inv);
    const double post_mean = post_var * sum_e;
    const double log_ratio_const = 0.5 * (std::log(post_var) - std::log(shared));
    std::array<double, 21> terms{};
    for (std::size_t g = 0; g < 21; ++g) {
      const double u = post_mean + std::sqrt(2.0 * post_var) * gh.x[g];
      // prior N(0, shared) over the N(post_mean, post_var) the rule integrates against
      double acc = gh.log_w[g] + log_ratio_const - 0.5 * u * u / shared + gh.x[g] * gh.x[g];
      for (std::size_t k = 0; k < members.size(); ++k) {
        const std::size_t i = members[k];
        acc += detail::weighted_logdensity(y[i], se[i], m[k] + u, s[k], log_s[k], geo.obs_bin[i], th.omega,
                                           log_omega, geo.z, weights.sided);
      }
      terms[g] = acc;
    }
    ll += log_sum_exp(terms);
  }
  return ll;
}

/// Likelihood of `model` at theta.
inline double loglik(const ModelSpec& model, const ParameterVector& th, const LikelihoodContext& ctx) {
  if (model.bias.kind == BiasVariant::Kind::Selection) return loglik_selection(th, ctx, model.bias.weights);
  return loglik_normal(th, ctx);
}

}  // namespace bma
