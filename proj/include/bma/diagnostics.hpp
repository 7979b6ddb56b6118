#pragma once

// MCMC convergence diagnostics: split rank-normalized R-hat, multi-chain
// effective sample size with Geyer's initial positive sequence, and MCSE.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "bma/error.hpp"
#include "bma/numerics.hpp"

namespace bma {

using Chains = std::vector<std::vector<double>>;

struct RhatResult {
  double value = 1.0;
  bool degenerate = false;
};

struct Mcse {
  double absolute = 0.0;
  double relative = 0.0;  // relative to the posterior sd, i.e. 1/sqrt(ESS)
};

struct ParameterDiagnostics {
  double mcse = 0.0;
  double relative_mcse = 0.0;
  double ess = 0.0;
  double rhat = 1.0;
  bool degenerate = false;
};

namespace detail {

inline std::size_t total_draws(const Chains& chains) {
  std::size_t n = 0;
  for (const auto& c : chains) n += c.size();
  return n;
}

inline bool constant_draws(const Chains& chains) {
  const double* first = nullptr;
  for (const auto& c : chains)
    for (const double& x : c) {
      if (!first) first = &x;
      else if (x != *first) return false;
    }
  return true;
}

/// Classic (potential scale reduction) R-hat on equal-length chains.
inline double basic_rhat(const Chains& chains) {
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean(c));
    vars.push_back(variance(c));
  }
  const double W = mean(vars);
  const double B = chains.size() > 1 ? n * variance(means) : 0.0;
  if (W <= 0.0) return 1.0;
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

inline Chains split_chains(const Chains& chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    // odd lengths drop the middle draw
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

/// Replaces each draw by the normal score of its pooled (average) rank.
inline Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (const auto& c : chains)
    for (double x : c) pooled.emplace_back(x, pooled.size());
  std::sort(pooled.begin(), pooled.end());
  const double S = static_cast<double>(pooled.size());
  std::vector<double> z(pooled.size());
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    const double score = norm_quantile((rank - 0.375) / (S + 0.25));
    for (std::size_t k = i; k < j; ++k) z[pooled[k].second] = score;
    i = j;
  }
  Chains out;
  std::size_t pos = 0;
  for (const auto& c : chains) {
    out.emplace_back(z.begin() + static_cast<std::ptrdiff_t>(pos),
                     z.begin() + static_cast<std::ptrdiff_t>(pos + c.size()));
    pos += c.size();
  }
  return out;
}

inline double autocov(std::span<const double> x, double m, std::size_t lag) {
  double s = 0.0;
  for (std::size_t i = 0; i + lag < x.size(); ++i) s += (x[i] - m) * (x[i + lag] - m);
  return s / static_cast<double>(x.size());
}

}  // namespace detail

/// Split rank-normalized R-hat: the larger of the bulk and folded versions.
/// Constant draws give 1 with the degenerate flag set.
inline RhatResult rhat(const Chains& chains) {
  if (chains.size() < 2) throw InputError("rhat needs at least two chains");
  if (detail::constant_draws(chains)) return {1.0, true};
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw InputError("rhat needs chains of equal length");
  if (n < 4) return {1.0, true};
  const auto split = detail::split_chains(chains);
  const double bulk = detail::basic_rhat(detail::rank_normalize(split));
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  const double med = quantile(pooled, 0.5);
  Chains folded = split;
  for (auto& c : folded)
    for (double& x : c) x = std::abs(x - med);
  double tail = 1.0;
  if (!detail::constant_draws(folded)) tail = detail::basic_rhat(detail::rank_normalize(folded));
  return {std::max(bulk, tail), false};
}

/// Multi-chain ESS from the combined autocorrelation estimate, truncated at
/// the first negative pair sum and made monotone; capped at the draw count.
inline double ess(const Chains& chains) {
  const std::size_t total = detail::total_draws(chains);
  if (total == 0) return 0.0;
  if (detail::constant_draws(chains)) return static_cast<double>(total);
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw InputError("ess needs chains of equal length");
  if (n < 4) return static_cast<double>(total);
  const double m = static_cast<double>(chains.size());
  const double dn = static_cast<double>(n);

  std::vector<double> means;
  for (const auto& c : chains) means.push_back(mean(c));
  double W = 0.0;
  for (std::size_t c = 0; c < chains.size(); ++c) W += detail::autocov(chains[c], means[c], 0) * dn / (dn - 1.0);
  W /= m;
  const double B_over_n = chains.size() > 1 ? variance(means) : 0.0;
  const double var_plus = W * (dn - 1.0) / dn + B_over_n;

  auto rho = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < chains.size(); ++c) acov += detail::autocov(chains[c], means[c], lag);
    acov /= m;
    return 1.0 - (W - acov) / var_plus;
  };

  double sum = 0.0;
  double prev_pair = kInf;
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(static_cast<double>(total)));
  return std::min(static_cast<double>(total), static_cast<double>(total) / tau);
}

inline double ess(std::span<const double> draws) {
  return ess(Chains{std::vector<double>(draws.begin(), draws.end())});
}

inline Mcse mcse(const Chains& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  if (pooled.size() < 2) return {0.0, 0.0};
  const double e = ess(chains);
  const double sd = stddev(pooled);
  return {sd / std::sqrt(e), 1.0 / std::sqrt(e)};
}

inline ParameterDiagnostics diagnose(const Chains& chains) {
  ParameterDiagnostics d;
  const auto m = mcse(chains);
  d.mcse = m.absolute;
  d.relative_mcse = m.relative;
  d.ess = ess(chains);
  if (chains.size() >= 2) {
    const auto r = rhat(chains);
    d.rhat = r.value;
    d.degenerate = r.degenerate;
  } else {
    d.degenerate = detail::constant_draws(chains);
  }
  return d;
}

}  // namespace bma
