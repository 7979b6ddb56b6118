#pragma once

// Prior distribution families, the cumulative-Dirichlet weight-function
// prior, and the Default / Medicine / Custom prior profiles.

#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <nlohmann/json.hpp>

#include "bma/dataset.hpp"
#include "bma/error.hpp"
#include "bma/numerics.hpp"
#include "bma/random.hpp"

namespace bma {

struct PointMass {
  double value = 0.0;
};
struct Normal {
  double mean = 0.0, sd = 1.0;
};
struct InverseGamma {
  double shape = 1.0, scale = 1.0;
};
struct Uniform {
  double lo = 0.0, hi = 1.0;
};
struct Cauchy {
  double location = 0.0, scale = 1.0;
};
struct Gamma {
  double shape = 1.0, rate = 1.0;
};

using PriorFamily = std::variant<PointMass, Normal, InverseGamma, Uniform, Cauchy, Gamma>;

/// A univariate prior, optionally truncated to [lo, hi] and renormalized.
class PriorDistribution {
 public:
  PriorDistribution() : PriorDistribution(PointMass{0.0}) {}

  explicit PriorDistribution(PriorFamily family,
                             std::optional<std::pair<double, double>> truncation = std::nullopt)
      : family_(family), truncation_(truncation) {
    validate();
    if (truncation_ && !is_point()) {
      cdf_lo_ = raw_cdf(truncation_->first);
      cdf_hi_ = raw_cdf(truncation_->second);
      if (!(cdf_hi_ - cdf_lo_ > 0.0)) throw InputError("truncation interval has no prior mass");
    }
    log_mass_ = std::log(cdf_hi_ - cdf_lo_);
  }

  static PriorDistribution point(double v) { return PriorDistribution(PointMass{v}); }
  static PriorDistribution normal(double mean, double sd) { return PriorDistribution(Normal{mean, sd}); }
  static PriorDistribution inverse_gamma(double shape, double scale) {
    return PriorDistribution(InverseGamma{shape, scale});
  }
  static PriorDistribution uniform(double lo, double hi) { return PriorDistribution(Uniform{lo, hi}); }
  static PriorDistribution cauchy(double location, double scale) {
    return PriorDistribution(Cauchy{location, scale});
  }
  static PriorDistribution gamma(double shape, double rate) {
    return PriorDistribution(Gamma{shape, rate});
  }

  PriorDistribution truncated(double lo, double hi) const {
    return PriorDistribution(family_, std::pair{lo, hi});
  }

  const PriorFamily& family() const { return family_; }
  const std::optional<std::pair<double, double>>& truncation() const { return truncation_; }
  bool is_point() const { return std::holds_alternative<PointMass>(family_); }
  double point_value() const { return std::get<PointMass>(family_).value; }

  /// Support after truncation.
  std::pair<double, double> support() const {
    std::pair<double, double> s = std::visit(
        [](const auto& f) -> std::pair<double, double> {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, PointMass>) return {f.value, f.value};
          if constexpr (std::is_same_v<F, InverseGamma> || std::is_same_v<F, Gamma>)
            return {0.0, kInf};
          if constexpr (std::is_same_v<F, Uniform>) return {f.lo, f.hi};
          return {-kInf, kInf};
        },
        family_);
    if (truncation_) {
      s.first = std::max(s.first, truncation_->first);
      s.second = std::min(s.second, truncation_->second);
    }
    return s;
  }

  /// Log density w.r.t. Lebesgue measure (counting measure for a point mass).
  double logpdf(double x) const {
    if (is_point()) return x == point_value() ? 0.0 : -kInf;
    const auto [lo, hi] = support();
    if (!(x >= lo && x <= hi)) return -kInf;
    return raw_logpdf(x) - log_mass_;
  }

  double pdf(double x) const { return std::exp(logpdf(x)); }

  double cdf(double x) const {
    if (is_point()) return x >= point_value() ? 1.0 : 0.0;
    const auto [lo, hi] = support();
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    return (raw_cdf(x) - cdf_lo_) / (cdf_hi_ - cdf_lo_);
  }

  double quantile(double q) const {
    if (is_point()) return point_value();
    if (!(q > 0.0 && q < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
    if (!truncation_) return raw_quantile(q);
    const double x = raw_quantile(cdf_lo_ + q * (cdf_hi_ - cdf_lo_));
    const auto [lo, hi] = support();
    return std::clamp(x, lo, hi);
  }

  double sample(Rng& rng) const {
    if (is_point()) return point_value();
    if (truncation_) return quantile(rng.uniform());
    return std::visit(
        [&](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, Normal>) return f.mean + f.sd * rng.normal();
          if constexpr (std::is_same_v<F, InverseGamma>) return f.scale / rng.gamma(f.shape);
          if constexpr (std::is_same_v<F, Gamma>) return rng.gamma(f.shape) / f.rate;
          if constexpr (std::is_same_v<F, Uniform>) return f.lo + (f.hi - f.lo) * rng.uniform();
          if constexpr (std::is_same_v<F, Cauchy>)
            return f.location + f.scale * std::tan(std::numbers::pi * (rng.uniform() - 0.5));
          return 0.0;
        },
        family_);
  }

  /// Characteristic scale: sd, scale, 1/rate or half-width.
  double scale() const {
    return std::visit(
        [](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, Normal>) return f.sd;
          if constexpr (std::is_same_v<F, InverseGamma> || std::is_same_v<F, Cauchy>) return f.scale;
          if constexpr (std::is_same_v<F, Gamma>) return 1.0 / f.rate;
          if constexpr (std::is_same_v<F, Uniform>) return 0.5 * (f.hi - f.lo);
          return 0.0;
        },
        family_);
  }

  /// Distribution of c * X for c > 0.
  PriorDistribution rescaled(double c) const {
    if (!(c > 0.0) || !std::isfinite(c)) throw InputError("scale factor must be positive");
    PriorFamily f = std::visit(
        [c](auto f) -> PriorFamily {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, PointMass>) f.value *= c;
          if constexpr (std::is_same_v<F, Normal>) f.mean *= c, f.sd *= c;
          if constexpr (std::is_same_v<F, InverseGamma>) f.scale *= c;
          if constexpr (std::is_same_v<F, Gamma>) f.rate /= c;
          if constexpr (std::is_same_v<F, Uniform>) f.lo *= c, f.hi *= c;
          if constexpr (std::is_same_v<F, Cauchy>) f.location *= c, f.scale *= c;
          return f;
        },
        family_);
    std::optional<std::pair<double, double>> t;
    if (truncation_) t = std::pair{truncation_->first * c, truncation_->second * c};
    return PriorDistribution(f, t);
  }

  std::string describe() const;

  bool operator==(const PriorDistribution& o) const {
    return to_json_value() == o.to_json_value();
  }

  nlohmann::json to_json_value() const;

 private:
  void validate() const {
    auto positive = [](double v, const char* what) {
      if (!(v > 0.0) || !std::isfinite(v)) throw InputError(std::string(what) + " must be positive");
    };
    std::visit(
        [&](const auto& f) {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, PointMass>) {
            if (!std::isfinite(f.value)) throw InputError("point mass location must be finite");
          }
          if constexpr (std::is_same_v<F, Normal>) positive(f.sd, "normal sd");
          if constexpr (std::is_same_v<F, InverseGamma>)
            positive(f.shape, "inverse-gamma shape"), positive(f.scale, "inverse-gamma scale");
          if constexpr (std::is_same_v<F, Gamma>) positive(f.shape, "gamma shape"), positive(f.rate, "gamma rate");
          if constexpr (std::is_same_v<F, Cauchy>) positive(f.scale, "cauchy scale");
          if constexpr (std::is_same_v<F, Uniform>)
            if (!(f.lo < f.hi) || !std::isfinite(f.lo) || !std::isfinite(f.hi))
              throw InputError("uniform bounds must be finite with lo < hi");
        },
        family_);
    if (truncation_) {
      if (is_point()) throw InputError("a point mass cannot be truncated");
      if (!(truncation_->first < truncation_->second))
        throw InputError("truncation bounds must satisfy lo < hi");
    }
  }

  double raw_logpdf(double x) const {
    return std::visit(
        [x](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, Normal>) return norm_logpdf(x, f.mean, f.sd);
          if constexpr (std::is_same_v<F, InverseGamma>) {
            if (!(x > 0.0)) return -kInf;
            return f.shape * std::log(f.scale) - std::lgamma(f.shape) - (f.shape + 1.0) * std::log(x) -
                   f.scale / x;
          }
          if constexpr (std::is_same_v<F, Gamma>) {
            if (!(x > 0.0)) return -kInf;
            return f.shape * std::log(f.rate) - std::lgamma(f.shape) + (f.shape - 1.0) * std::log(x) -
                   f.rate * x;
          }
          if constexpr (std::is_same_v<F, Uniform>) return -std::log(f.hi - f.lo);
          if constexpr (std::is_same_v<F, Cauchy>) {
            const double z = (x - f.location) / f.scale;
            return -std::log(std::numbers::pi * f.scale) - std::log1p(z * z);
          }
          return -kInf;
        },
        family_);
  }

  double raw_cdf(double x) const {
    return std::visit(
        [x](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, Normal>) {
            if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
            return norm_cdf((x - f.mean) / f.sd);
          }
          if constexpr (std::is_same_v<F, InverseGamma>) {
            if (x <= 0.0) return 0.0;
            if (std::isinf(x)) return 1.0;
            return boost::math::gamma_q(f.shape, f.scale / x);
          }
          if constexpr (std::is_same_v<F, Gamma>) {
            if (x <= 0.0) return 0.0;
            if (std::isinf(x)) return 1.0;
            return boost::math::gamma_p(f.shape, f.rate * x);
          }
          if constexpr (std::is_same_v<F, Uniform>) return std::clamp((x - f.lo) / (f.hi - f.lo), 0.0, 1.0);
          if constexpr (std::is_same_v<F, Cauchy>) {
            if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
            return 0.5 + std::atan((x - f.location) / f.scale) / std::numbers::pi;
          }
          return 0.0;
        },
        family_);
  }

  double raw_quantile(double q) const {
    return std::visit(
        [q](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, Normal>) return f.mean + f.sd * norm_quantile(q);
          if constexpr (std::is_same_v<F, InverseGamma>)
            return f.scale / boost::math::gamma_q_inv(f.shape, q);
          if constexpr (std::is_same_v<F, Gamma>) return boost::math::gamma_p_inv(f.shape, q) / f.rate;
          if constexpr (std::is_same_v<F, Uniform>) return f.lo + q * (f.hi - f.lo);
          if constexpr (std::is_same_v<F, Cauchy>)
            return f.location + f.scale * std::tan(std::numbers::pi * (q - 0.5));
          return 0.0;
        },
        family_);
  }

  PriorFamily family_;
  std::optional<std::pair<double, double>> truncation_;
  double cdf_lo_ = 0.0;
  double cdf_hi_ = 1.0;
  double log_mass_ = 0.0;
};

namespace detail {
inline std::string fmt_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}
}  // namespace detail

inline std::string PriorDistribution::describe() const {
  using detail::fmt_param;
  std::string s = std::visit(
      [](const auto& f) -> std::string {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, PointMass>) return "Spike(" + fmt_param(f.value) + ")";
        if constexpr (std::is_same_v<F, Normal>)
          return "Normal(mean = " + fmt_param(f.mean) + ", sd = " + fmt_param(f.sd) + ")";
        if constexpr (std::is_same_v<F, InverseGamma>)
          return "Inverse-Gamma(shape = " + fmt_param(f.shape) + ", scale = " + fmt_param(f.scale) + ")";
        if constexpr (std::is_same_v<F, Gamma>)
          return "Gamma(shape = " + fmt_param(f.shape) + ", rate = " + fmt_param(f.rate) + ")";
        if constexpr (std::is_same_v<F, Uniform>)
          return "Uniform(" + fmt_param(f.lo) + ", " + fmt_param(f.hi) + ")";
        if constexpr (std::is_same_v<F, Cauchy>)
          return "Cauchy(location = " + fmt_param(f.location) + ", scale = " + fmt_param(f.scale) + ")";
        return "";
      },
      family_);
  if (truncation_) s += "[" + fmt_param(truncation_->first) + ", " + fmt_param(truncation_->second) + "]";
  return s;
}

inline nlohmann::json PriorDistribution::to_json_value() const {
  nlohmann::json j = std::visit(
      [](const auto& f) -> nlohmann::json {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, PointMass>) return {{"family", "point"}, {"params", {{"value", f.value}}}};
        if constexpr (std::is_same_v<F, Normal>)
          return {{"family", "normal"}, {"params", {{"mean", f.mean}, {"sd", f.sd}}}};
        if constexpr (std::is_same_v<F, InverseGamma>)
          return {{"family", "invgamma"}, {"params", {{"shape", f.shape}, {"scale", f.scale}}}};
        if constexpr (std::is_same_v<F, Gamma>)
          return {{"family", "gamma"}, {"params", {{"shape", f.shape}, {"rate", f.rate}}}};
        if constexpr (std::is_same_v<F, Uniform>)
          return {{"family", "uniform"}, {"params", {{"lo", f.lo}, {"hi", f.hi}}}};
        if constexpr (std::is_same_v<F, Cauchy>)
          return {{"family", "cauchy"}, {"params", {{"location", f.location}, {"scale", f.scale}}}};
        return {};
      },
      family_);
  if (truncation_) {
    auto enc = [](double v) -> nlohmann::json {
      if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
      return v;
    };
    j["truncation"] = {enc(truncation_->first), enc(truncation_->second)};
  }
  return j;
}

inline void to_json(nlohmann::json& j, const PriorDistribution& p) { j = p.to_json_value(); }

inline PriorDistribution prior_from_json(const nlohmann::json& j) {
  try {
    const auto family = j.at("family").get<std::string>();
    const auto& p = j.at("params");
    auto num = [&](const char* k) { return p.at(k).get<double>(); };
    PriorFamily f;
    if (family == "point" || family == "spike")
      f = PointMass{num("value")};
    else if (family == "normal")
      f = Normal{num("mean"), num("sd")};
    else if (family == "invgamma")
      f = InverseGamma{num("shape"), num("scale")};
    else if (family == "gamma")
      f = Gamma{num("shape"), num("rate")};
    else if (family == "uniform")
      f = Uniform{num("lo"), num("hi")};
    else if (family == "cauchy")
      f = Cauchy{num("location"), num("scale")};
    else
      throw InputError("unknown prior family '" + family + "'");
    std::optional<std::pair<double, double>> trunc;
    if (j.contains("truncation")) {
      auto dec = [](const nlohmann::json& v) -> double {
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          if (s == "inf") return kInf;
          if (s == "-inf") return -kInf;
          throw InputError("bad truncation bound '" + s + "'");
        }
        return v.get<double>();
      };
      const auto& t = j.at("truncation");
      if (!t.is_array() || t.size() != 2) throw InputError("truncation must be [lo, hi]");
      trunc = std::pair{dec(t[0]), dec(t[1])};
    }
    return PriorDistribution(f, trunc);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed prior: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Weight-function prior

enum class Sidedness { OneSided, TwoSided };

inline std::string to_string(Sidedness s) { return s == Sidedness::OneSided ? "one-sided" : "two-sided"; }

/// Step weight function over p-value bins [0,c1), [c1,c2), ..., [cm,1]. Bin
/// increments eta ~ Dirichlet(alphas); weights are the cumulative sums taken
/// from the least significant bin, omega_j = sum_{l >= j} eta_l, so the most
/// significant bin has weight 1 and weights never increase with p.
struct WeightFunctionPrior {
  std::vector<double> cutpoints;
  Sidedness sided = Sidedness::TwoSided;
  std::vector<double> alphas;

  std::size_t bins() const { return cutpoints.size() + 1; }

  void validate() const {
    if (cutpoints.empty()) throw InputError("weight function needs at least one cutpoint");
    for (std::size_t i = 0; i < cutpoints.size(); ++i) {
      if (!(cutpoints[i] > 0.0 && cutpoints[i] < 1.0))
        throw InputError("weight-function cutpoints must lie in (0, 1)");
      if (i > 0 && !(cutpoints[i] > cutpoints[i - 1]))
        throw InputError("weight-function cutpoints must be strictly increasing");
    }
    if (alphas.size() != bins()) throw InputError("need one Dirichlet concentration per p-value bin");
    for (double a : alphas)
      if (!(a > 0.0) || !std::isfinite(a)) throw InputError("Dirichlet concentrations must be positive");
  }

  std::vector<double> sample(Rng& rng) const {
    std::vector<double> eta(bins());
    double total = 0.0;
    for (std::size_t j = 0; j < eta.size(); ++j) total += eta[j] = rng.gamma(alphas[j]);
    for (double& e : eta) e /= total;
    std::vector<double> omega(bins());
    double acc = 0.0;
    for (std::size_t j = bins(); j-- > 0;) omega[j] = acc += eta[j];
    omega[0] = 1.0;
    return omega;
  }

  /// Log density of (omega_2, ..., omega_J); -inf outside the support.
  double logpdf(std::span<const double> omega) const {
    if (omega.size() != bins() || omega[0] != 1.0) return -kInf;
    std::vector<double> eta(bins());
    for (std::size_t j = 0; j < bins(); ++j) {
      const double next = j + 1 < bins() ? omega[j + 1] : 0.0;
      eta[j] = omega[j] - next;
      if (!(eta[j] > 0.0)) return -kInf;
    }
    double a0 = 0.0, lp = 0.0;
    for (std::size_t j = 0; j < bins(); ++j) {
      a0 += alphas[j];
      lp += (alphas[j] - 1.0) * std::log(eta[j]) - std::lgamma(alphas[j]);
    }
    return lp + std::lgamma(a0);
  }

  bool operator==(const WeightFunctionPrior&) const = default;
};

// ---------------------------------------------------------------------------
// Prior profiles

enum class ProfileSource { Default, Medicine, Custom };

struct ComponentPriors {
  PriorDistribution null;
  PriorDistribution alt;
};

/// Slope priors for the PET / PEESE mean adjustments.
struct BiasPriors {
  PriorDistribution pet = PriorDistribution::cauchy(0.0, 1.0).truncated(0.0, kInf);
  PriorDistribution peese = PriorDistribution::cauchy(0.0, 5.0).truncated(0.0, kInf);
};

/// Multiplier taking SMD-scale priors to `measure`'s scale.
inline double scale_factor(EffectSizeMeasure measure) {
  switch (measure) {
    case EffectSizeMeasure::SMD: return 1.0;
    case EffectSizeMeasure::LogOR: return std::numbers::pi / std::sqrt(3.0);
    case EffectSizeMeasure::FishersZ: return 0.5;
    default: throw InputError("no default prior for measure '" + to_string(measure) + "'; use Custom");
  }
}

/// Effect and heterogeneity priors stored on their base scale together with
/// the measure factor and the user scale knob. Effective priors are always
/// base.rescaled(measure_factor * scale_knob), so rescaling composes exactly.
class PriorProfile {
 public:
  PriorProfile(ComponentPriors effect, ComponentPriors heterogeneity, double coefficient_fraction,
               ProfileSource source, std::string subfield = {}, double measure_factor = 1.0,
               double scale_knob = 1.0)
      : base_effect_(std::move(effect)),
        base_heterogeneity_(std::move(heterogeneity)),
        fraction_(coefficient_fraction),
        source_(source),
        subfield_(std::move(subfield)),
        measure_factor_(measure_factor),
        scale_knob_(scale_knob) {
    if (!(fraction_ > 0.0 && fraction_ <= 1.0))
      throw InputError("coefficient scale fraction must lie in (0, 1]");
    if (!(scale_knob_ > 0.0) || !std::isfinite(scale_knob_)) throw InputError("scale must be positive");
    if (source_ != ProfileSource::Custom) {
      auto spike0 = [](const PriorDistribution& p) { return p.is_point() && p.point_value() == 0.0; };
      if (!spike0(base_effect_.null) || !spike0(base_heterogeneity_.null))
        throw InputError("non-custom profiles use spikes at 0 as null priors");
    }
    bias.peese = bias.peese.rescaled(1.0 / measure_factor_);
  }

  ComponentPriors effect() const { return scaled(base_effect_); }
  ComponentPriors heterogeneity() const { return scaled(base_heterogeneity_); }

  /// Prior for one standardized meta-regression coefficient.
  PriorDistribution coefficient() const {
    return PriorDistribution::normal(0.0, fraction_ * effect().alt.scale());
  }

  /// Variance allocation between cluster and estimate level.
  PriorDistribution allocation() const { return PriorDistribution::uniform(0.0, 1.0); }

  double coefficient_scale_fraction() const { return fraction_; }
  ProfileSource source() const { return source_; }
  const std::string& subfield() const { return subfield_; }
  double scale_knob() const { return scale_knob_; }
  double measure_factor() const { return measure_factor_; }

  PriorProfile rescaled(double b) const {
    PriorProfile p = *this;
    p.scale_knob_ = scale_knob_ * b;
    if (!(p.scale_knob_ > 0.0) || !std::isfinite(p.scale_knob_)) throw InputError("scale must be positive");
    return p;
  }

  BiasPriors bias;

 private:
  ComponentPriors scaled(const ComponentPriors& c) const {
    const double k = measure_factor_ * scale_knob_;
    return {c.null.rescaled(k), c.alt.rescaled(k)};
  }

  ComponentPriors base_effect_;
  ComponentPriors base_heterogeneity_;
  double fraction_;
  ProfileSource source_;
  std::string subfield_;
  double measure_factor_;
  double scale_knob_;
};

inline PriorProfile default_profile(EffectSizeMeasure measure, double scale_knob = 1.0) {
  if (measure != EffectSizeMeasure::SMD && measure != EffectSizeMeasure::LogOR &&
      measure != EffectSizeMeasure::FishersZ)
    throw InputError("no default prior for measure '" + to_string(measure) + "'; use Custom");
  return PriorProfile({PriorDistribution::point(0.0), PriorDistribution::normal(0.0, 1.0)},
                      {PriorDistribution::point(0.0), PriorDistribution::inverse_gamma(1.0, 0.15)}, 0.25,
                      ProfileSource::Default, {}, scale_factor(measure), scale_knob);
}

inline PriorProfile custom_profile(ComponentPriors effect, ComponentPriors heterogeneity,
                                   double coefficient_fraction = 0.25, double scale_knob = 1.0) {
  return PriorProfile(std::move(effect), std::move(heterogeneity), coefficient_fraction,
                      ProfileSource::Custom, {}, 1.0, scale_knob);
}

// ---------------------------------------------------------------------------
// Medicine catalog

struct CatalogEntry {
  EffectSizeMeasure measure;
  std::string subfield;
  PriorDistribution effect;
  PriorDistribution heterogeneity;
  std::string provenance;
};

/// Empirical priors keyed by (measure, subfield), read from a versioned JSON
/// file: {"version": ..., "entries": [{measure, subfield, effect, heterogeneity,
/// provenance}]}.
class MedicineCatalog {
 public:
  MedicineCatalog() = default;
  MedicineCatalog(std::string version, std::vector<CatalogEntry> entries)
      : version_(std::move(version)), entries_(std::move(entries)) {}

  static MedicineCatalog from_json(const nlohmann::json& j) {
    try {
      std::vector<CatalogEntry> entries;
      for (const auto& e : j.at("entries")) {
        entries.push_back({parse_measure(e.at("measure").get<std::string>()),
                           e.at("subfield").get<std::string>(), prior_from_json(e.at("effect")),
                           prior_from_json(e.at("heterogeneity")), e.value("provenance", std::string{})});
      }
      return MedicineCatalog(j.at("version").get<std::string>(), std::move(entries));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("malformed medicine catalog: ") + e.what());
    }
  }

  static MedicineCatalog load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open medicine catalog '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InputError("medicine catalog '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

  const std::string& version() const { return version_; }
  const std::vector<CatalogEntry>& entries() const { return entries_; }

  const CatalogEntry* find(EffectSizeMeasure m, const std::string& subfield) const {
    for (const auto& e : entries_)
      if (e.measure == m && e.subfield == subfield) return &e;
    return nullptr;
  }

  std::vector<std::string> subfields(EffectSizeMeasure m) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (e.measure == m) out.push_back(e.subfield);
    return out;
  }

 private:
  std::string version_;
  std::vector<CatalogEntry> entries_;
};

inline PriorProfile medicine_profile(const MedicineCatalog& catalog, EffectSizeMeasure measure,
                                     const std::string& subfield, double scale_knob = 1.0) {
  const CatalogEntry* e = catalog.find(measure, subfield);
  if (!e) {
    std::string msg = "no medicine prior for (" + to_string(measure) + ", " + subfield + "); available:";
    const auto keys = catalog.subfields(measure);
    if (keys.empty()) msg += " none";
    for (const auto& k : keys) msg += " " + k;
    throw InputError(msg);
  }
  PriorProfile p({PriorDistribution::point(0.0), e->effect},
                 {PriorDistribution::point(0.0), e->heterogeneity}, 0.5, ProfileSource::Medicine, subfield,
                 1.0, scale_knob);
  if (measure == EffectSizeMeasure::SMD || measure == EffectSizeMeasure::LogOR ||
      measure == EffectSizeMeasure::FishersZ)
    p.bias.peese = BiasPriors{}.peese.rescaled(1.0 / scale_factor(measure));
  return p;
}

}  // namespace bma
