#pragma once

// Text tables and the JSON report for an ensemble summary. The text is a pure
// function of the summary fields, so a parsed report re-renders identically.

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bma/averaging.hpp"
#include "bma/error.hpp"

namespace bma {

struct ReportOptions {
  bool conditional = false;
  bool models = false;
  BfDirection bf = BfDirection::BF10;
};

namespace detail {

inline std::string fixed(double v, int digits = 3) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "\xE2\x88\x9E" : "-\xE2\x88\x9E";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string bf_text(const ComponentTest& t, BfDirection d) {
  if (!t.applicable) return "NA";
  if (t.infinite) {
    if (d == BfDirection::BF01) return "0.000";
    return "\xE2\x88\x9E";
  }
  const double v = t.value(d);
  if (d != BfDirection::LogBF10 && (v >= 1e4 || (v > 0.0 && v < 1e-3))) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
  }
  return fixed(v);
}

/// Display width of UTF-8 text (code points).
inline std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

class Table {
 public:
  Table(std::string title, std::vector<std::string> header) : title_(std::move(title)), header_(std::move(header)) {}
  void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }
  bool empty() const { return rows_.empty(); }

  std::string str() const {
    std::vector<std::size_t> w(header_.size(), 0);
    auto fit = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], width(r[i]));
    };
    fit(header_);
    for (const auto& r : rows_) fit(r);
    std::ostringstream out;
    out << title_ << '\n';
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        const std::string pad(w[i] - width(cell), ' ');
        s += i == 0 ? cell + pad : "  " + pad + cell;
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      out << s << '\n';
    };
    line(header_);
    std::size_t total = 0;
    for (auto x : w) total += x + 2;
    out << std::string(total - 2, '-') << '\n';
    for (const auto& r : rows_) line(r);
    return out.str();
  }

 private:
  std::string title_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::string parameter_label(const std::string& p, bool has_moderators) {
  if (p == "mu") return has_moderators ? "Adjusted effect" : "Effect";
  if (p == "tau") return "Heterogeneity (tau)";
  if (p == "I2") return "I2 (%)";
  if (p == "rho") return "Variance allocation (rho)";
  if (p.rfind("beta:", 0) == 0) return p.substr(5);
  return p;
}

inline void estimates_table(std::ostringstream& out, const std::string& title, const EnsembleSummary& s,
                            const std::vector<Estimate>& rows) {
  const std::string lo = fixed(100.0 * (1.0 - s.level) / 2.0, 1) + "%";
  const std::string hi = fixed(100.0 * (1.0 + s.level) / 2.0, 1) + "%";
  Table t(title, {"", "Mean", "Median", lo, hi});
  std::vector<std::string> pred;
  for (const auto& e : rows) {
    if (e.parameter.rfind("beta:", 0) == 0 || e.parameter == "PET" || e.parameter == "PEESE") continue;
    t.row({parameter_label(e.parameter, s.has_moderators), fixed(e.mean), fixed(e.median), fixed(e.lower), fixed(e.upper)});
    if (e.pi_lower) pred = {"Prediction interval", "", "", fixed(*e.pi_lower), fixed(*e.pi_upper)};
  }
  if (!pred.empty()) t.row(pred);
  out << t.str();
  if (s.transform != "identity" && !rows.empty())
    out << "Effect rows are on the " << s.transform << " scale; heterogeneity is on the " << s.measure << " scale.\n";
  out << '\n';
}

}  // namespace detail

inline std::string render_tables(const EnsembleSummary& s, const ReportOptions& opt = {}) {
  using detail::fixed;
  std::ostringstream out;
  const std::string bf_name = to_string(opt.bf) == "logBF10" ? "log(BF10)" : to_string(opt.bf);

  detail::Table tests("Meta-Analytic Tests", {"", "P(M)", "P(M|data)", "Inclusion " + bf_name});
  detail::Table terms("Meta-Regression Terms Tests", {"", "P(M)", "P(M|data)", "Inclusion " + bf_name});
  for (const auto& t : s.tests) {
    const bool moderator = t.component != "Effect" && t.component != "Adjusted effect" &&
                           t.component != "Heterogeneity" && t.component != "Publication bias";
    (moderator ? terms : tests).row({t.component, fixed(t.prior_prob), fixed(t.posterior_prob), detail::bf_text(t, opt.bf)});
  }
  out << tests.str() << '\n';
  if (s.has_moderators) out << terms.str() << '\n';

  detail::estimates_table(out, "Meta-Analytic Estimates (model-averaged)", s, s.averaged);
  if (opt.conditional) detail::estimates_table(out, "Conditional Meta-Analytic Estimates", s, s.conditional);

  auto coefficient_table = [&](const std::string& title, const std::vector<Estimate>& rows) {
    detail::Table t(title, {"", "Mean", "Median", "2.5%", "97.5%"});
    for (const auto& e : rows)
      if (e.parameter.rfind("beta:", 0) == 0)
        t.row({e.parameter.substr(5), fixed(e.mean), fixed(e.median), fixed(e.lower), fixed(e.upper)});
    if (!t.empty()) out << t.str() << '\n';
  };
  if (s.has_moderators) {
    coefficient_table("Meta-Regression Coefficients (model-averaged)", s.averaged);
    if (opt.conditional) coefficient_table("Conditional Meta-Regression Coefficients", s.conditional);
  }

  auto weight_table = [&](const std::string& title, const std::vector<Estimate>& rows) {
    detail::Table t(title, {"p-value interval", "Mean", "Median", "2.5%", "97.5%"});
    for (const auto& e : rows) t.row({e.parameter.substr(5), fixed(e.mean), fixed(e.median), fixed(e.lower), fixed(e.upper)});
    if (!t.empty()) out << t.str() << '\n';
  };
  weight_table("Weight Function Estimates (model-averaged, one-sided p-values)", s.weight_function_averaged);
  if (opt.conditional) weight_table("Conditional Weight Function Estimates", s.weight_function_conditional);

  auto pet_table = [&](const std::string& title, const std::vector<Estimate>& rows) {
    detail::Table t(title, {"", "Mean", "Median", "2.5%", "97.5%"});
    for (const auto& e : rows)
      if (e.parameter == "PET" || e.parameter == "PEESE")
        t.row({e.parameter, fixed(e.mean), fixed(e.median), fixed(e.lower), fixed(e.upper)});
    if (!t.empty()) out << t.str() << '\n';
  };
  if (s.has_pet_peese) {
    pet_table("PET-PEESE Estimates (model-averaged)", s.averaged);
    if (opt.conditional) pet_table("Conditional PET-PEESE Estimates", s.conditional);
  }

  if (!s.emms.empty()) {
    detail::Table t("Estimated Marginal Means", {"Term", "Level", "Mean", "Median", "2.5%", "97.5%", "BF10 vs 0"});
    for (const auto& e : s.emms)
      t.row({e.term, e.level, fixed(e.estimate.mean), fixed(e.estimate.median), fixed(e.estimate.lower),
             fixed(e.estimate.upper), e.bf10 ? fixed(*e.bf10) : ""});
    out << t.str() << '\n';
  }

  if (opt.models) {
    detail::Table t("Model Summary", {"#", "Model", "P(M)", "P(M|data)", "log(ML)", "MCSE", "Method", "BF", "min ESS", "max R-hat"});
    for (std::size_t i = 0; i < s.models.size(); ++i) {
      const auto& m = s.models[i];
      t.row({std::to_string(i + 1), m.label, fixed(m.prior_prob), fixed(m.posterior_prob), fixed(m.log_marglik),
             fixed(m.log_marglik_mcse, 5), m.method, fixed(m.inclusion_bf), std::isfinite(m.min_ess) ? fixed(m.min_ess, 0) : "",
             fixed(m.max_rhat)});
    }
    out << t.str() << '\n';
  }

  if (!s.tests.empty()) {
    out << "Evidence:\n";
    for (const auto& t : s.tests)
      if (t.applicable) out << "  " << t.component << ": " << evidence_label(t.infinite ? kInf : t.bf10()) << " inclusion\n";
    out << '\n';
  }
  if (!s.footnotes.empty()) {
    out << "Notes:\n";
    for (const auto& f : s.footnotes) out << "  " << f << '\n';
    out << '\n';
  }
  if (!s.warnings.empty()) {
    out << "Warnings:\n";
    for (const auto& w : s.warnings) out << "  " << w << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json num(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
  return v;
}

inline double num(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "NaN") return kNaN;
    if (s == "Infinity") return kInf;
    if (s == "-Infinity") return -kInf;
    throw InputError("malformed number '" + s + "' in report");
  }
  return j.get<double>();
}

inline nlohmann::json estimate_json(const Estimate& e) {
  nlohmann::json j{{"parameter", e.parameter}, {"mean", num(e.mean)}, {"median", num(e.median)},
                   {"lower", num(e.lower)}, {"upper", num(e.upper)}};
  if (e.pi_lower) j["prediction"] = {num(*e.pi_lower), num(*e.pi_upper)};
  return j;
}

inline Estimate estimate_from_json(const nlohmann::json& j) {
  Estimate e;
  e.parameter = j.at("parameter").get<std::string>();
  e.mean = num(j.at("mean"));
  e.median = num(j.at("median"));
  e.lower = num(j.at("lower"));
  e.upper = num(j.at("upper"));
  if (j.contains("prediction")) {
    e.pi_lower = num(j.at("prediction").at(0));
    e.pi_upper = num(j.at("prediction").at(1));
  }
  return e;
}

inline nlohmann::json estimates_json(const std::vector<Estimate>& v) {
  auto a = nlohmann::json::array();
  for (const auto& e : v) a.push_back(estimate_json(e));
  return a;
}

inline std::vector<Estimate> estimates_from_json(const nlohmann::json& j) {
  std::vector<Estimate> v;
  for (const auto& e : j) v.push_back(estimate_from_json(e));
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const EnsembleSummary& s) {
  using detail::num;
  nlohmann::json j;
  j["format"] = "bma-report";
  j["version"] = 1;
  j["measure"] = s.measure;
  j["transform"] = s.transform;
  j["studies"] = s.studies;
  j["level"] = s.level;
  j["has_moderators"] = s.has_moderators;
  j["has_bias"] = s.has_bias;
  j["has_pet_peese"] = s.has_pet_peese;
  auto tests = nlohmann::json::array();
  for (const auto& t : s.tests)
    tests.push_back({{"component", t.component}, {"prior_prob", num(t.prior_prob)}, {"posterior_prob", num(t.posterior_prob)},
                     {"log_bf10", num(t.log_bf10)}, {"bf10", num(t.bf10())}, {"applicable", t.applicable},
                     {"infinite_display", t.infinite}, {"unstable", t.unstable()}});
  j["tests"] = tests;
  j["estimates"] = {{"averaged", detail::estimates_json(s.averaged)}, {"conditional", detail::estimates_json(s.conditional)}};
  j["weight_function"] = {{"averaged", detail::estimates_json(s.weight_function_averaged)},
                          {"conditional", detail::estimates_json(s.weight_function_conditional)}};
  auto emms = nlohmann::json::array();
  for (const auto& e : s.emms) {
    nlohmann::json r{{"term", e.term}, {"level", e.level}, {"estimate", detail::estimate_json(e.estimate)}};
    r["bf10"] = e.bf10 ? num(*e.bf10) : nlohmann::json(nullptr);
    emms.push_back(r);
  }
  j["emms"] = emms;
  auto models = nlohmann::json::array();
  for (const auto& m : s.models)
    models.push_back({{"label", m.label}, {"prior_prob", num(m.prior_prob)}, {"posterior_prob", num(m.posterior_prob)},
                      {"log_marglik", num(m.log_marglik)}, {"log_marglik_mcse", num(m.log_marglik_mcse)},
                      {"method", m.method}, {"inclusion_bf", num(m.inclusion_bf)}, {"min_ess", num(m.min_ess)},
                      {"max_rhat", num(m.max_rhat)}});
  j["models"] = models;
  j["footnotes"] = s.footnotes;
  j["warnings"] = s.warnings;
  return j;
}

inline EnsembleSummary summary_from_json(const nlohmann::json& j) {
  using detail::num;
  try {
    if (j.value("format", "") != "bma-report") throw InputError("not a report document");
    EnsembleSummary s;
    s.measure = j.at("measure").get<std::string>();
    s.transform = j.at("transform").get<std::string>();
    s.studies = j.at("studies").get<std::size_t>();
    s.level = j.at("level").get<double>();
    s.has_moderators = j.at("has_moderators").get<bool>();
    s.has_bias = j.at("has_bias").get<bool>();
    s.has_pet_peese = j.at("has_pet_peese").get<bool>();
    for (const auto& t : j.at("tests")) {
      ComponentTest c;
      c.component = t.at("component").get<std::string>();
      c.prior_prob = num(t.at("prior_prob"));
      c.posterior_prob = num(t.at("posterior_prob"));
      c.log_bf10 = num(t.at("log_bf10"));
      c.applicable = t.at("applicable").get<bool>();
      c.infinite = t.at("infinite_display").get<bool>();
      s.tests.push_back(c);
    }
    s.averaged = detail::estimates_from_json(j.at("estimates").at("averaged"));
    s.conditional = detail::estimates_from_json(j.at("estimates").at("conditional"));
    s.weight_function_averaged = detail::estimates_from_json(j.at("weight_function").at("averaged"));
    s.weight_function_conditional = detail::estimates_from_json(j.at("weight_function").at("conditional"));
    for (const auto& e : j.at("emms")) {
      EmmRow r;
      r.term = e.at("term").get<std::string>();
      r.level = e.at("level").get<std::string>();
      r.estimate = detail::estimate_from_json(e.at("estimate"));
      if (!e.at("bf10").is_null()) r.bf10 = num(e.at("bf10"));
      s.emms.push_back(r);
    }
    for (const auto& m : j.at("models")) {
      ModelRow r;
      r.label = m.at("label").get<std::string>();
      r.prior_prob = num(m.at("prior_prob"));
      r.posterior_prob = num(m.at("posterior_prob"));
      r.log_marglik = num(m.at("log_marglik"));
      r.log_marglik_mcse = num(m.at("log_marglik_mcse"));
      r.method = m.at("method").get<std::string>();
      r.inclusion_bf = num(m.at("inclusion_bf"));
      r.min_ess = num(m.at("min_ess"));
      r.max_rhat = num(m.at("max_rhat"));
      s.models.push_back(r);
    }
    s.footnotes = j.at("footnotes").get<std::vector<std::string>>();
    s.warnings = j.at("warnings").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed report JSON: ") + e.what());
  }
}

}  // namespace bma
