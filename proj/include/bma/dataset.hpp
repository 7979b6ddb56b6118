#pragma once

// Study-level data: CSV ingestion, the two effect-size helpers and the
// monotone reporting transforms.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "bma/error.hpp"
#include "bma/numerics.hpp"

namespace bma {

enum class EffectSizeMeasure { SMD, LogOR, LogRR, RiskDifference, LogHR, FishersZ, Unspecified };

inline std::string to_string(EffectSizeMeasure m) {
  switch (m) {
    case EffectSizeMeasure::SMD: return "SMD";
    case EffectSizeMeasure::LogOR: return "logOR";
    case EffectSizeMeasure::LogRR: return "logRR";
    case EffectSizeMeasure::RiskDifference: return "RD";
    case EffectSizeMeasure::LogHR: return "logHR";
    case EffectSizeMeasure::FishersZ: return "fishersZ";
    case EffectSizeMeasure::Unspecified: return "unspecified";
  }
  return "unspecified";
}

inline EffectSizeMeasure parse_measure(std::string_view s) {
  for (auto m : {EffectSizeMeasure::SMD, EffectSizeMeasure::LogOR, EffectSizeMeasure::LogRR,
                 EffectSizeMeasure::RiskDifference, EffectSizeMeasure::LogHR,
                 EffectSizeMeasure::FishersZ, EffectSizeMeasure::Unspecified}) {
    if (to_string(m) == s) return m;
  }
  throw InputError("unknown effect size measure '" + std::string(s) + "'");
}

enum class CovariateKind { Continuous, Categorical };

using CovariateValue = std::variant<double, std::string>;

struct StudyRecord {
  std::string id;
  double y = 0.0;
  double se = 1.0;
  std::optional<std::string> cluster;
  std::map<std::string, CovariateValue> covariates;

  bool operator==(const StudyRecord&) const = default;
};

/// Ordered study records sharing one covariate layout. Immutable once built.
class Dataset {
 public:
  Dataset(std::vector<StudyRecord> records, EffectSizeMeasure measure,
          std::map<std::string, CovariateKind> covariate_kinds)
      : records_(std::move(records)), measure_(measure), kinds_(std::move(covariate_kinds)) {
    validate();
  }

  const std::vector<StudyRecord>& records() const { return records_; }
  EffectSizeMeasure measure() const { return measure_; }
  const std::map<std::string, CovariateKind>& covariate_kinds() const { return kinds_; }
  std::size_t size() const { return records_.size(); }
  bool has_clusters() const { return !records_.empty() && records_.front().cluster.has_value(); }

  std::vector<double> effects() const {
    std::vector<double> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.y);
    return out;
  }
  std::vector<double> standard_errors() const {
    std::vector<double> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.se);
    return out;
  }

  /// Sorted distinct levels of a categorical covariate.
  std::vector<std::string> levels(const std::string& name) const {
    std::set<std::string> s;
    for (const auto& r : records_) s.insert(std::get<std::string>(r.covariates.at(name)));
    return {s.begin(), s.end()};
  }

  bool operator==(const Dataset&) const = default;

 private:
  void validate() const {
    if (records_.empty()) throw InputError("dataset has no records");
    const bool clustered = records_.front().cluster.has_value();
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      const std::string where = "row " + std::to_string(i + 1);
      if (!std::isfinite(r.y)) throw InputError(where + ": effect size is not finite");
      if (!std::isfinite(r.se) || r.se <= 0.0)
        throw InputError(where + ": standard error must be positive and finite");
      if (r.cluster.has_value() != clustered)
        throw InputError(where + ": inconsistent cluster column (all records need a label)");
      if (r.covariates.size() != kinds_.size())
        throw InputError(where + ": covariate set differs from the dataset layout");
      for (const auto& [name, kind] : kinds_) {
        auto it = r.covariates.find(name);
        if (it == r.covariates.end()) throw InputError(where + ": missing covariate '" + name + "'");
        const bool numeric = std::holds_alternative<double>(it->second);
        if (numeric != (kind == CovariateKind::Continuous))
          throw InputError(where + ": covariate '" + name + "' has the wrong kind");
        if (numeric && !std::isfinite(std::get<double>(it->second)))
          throw InputError(where + ": covariate '" + name + "' is not finite");
      }
    }
  }

  std::vector<StudyRecord> records_;
  EffectSizeMeasure measure_;
  std::map<std::string, CovariateKind> kinds_;
};

// ---------------------------------------------------------------------------
// CSV

/// Column mapping for load_csv. Either `se` or `variance` must be mapped.
struct CsvSchema {
  std::string effect;
  std::string se;
  std::string variance;
  std::string id;
  std::string cluster;
  std::vector<std::string> covariates;
  std::map<std::string, CovariateKind> kind_overrides;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace detail

inline Dataset parse_csv(std::istream& in, const CsvSchema& schema, EffectSizeMeasure measure) {
  if (schema.effect.empty()) throw InputError("no effect-size column mapped");
  if (schema.se.empty() == schema.variance.empty())
    throw InputError("map exactly one of the standard-error or variance columns");

  std::string line;
  if (!std::getline(in, line)) throw InputError("CSV input is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InputError("missing column '" + name + "'");
  };
  const std::size_t effect_col = column(schema.effect);
  const std::size_t se_col = column(schema.se.empty() ? schema.variance : schema.se);
  const std::optional<std::size_t> id_col =
      schema.id.empty() ? std::nullopt : std::optional(column(schema.id));
  const std::optional<std::size_t> cluster_col =
      schema.cluster.empty() ? std::nullopt : std::optional(column(schema.cluster));
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column(c));

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError("row " + std::to_string(rows.size() + 1) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(cells.size()));
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw InputError("CSV has a header but no data rows");

  std::map<std::string, CovariateKind> kinds;
  for (std::size_t j = 0; j < schema.covariates.size(); ++j) {
    const auto& name = schema.covariates[j];
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i][cov_cols[j]].empty())
        throw InputError("row " + std::to_string(i + 1) + ": missing value for covariate '" +
                         name + "'");
    if (auto it = schema.kind_overrides.find(name); it != schema.kind_overrides.end()) {
      kinds[name] = it->second;
      continue;
    }
    bool numeric = true;
    for (const auto& r : rows) {
      auto v = detail::parse_real(r[cov_cols[j]]);
      if (!v || !std::isfinite(*v)) {
        numeric = false;
        break;
      }
    }
    kinds[name] = numeric ? CovariateKind::Continuous : CovariateKind::Categorical;
  }

  std::vector<StudyRecord> records;
  records.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string where = "row " + std::to_string(i + 1);
    StudyRecord rec;
    rec.id = id_col ? r[*id_col] : std::to_string(i + 1);
    auto y = detail::parse_real(r[effect_col]);
    if (!y || !std::isfinite(*y)) throw InputError(where + ": effect size is not a finite number");
    rec.y = *y;
    auto s = detail::parse_real(r[se_col]);
    if (!s || !std::isfinite(*s) || *s <= 0.0)
      throw InputError(where + ": " + (schema.se.empty() ? "variance" : "standard error") +
                       " must be positive and finite");
    rec.se = schema.se.empty() ? std::sqrt(*s) : *s;
    if (cluster_col) {
      if (r[*cluster_col].empty()) throw InputError(where + ": inconsistent cluster column (empty label)");
      rec.cluster = r[*cluster_col];
    }
    for (std::size_t j = 0; j < schema.covariates.size(); ++j) {
      const auto& name = schema.covariates[j];
      const auto& cell = r[cov_cols[j]];
      if (kinds[name] == CovariateKind::Continuous) {
        auto v = detail::parse_real(cell);
        if (!v || !std::isfinite(*v))
          throw InputError(where + ": covariate '" + name + "' is not a finite number");
        rec.covariates[name] = *v;
      } else {
        rec.covariates[name] = cell;
      }
    }
    records.push_back(std::move(rec));
  }
  return Dataset(std::move(records), measure, std::move(kinds));
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema, EffectSizeMeasure measure) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return parse_csv(in, schema, measure);
}

/// Writes a CSV that load_csv reads back with `csv_schema_for(data)`.
inline std::string to_csv(const Dataset& data) {
  std::ostringstream out;
  out << "id,y,se";
  if (data.has_clusters()) out << ",cluster";
  for (const auto& [name, kind] : data.covariate_kinds()) out << ',' << detail::quote_csv(name);
  out << '\n';
  for (const auto& r : data.records()) {
    out << detail::quote_csv(r.id) << ',' << detail::format_real(r.y) << ','
        << detail::format_real(r.se);
    if (r.cluster) out << ',' << detail::quote_csv(*r.cluster);
    for (const auto& [name, kind] : data.covariate_kinds()) {
      const auto& v = r.covariates.at(name);
      out << ',';
      if (kind == CovariateKind::Continuous)
        out << detail::format_real(std::get<double>(v));
      else
        out << detail::quote_csv(std::get<std::string>(v));
    }
    out << '\n';
  }
  return out.str();
}

inline CsvSchema csv_schema_for(const Dataset& data) {
  CsvSchema s;
  s.effect = "y";
  s.se = "se";
  s.id = "id";
  if (data.has_clusters()) s.cluster = "cluster";
  for (const auto& [name, kind] : data.covariate_kinds()) {
    s.covariates.push_back(name);
    s.kind_overrides[name] = kind;
  }
  return s;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const Dataset& data) {
  nlohmann::json j;
  j["measure"] = to_string(data.measure());
  auto& kinds = j["covariate_kinds"] = nlohmann::json::object();
  for (const auto& [name, kind] : data.covariate_kinds())
    kinds[name] = kind == CovariateKind::Continuous ? "continuous" : "categorical";
  auto& recs = j["records"] = nlohmann::json::array();
  for (const auto& r : data.records()) {
    nlohmann::json jr{{"id", r.id}, {"y", r.y}, {"se", r.se}};
    if (r.cluster) jr["cluster"] = *r.cluster;
    auto& cov = jr["covariates"] = nlohmann::json::object();
    for (const auto& [name, v] : r.covariates)
      std::visit([&](const auto& x) { cov[name] = x; }, v);
    recs.push_back(std::move(jr));
  }
  return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  try {
    std::map<std::string, CovariateKind> kinds;
    for (const auto& [name, k] : j.at("covariate_kinds").items()) {
      const auto s = k.get<std::string>();
      if (s != "continuous" && s != "categorical")
        throw InputError("covariate kind must be continuous or categorical");
      kinds[name] = s == "continuous" ? CovariateKind::Continuous : CovariateKind::Categorical;
    }
    std::vector<StudyRecord> records;
    for (const auto& jr : j.at("records")) {
      StudyRecord r;
      r.id = jr.at("id").get<std::string>();
      r.y = jr.at("y").get<double>();
      r.se = jr.at("se").get<double>();
      if (jr.contains("cluster")) r.cluster = jr.at("cluster").get<std::string>();
      if (jr.contains("covariates")) {
        for (const auto& [name, v] : jr.at("covariates").items()) {
          if (v.is_number())
            r.covariates[name] = v.get<double>();
          else
            r.covariates[name] = v.get<std::string>();
        }
      }
      records.push_back(std::move(r));
    }
    return Dataset(std::move(records), parse_measure(j.at("measure").get<std::string>()),
                   std::move(kinds));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed dataset JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Effect-size helpers

struct EffectEstimate {
  double y;
  double se;
};

/// Fisher's z of a correlation with its large-sample standard error.
inline EffectEstimate fishers_z(double r, int n) {
  if (!(std::abs(r) < 1.0)) throw DomainError("correlation must lie in (-1, 1)");
  if (n < 4) throw DomainError("Fisher's z needs a sample size of at least 4");
  return {std::atanh(r), 1.0 / std::sqrt(static_cast<double>(n - 3))};
}

/// Log odds ratio and standard error recovered from a reported confidence
/// interval at coverage `level`.
inline EffectEstimate logor_from_ci(double odds_ratio, double lo, double hi, double level = 0.95) {
  if (!(lo > 0.0)) throw DomainError("confidence bounds must be positive");
  if (!(lo < odds_ratio && odds_ratio < hi))
    throw DomainError("odds ratio must lie strictly inside its confidence interval");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("coverage level must lie in (0, 1)");
  const double q = norm_quantile((1.0 + level) / 2.0);
  return {std::log(odds_ratio), (std::log(hi) - std::log(lo)) / (2.0 * q)};
}

// ---------------------------------------------------------------------------
// Reporting transforms (all strictly increasing)

enum class Transform { Identity, FishersZToR, Exponential };

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::Identity: return "identity";
    case Transform::FishersZToR: return "fishersZToR";
    case Transform::Exponential: return "exponential";
  }
  return "identity";
}

inline Transform parse_transform(std::string_view s) {
  for (auto t : {Transform::Identity, Transform::FishersZToR, Transform::Exponential})
    if (to_string(t) == s) return t;
  throw InputError("unknown transform '" + std::string(s) + "'");
}

inline double apply_transform(Transform t, double x) {
  switch (t) {
    case Transform::Identity: return x;
    case Transform::FishersZToR: return std::tanh(x);
    case Transform::Exponential: return std::exp(x);
  }
  return x;
}

inline std::vector<double> apply_transform(Transform t, std::span<const double> xs) {
  std::vector<double> out(xs.begin(), xs.end());
  for (double& x : out) x = apply_transform(t, x);
  return out;
}

}  // namespace bma
