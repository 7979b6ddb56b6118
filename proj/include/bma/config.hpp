#pragma once

// Analysis configuration: JSON schema, validation with JSON-pointer error
// paths, conversion to the library types, the fit pipeline and the stored fit
// bundle used by `report` and `plot`.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bma/averaging.hpp"
#include "bma/report.hpp"
#include "bma/svg.hpp"

namespace bma {

inline const char* config_schema_text() {
  return R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "$id": "bma-analysis-config",
  "title": "Bayesian model-averaged meta-analysis configuration",
  "type": "object",
  "required": ["data", "measure"],
  "additionalProperties": false,
  "properties": {
    "data": {
      "type": "object",
      "required": ["path", "effect"],
      "additionalProperties": false,
      "properties": {
        "path": {"type": "string", "minLength": 1},
        "effect": {"type": "string", "minLength": 1},
        "se": {"type": "string", "minLength": 1},
        "variance": {"type": "string", "minLength": 1},
        "id": {"type": "string"},
        "cluster": {"type": "string"},
        "covariates": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "types": {
          "type": "object",
          "additionalProperties": {"enum": ["continuous", "categorical"]}
        }
      },
      "oneOf": [{"required": ["se"]}, {"required": ["variance"]}]
    },
    "measure": {"enum": ["SMD", "logOR", "logRR", "RD", "logHR", "fishersZ", "unspecified"]},
    "priors": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "source": {"enum": ["default", "medicine", "custom"]},
        "subfield": {"type": "string", "minLength": 1},
        "catalog": {"type": "string", "minLength": 1},
        "scale": {"type": "number", "exclusiveMinimum": 0},
        "custom": {
          "type": "object",
          "required": ["effect", "heterogeneity"],
          "additionalProperties": false,
          "properties": {
            "effect": {"$ref": "#/$defs/component"},
            "heterogeneity": {"$ref": "#/$defs/component"},
            "coefficient_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
          }
        }
      },
      "allOf": [
        {
          "if": {"required": ["source"], "properties": {"source": {"const": "medicine"}}},
          "then": {"required": ["subfield"]}
        },
        {
          "if": {"required": ["source"], "properties": {"source": {"const": "custom"}}},
          "then": {"required": ["custom"]}
        }
      ]
    },
    "ensemble": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "effect": {"type": "boolean"},
        "heterogeneity": {"type": "boolean"},
        "moderators": {"type": "boolean"},
        "bias": {"type": "boolean"},
        "bias_family": {"enum": ["PSMA", "PP", "2w", "custom"]},
        "custom_bias": {"type": "array", "minItems": 1, "items": {"$ref": "#/$defs/bias_variant"}}
      },
      "allOf": [
        {
          "if": {"required": ["bias_family"]},
          "then": {"required": ["bias"], "properties": {"bias": {"const": true}}}
        },
        {
          "if": {"required": ["bias_family"], "properties": {"bias_family": {"const": "custom"}}},
          "then": {"required": ["custom_bias"]}
        }
      ]
    },
    "moderators": {"type": "array", "items": {"type": "string", "minLength": 1}, "uniqueItems": true},
    "contrasts": {
      "type": "object",
      "additionalProperties": {"enum": ["orthonormal", "treatment"]}
    },
    "multilevel": {"type": "boolean"},
    "transform": {"enum": ["identity", "fishersZToR", "exponential"]},
    "mcmc": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "chains": {"type": "integer", "minimum": 2},
        "adaptation": {"type": "integer", "minimum": 1},
        "burnin": {"type": "integer", "minimum": 1},
        "sampling": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 0},
        "marglik": {"enum": ["auto", "quadrature", "bridge"]},
        "autofit": {
          "oneOf": [
            {"type": "boolean"},
            {
              "type": "object",
              "additionalProperties": false,
              "properties": {
                "target_ess": {"type": "number", "exclusiveMinimum": 0},
                "max_time": {"type": "number", "minimum": 0}
              }
            }
          ]
        }
      }
    },
    "output": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "directory": {"type": "string", "minLength": 1},
        "conditional": {"type": "boolean"},
        "models": {"type": "boolean"},
        "bf": {"enum": ["BF10", "BF01", "logBF10"]},
        "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "draws": {"type": "boolean"},
        "emm": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "terms": {"type": "array", "items": {"type": "string", "minLength": 1}},
            "test": {"type": "boolean"}
          }
        },
        "plots": {"type": "array", "items": {"$ref": "#/$defs/plot"}}
      }
    }
  },
  "$defs": {
    "bound": {
      "oneOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}]
    },
    "prior": {
      "type": "object",
      "required": ["family", "params"],
      "additionalProperties": false,
      "properties": {
        "family": {"enum": ["point", "spike", "normal", "invgamma", "gamma", "uniform", "cauchy"]},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "truncation": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"$ref": "#/$defs/bound"}}
      }
    },
    "component": {
      "type": "object",
      "required": ["null", "alt"],
      "additionalProperties": false,
      "properties": {
        "null": {"$ref": "#/$defs/prior"},
        "alt": {"$ref": "#/$defs/prior"}
      }
    },
    "bias_variant": {
      "type": "object",
      "required": ["type"],
      "additionalProperties": false,
      "properties": {
        "type": {"enum": ["selection", "PET", "PEESE"]},
        "cutpoints": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "sided": {"enum": ["one-sided", "two-sided"]},
        "alphas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "slope": {"$ref": "#/$defs/prior"},
        "weight": {"type": "number", "exclusiveMinimum": 0}
      },
      "allOf": [
        {
          "if": {"properties": {"type": {"const": "selection"}}},
          "then": {"required": ["cutpoints", "sided"]}
        }
      ]
    },
    "plot": {
      "type": "object",
      "required": ["kind"],
      "additionalProperties": false,
      "properties": {
        "kind": {"enum": ["forest", "bubble", "prior_posterior", "trace", "weight_function", "pet_peese"]},
        "parameter": {"type": "string", "minLength": 1},
        "moderator": {"type": "string", "minLength": 1},
        "conditional": {"type": "boolean"},
        "sections": {"type": "array", "minItems": 1, "items": {"enum": ["studies", "emm", "models"]}},
        "transformed": {"type": "boolean"},
        "model": {"type": "integer", "minimum": 0},
        "file": {"type": "string", "minLength": 1}
      },
      "allOf": [
        {
          "if": {"properties": {"kind": {"enum": ["trace", "prior_posterior"]}}},
          "then": {"required": ["parameter"]}
        },
        {
          "if": {"properties": {"kind": {"const": "bubble"}}},
          "then": {"required": ["moderator"]}
        }
      ]
    }
  }
}
)json";
}

inline const nlohmann::json& config_schema() {
  static const nlohmann::json s = nlohmann::json::parse(config_schema_text());
  return s;
}

// ---------------------------------------------------------------------------
// Schema validation (the subset of draft 2020-12 the published schemas use)

inline std::string to_string(ProfileSource s) {
  switch (s) {
    case ProfileSource::Default: return "default";
    case ProfileSource::Medicine: return "medicine";
    case ProfileSource::Custom: return "custom";
  }
  return "default";
}

struct SchemaError {
  std::string pointer;
  std::string message;
};

namespace schema {

inline std::string pointer_token(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

inline std::string type_of(const nlohmann::json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

inline bool has_type(const nlohmann::json& v, const std::string& t) {
  const auto actual = type_of(v);
  if (t == "number") return actual == "number" || actual == "integer";
  if (t == "integer" && actual == "number") {
    const double d = v.get<double>();
    return std::floor(d) == d && std::isfinite(d);
  }
  return actual == t;
}

class Validator {
 public:
  explicit Validator(const nlohmann::json& root) : root_(root) {}

  std::vector<SchemaError> validate(const nlohmann::json& instance) const {
    std::vector<SchemaError> errors;
    check(root_, instance, "", errors);
    return errors;
  }

 private:
  const nlohmann::json& resolve(const std::string& ref) const {
    if (ref.rfind("#/", 0) != 0) throw InputError("unsupported schema reference '" + ref + "'");
    return root_.at(nlohmann::json::json_pointer(ref.substr(1)));
  }

  static std::string dump(const nlohmann::json& v) { return v.dump(); }

  void check(const nlohmann::json& s, const nlohmann::json& v, const std::string& at,
             std::vector<SchemaError>& errors) const {
    if (s.is_boolean()) {
      if (!s.get<bool>()) errors.push_back({at, "no value is allowed here"});
      return;
    }
    if (s.contains("$ref")) check(resolve(s["$ref"].get<std::string>()), v, at, errors);
    if (s.contains("type")) {
      bool ok = false;
      if (s["type"].is_array()) {
        for (const auto& t : s["type"]) ok = ok || has_type(v, t.get<std::string>());
      } else {
        ok = has_type(v, s["type"].get<std::string>());
      }
      if (!ok) {
        errors.push_back({at, "expected " + (s["type"].is_string() ? s["type"].get<std::string>() : dump(s["type"])) +
                                  ", found " + type_of(v)});
        return;
      }
    }
    if (s.contains("const") && v != s["const"]) errors.push_back({at, "must equal " + dump(s["const"])});
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s["enum"]) found = found || e == v;
      if (!found) errors.push_back({at, dump(v) + " is not one of " + dump(s["enum"])});
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>())
        errors.push_back({at, "must be >= " + dump(s["minimum"])});
      if (s.contains("maximum") && x > s["maximum"].get<double>())
        errors.push_back({at, "must be <= " + dump(s["maximum"])});
      if (s.contains("exclusiveMinimum") && !(x > s["exclusiveMinimum"].get<double>()))
        errors.push_back({at, "must be > " + dump(s["exclusiveMinimum"])});
      if (s.contains("exclusiveMaximum") && !(x < s["exclusiveMaximum"].get<double>()))
        errors.push_back({at, "must be < " + dump(s["exclusiveMaximum"])});
    }
    if (v.is_string() && s.contains("minLength")) {
      // length in code points
      std::size_t n = 0;
      for (unsigned char c : v.get_ref<const std::string&>())
        if ((c & 0xC0) != 0x80) ++n;
      if (n < s["minLength"].get<std::size_t>()) errors.push_back({at, "string is too short"});
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
        errors.push_back({at, "needs at least " + dump(s["minItems"]) + " items"});
      if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>())
        errors.push_back({at, "allows at most " + dump(s["maxItems"]) + " items"});
      if (s.value("uniqueItems", false))
        for (std::size_t i = 0; i < v.size(); ++i)
          for (std::size_t j = 0; j < i; ++j)
            if (v[i] == v[j]) errors.push_back({at + "/" + std::to_string(i), "duplicate item " + dump(v[i])});
      if (s.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i) check(s["items"], v[i], at + "/" + std::to_string(i), errors);
    }
    if (v.is_object()) {
      if (s.contains("required"))
        for (const auto& r : s["required"]) {
          const auto key = r.get<std::string>();
          if (!v.contains(key)) errors.push_back({at + "/" + pointer_token(key), "required property is missing"});
        }
      const nlohmann::json* props = s.contains("properties") ? &s["properties"] : nullptr;
      for (auto it = v.begin(); it != v.end(); ++it) {
        const auto path = at + "/" + pointer_token(it.key());
        if (props && props->contains(it.key())) {
          check((*props)[it.key()], it.value(), path, errors);
        } else if (s.contains("additionalProperties")) {
          const auto& ap = s["additionalProperties"];
          if (ap.is_boolean() && !ap.get<bool>())
            errors.push_back({path, "unknown property '" + it.key() + "'"});
          else if (ap.is_object())
            check(ap, it.value(), path, errors);
        }
      }
    }
    if (s.contains("allOf"))
      for (const auto& sub : s["allOf"]) check(sub, v, at, errors);
    if (s.contains("oneOf")) {
      int matches = 0;
      std::vector<SchemaError> first;
      for (const auto& sub : s["oneOf"]) {
        std::vector<SchemaError> e;
        check(sub, v, at, e);
        if (e.empty()) ++matches;
        else if (first.empty()) first = e;
      }
      if (matches != 1) {
        if (matches == 0 && first.size() == 1 && first.front().pointer != at)
          errors.push_back(first.front());
        else
          errors.push_back({at, matches == 0 ? "matches none of the allowed alternatives"
                                             : "matches more than one of the exclusive alternatives"});
      }
    }
    if (s.contains("if")) {
      std::vector<SchemaError> e;
      check(s["if"], v, at, e);
      if (e.empty()) {
        if (s.contains("then")) {
          std::vector<SchemaError> t;
          check(s["then"], v, at, t);
          for (auto& x : t) {
            x.message += " (" + condition_text(s["if"]) + ")";
            errors.push_back(std::move(x));
          }
        }
      } else if (s.contains("else")) {
        check(s["else"], v, at, errors);
      }
    }
  }

  static std::string condition_text(const nlohmann::json& cond) {
    if (cond.contains("properties")) {
      std::string s;
      for (auto it = cond["properties"].begin(); it != cond["properties"].end(); ++it) {
        if (!s.empty()) s += ", ";
        const auto& c = it.value();
        s += it.key() + (c.contains("const") ? " = " + dump(c["const"]) : c.contains("enum") ? " in " + dump(c["enum"]) : "");
      }
      return "required when " + s;
    }
    if (cond.contains("required")) return "required when " + dump(cond["required"]) + " is given";
    return "conditional requirement";
  }

  const nlohmann::json& root_;
};

}  // namespace schema

inline std::vector<SchemaError> validate_against(const nlohmann::json& schema_doc, const nlohmann::json& instance) {
  return schema::Validator(schema_doc).validate(instance);
}

inline std::string format_schema_errors(const std::vector<SchemaError>& errors) {
  std::string s;
  for (const auto& e : errors) s += (e.pointer.empty() ? "/" : e.pointer) + ": " + e.message + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// AnalysisConfig

struct DataConfig {
  std::string path;
  CsvSchema columns;
};

struct PriorConfig {
  ProfileSource source = ProfileSource::Default;
  std::string subfield;
  std::string catalog;
  double scale = 1.0;
  std::optional<ComponentPriors> custom_effect, custom_heterogeneity;
  double coefficient_fraction = 0.25;
};

struct EmmConfig {
  std::vector<std::string> terms;
  bool test = false;
};

struct OutputConfig {
  std::string directory = "bma-output";
  bool conditional = false;
  bool models = false;
  BfDirection bf = BfDirection::BF10;
  double level = 0.95;
  bool draws = false;
  EmmConfig emm;
  std::vector<PlotSpec> plots;
};

struct AnalysisConfig {
  DataConfig data;
  EffectSizeMeasure measure = EffectSizeMeasure::SMD;
  PriorConfig priors;
  EnsembleSwitches switches;
  std::vector<std::string> moderators;
  std::map<std::string, ContrastKind> contrasts;
  bool multilevel = false;
  Transform transform = Transform::Identity;
  McmcSettings mcmc;
  unsigned threads = 0;
  OutputConfig output;
  nlohmann::json source;  // the validated document, with data and catalog paths resolved
};

namespace detail {

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
  return (base / path).lexically_normal().string();
}

inline ProfileSource parse_source(const std::string& s) {
  if (s == "default") return ProfileSource::Default;
  if (s == "medicine") return ProfileSource::Medicine;
  return ProfileSource::Custom;
}

inline BiasVariant bias_variant_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "selection") {
    const auto sided = j.at("sided").get<std::string>() == "one-sided" ? Sidedness::OneSided : Sidedness::TwoSided;
    return BiasVariant::selection(j.at("cutpoints").get<std::vector<double>>(), sided,
                                  j.value("alphas", std::vector<double>{}));
  }
  const BiasPriors defaults;
  if (type == "PET") return BiasVariant::pet(j.contains("slope") ? prior_from_json(j["slope"]) : defaults.pet);
  return BiasVariant::peese(j.contains("slope") ? prior_from_json(j["slope"]) : defaults.peese);
}

inline PlotSpec plot_from_json(const nlohmann::json& j) {
  PlotSpec p;
  p.kind = parse_plot_kind(j.at("kind").get<std::string>());
  p.parameter = j.value("parameter", "");
  p.moderator = j.value("moderator", "");
  p.conditional = j.value("conditional", false);
  if (j.contains("sections")) p.sections = j["sections"].get<std::vector<std::string>>();
  p.transformed = j.value("transformed", false);
  if (j.contains("model")) p.model = j["model"].get<std::size_t>();
  p.file = j.value("file", "");
  return p;
}

}  // namespace detail

/// Validates `doc` against the configuration schema and converts it. Relative
/// data and catalog paths are resolved against `base_dir`.
inline AnalysisConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  const auto errors = validate_against(config_schema(), doc);
  if (!errors.empty()) throw InputError("configuration does not match the schema:\n" + format_schema_errors(errors));

  AnalysisConfig c;
  c.source = doc;
  const auto& d = doc["data"];
  c.data.path = detail::resolve_path(d["path"].get<std::string>(), base_dir);
  c.source["data"]["path"] = c.data.path;
  c.data.columns.effect = d["effect"].get<std::string>();
  c.data.columns.se = d.value("se", "");
  c.data.columns.variance = d.value("variance", "");
  c.data.columns.id = d.value("id", "");
  c.data.columns.cluster = d.value("cluster", "");
  if (d.contains("covariates")) c.data.columns.covariates = d["covariates"].get<std::vector<std::string>>();
  if (d.contains("types"))
    for (auto it = d["types"].begin(); it != d["types"].end(); ++it)
      c.data.columns.kind_overrides[it.key()] =
          it.value() == "categorical" ? CovariateKind::Categorical : CovariateKind::Continuous;
  c.measure = parse_measure(doc["measure"].get<std::string>());

  if (doc.contains("priors")) {
    const auto& p = doc["priors"];
    c.priors.source = detail::parse_source(p.value("source", "default"));
    c.priors.subfield = p.value("subfield", "");
    c.priors.catalog = detail::resolve_path(p.value("catalog", ""), base_dir);
    if (!c.priors.catalog.empty()) c.source["priors"]["catalog"] = c.priors.catalog;
    c.priors.scale = p.value("scale", 1.0);
    if (p.contains("custom")) {
      const auto& cu = p["custom"];
      c.priors.custom_effect = ComponentPriors{prior_from_json(cu["effect"]["null"]), prior_from_json(cu["effect"]["alt"])};
      c.priors.custom_heterogeneity =
          ComponentPriors{prior_from_json(cu["heterogeneity"]["null"]), prior_from_json(cu["heterogeneity"]["alt"])};
      c.priors.coefficient_fraction = cu.value("coefficient_fraction", 0.25);
    }
  }

  if (doc.contains("ensemble")) {
    const auto& e = doc["ensemble"];
    c.switches.effect_bma = e.value("effect", true);
    c.switches.heterogeneity_bma = e.value("heterogeneity", true);
    c.switches.moderators_bma = e.value("moderators", true);
    c.switches.bias_bma = e.value("bias", false);
    c.switches.bias_family = parse_bias_family(e.value("bias_family", "PSMA"));
    if (e.contains("custom_bias"))
      for (const auto& v : e["custom_bias"])
        c.switches.custom_bias.push_back({detail::bias_variant_from_json(v), v.value("weight", 1.0)});
  }
  if (doc.contains("moderators")) c.moderators = doc["moderators"].get<std::vector<std::string>>();
  if (doc.contains("contrasts"))
    for (auto it = doc["contrasts"].begin(); it != doc["contrasts"].end(); ++it)
      c.contrasts[it.key()] = it.value() == "treatment" ? ContrastKind::Treatment : ContrastKind::Orthonormal;
  c.multilevel = doc.value("multilevel", false);
  c.transform = parse_transform(doc.value("transform", "identity"));

  if (doc.contains("mcmc")) {
    const auto& m = doc["mcmc"];
    c.mcmc.chains = m.value("chains", c.mcmc.chains);
    c.mcmc.adaptation = m.value("adaptation", c.mcmc.adaptation);
    c.mcmc.burnin = m.value("burnin", c.mcmc.burnin);
    c.mcmc.sampling = m.value("sampling", c.mcmc.sampling);
    c.mcmc.seed = m.value("seed", c.mcmc.seed);
    c.threads = m.value("threads", 0u);
    c.mcmc.marglik = parse_marglik_method(m.value("marglik", "auto"));
    if (m.contains("autofit")) {
      const auto& a = m["autofit"];
      if (a.is_object()) {
        AutofitSettings s;
        s.target_ess = a.value("target_ess", s.target_ess);
        s.max_time = a.value("max_time", s.max_time);
        c.mcmc.autofit = s;
      } else if (a.get<bool>()) {
        c.mcmc.autofit = AutofitSettings{};
      }
    }
  }
  c.mcmc.validate();

  if (doc.contains("output")) {
    const auto& o = doc["output"];
    c.output.directory = o.value("directory", c.output.directory);
    c.output.conditional = o.value("conditional", false);
    c.output.models = o.value("models", false);
    c.output.bf = parse_bf_direction(o.value("bf", "BF10"));
    c.output.level = o.value("level", 0.95);
    c.output.draws = o.value("draws", false);
    if (o.contains("emm")) {
      c.output.emm.terms = o["emm"].value("terms", std::vector<std::string>{});
      c.output.emm.test = o["emm"].value("test", false);
    }
    if (o.contains("plots"))
      for (const auto& p : o["plots"]) c.output.plots.push_back(detail::plot_from_json(p));
  }
  for (const auto& t : c.output.emm.terms)
    if (t != "intercept" && std::find(c.moderators.begin(), c.moderators.end(), t) == c.moderators.end())
      throw InputError("/output/emm/terms: '" + t + "' is not a moderator");
  if (c.multilevel && c.data.columns.cluster.empty())
    throw InputError("/multilevel: a multilevel model needs /data/cluster");
  for (const auto& m : c.moderators)
    if (std::find(c.data.columns.covariates.begin(), c.data.columns.covariates.end(), m) ==
        c.data.columns.covariates.end())
      throw InputError("/moderators: '" + m + "' is not listed in /data/covariates");
  return c;
}

inline AnalysisConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open configuration '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("configuration '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Pipeline

inline PriorProfile make_profile(const PriorConfig& p, EffectSizeMeasure measure, const MedicineCatalog* catalog) {
  switch (p.source) {
    case ProfileSource::Default: return default_profile(measure, p.scale);
    case ProfileSource::Medicine:
      if (!catalog) throw InputError("medicine priors need a catalog (priors.catalog)");
      return medicine_profile(*catalog, measure, p.subfield, p.scale);
    case ProfileSource::Custom:
      return custom_profile(*p.custom_effect, *p.custom_heterogeneity, p.coefficient_fraction, p.scale);
  }
  throw InputError("unknown prior source");
}

/// Everything needed to fit or summarize: data, priors, model space.
struct Analysis {
  AnalysisConfig config;
  std::optional<MedicineCatalog> catalog;
  nlohmann::json catalog_json;
  Dataset data;
  PriorProfile profile;
  Ensemble ensemble;
  LikelihoodContext ctx;
  std::vector<FitResult> fits;
};

inline Analysis prepare_analysis(const AnalysisConfig& config, Dataset data, const nlohmann::json& catalog_json = nullptr) {
  std::optional<MedicineCatalog> catalog;
  nlohmann::json cj = catalog_json;
  if (config.priors.source == ProfileSource::Medicine) {
    if (cj.is_null()) {
      if (config.priors.catalog.empty()) throw InputError("/priors/catalog: medicine priors need a catalog file");
      std::ifstream in(config.priors.catalog);
      if (!in) throw InputError("cannot open medicine catalog '" + config.priors.catalog + "'");
      try {
        in >> cj;
      } catch (const nlohmann::json::exception& e) {
        throw InputError("medicine catalog is not valid JSON: " + std::string(e.what()));
      }
    }
    catalog = MedicineCatalog::from_json(cj);
  }
  auto profile = make_profile(config.priors, config.measure, catalog ? &*catalog : nullptr);
  auto ensemble = build_ensemble(profile, config.switches, config.moderators, config.multilevel, data);
  std::optional<DesignMatrix> design;
  if (!config.moderators.empty()) design = build_design(data, config.moderators, config.contrasts);
  LikelihoodContext ctx(data, design, config.multilevel);
  return Analysis{config, catalog, cj, std::move(data), std::move(profile), std::move(ensemble), std::move(ctx), {}};
}

inline Analysis prepare_analysis(const AnalysisConfig& config) {
  auto data = load_csv(config.data.path, config.data.columns, config.measure);
  return prepare_analysis(config, std::move(data));
}

inline void run_fits(Analysis& a, const std::function<void(std::size_t, const FitResult&)>& progress = {}) {
  a.fits = fit_ensemble(a.ensemble, a.ctx, a.config.mcmc, a.config.threads, progress);
}

inline SummaryOptions summary_options(const AnalysisConfig& c) {
  SummaryOptions o;
  o.transform = c.transform;
  o.level = c.output.level;
  o.seed = c.mcmc.seed;
  o.emm_terms = c.output.emm.terms;
  o.emm_test = c.output.emm.test;
  return o;
}

inline EnsembleSummary summarize(const Analysis& a) {
  return summarize(a.ensemble, a.fits, a.ctx, summary_options(a.config));
}

inline ReportOptions report_options(const AnalysisConfig& c) {
  ReportOptions r;
  r.conditional = c.output.conditional;
  r.models = c.output.models;
  r.bf = c.output.bf;
  return r;
}

inline PlotContext plot_context(const Analysis& a, const EnsembleSummary& s) {
  return PlotContext{a.ensemble, a.fits, a.ctx, s, a.config.transform, a.config.mcmc.seed};
}

/// Pooled posterior draws of every model as CSV: model,chain,iteration,<params>.
inline std::string draws_csv(const Analysis& a) {
  std::set<std::string> names;
  for (const auto& f : a.fits) names.insert(f.draws.names.begin(), f.draws.names.end());
  std::ostringstream out;
  out << "model,chain,iteration";
  for (const auto& n : names) out << "," << detail::quote_csv(n);
  out << "\n";
  for (std::size_t m = 0; m < a.fits.size(); ++m) {
    const auto& d = a.fits[m].draws;
    for (std::size_t c = 0; c < d.chains(); ++c)
      for (std::size_t i = 0; i < d.iterations(); ++i) {
        out << m + 1 << "," << c + 1 << "," << i + 1;
        for (const auto& n : names) {
          out << ",";
          if (d.contains(n)) out << detail::format_real(d.at(n)[c][i]);
          else if (const auto v = null_value(n)) out << detail::format_real(*v);
          else out << "NA";
        }
        out << "\n";
      }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Fit bundle (CBOR)

namespace detail {

inline nlohmann::json doubles_binary(const std::vector<double>& v) {
  std::vector<std::uint8_t> bytes(v.size() * sizeof(double));
  // little-endian IEEE 754 on every supported platform
  std::memcpy(bytes.data(), v.data(), bytes.size());
  return nlohmann::json::binary(std::move(bytes));
}

inline std::vector<double> binary_doubles(const nlohmann::json& j) {
  const auto& b = j.get_binary();
  if (b.size() % sizeof(double) != 0) throw InputError("corrupt draw block in fit bundle");
  std::vector<double> v(b.size() / sizeof(double));
  std::memcpy(v.data(), b.data(), b.size());
  return v;
}

inline nlohmann::json fit_to_json(const FitResult& f) {
  nlohmann::json j;
  j["label"] = f.model.label();
  j["key"] = f.key;
  j["chains"] = f.draws.chains();
  j["iterations"] = f.draws.iterations();
  j["sampling"] = f.settings.sampling;
  auto params = nlohmann::json::array();
  for (std::size_t p = 0; p < f.draws.names.size(); ++p) {
    std::vector<double> flat;
    for (const auto& c : f.draws.values[p]) flat.insert(flat.end(), c.begin(), c.end());
    params.push_back({{"name", f.draws.names[p]}, {"draws", doubles_binary(flat)}});
  }
  j["parameters"] = params;
  j["free_names"] = f.free_names;
  j["log_marglik"] = {{"value", f.log_marglik.value}, {"mcse", f.log_marglik.mcse},
                      {"method", to_string(f.log_marglik.method)}};
  auto diag = nlohmann::json::array();
  for (const auto& [name, d] : f.diagnostics.parameters)
    diag.push_back({{"name", name}, {"mcse", d.mcse}, {"relative_mcse", d.relative_mcse}, {"ess", d.ess},
                    {"rhat", d.rhat}, {"degenerate", d.degenerate}});
  j["diagnostics"] = diag;
  j["warnings"] = f.warnings;
  return j;
}

inline FitResult fit_from_json(const nlohmann::json& j, const ModelSpec& model, const McmcSettings& settings) {
  FitResult f;
  f.model = model;
  if (j.at("label").get<std::string>() != model.label())
    throw InputError("fit bundle does not match the configured ensemble (model [" + model.label() + "])");
  f.key = j.at("key").get<std::uint64_t>();
  f.settings = settings;
  f.settings.sampling = j.at("sampling").get<int>();
  const auto chains = j.at("chains").get<std::size_t>();
  const auto iters = j.at("iterations").get<std::size_t>();
  for (const auto& p : j.at("parameters")) {
    f.draws.names.push_back(p.at("name").get<std::string>());
    const auto flat = binary_doubles(p.at("draws"));
    if (flat.size() != chains * iters) throw InputError("corrupt draw block in fit bundle");
    Chains ch(chains);
    for (std::size_t c = 0; c < chains; ++c)
      ch[c].assign(flat.begin() + static_cast<std::ptrdiff_t>(c * iters),
                   flat.begin() + static_cast<std::ptrdiff_t>((c + 1) * iters));
    f.draws.values.push_back(std::move(ch));
  }
  f.free_names = j.at("free_names").get<std::vector<std::string>>();
  f.log_marglik.value = j.at("log_marglik").at("value").get<double>();
  f.log_marglik.mcse = j.at("log_marglik").at("mcse").get<double>();
  f.log_marglik.method = parse_marglik_method(j.at("log_marglik").at("method").get<std::string>());
  for (const auto& d : j.at("diagnostics")) {
    ParameterDiagnostics pd;
    pd.mcse = d.at("mcse").get<double>();
    pd.relative_mcse = d.at("relative_mcse").get<double>();
    pd.ess = d.at("ess").get<double>();
    pd.rhat = d.at("rhat").get<double>();
    pd.degenerate = d.at("degenerate").get<bool>();
    f.diagnostics.parameters.emplace_back(d.at("name").get<std::string>(), pd);
  }
  f.warnings = j.at("warnings").get<std::vector<std::string>>();
  return f;
}

}  // namespace detail

inline std::vector<std::uint8_t> save_bundle(const Analysis& a) {
  nlohmann::json j;
  j["format"] = "bma-fit";
  j["version"] = 1;
  j["config"] = a.config.source;
  j["dataset"] = to_json(a.data);
  j["catalog"] = a.catalog_json;
  auto fits = nlohmann::json::array();
  for (const auto& f : a.fits) fits.push_back(detail::fit_to_json(f));
  j["fits"] = fits;
  return nlohmann::json::to_cbor(j);
}

inline Analysis load_bundle(const std::vector<std::uint8_t>& bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::from_cbor(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("fit bundle is not valid CBOR: ") + e.what());
  }
  try {
    if (j.value("format", "") != "bma-fit") throw InputError("not a fit bundle");
    auto config = parse_config(j.at("config"));
    auto a = prepare_analysis(config, dataset_from_json(j.at("dataset")), j.at("catalog"));
    const auto& fits = j.at("fits");
    if (fits.size() != a.ensemble.models.size()) throw InputError("fit bundle does not match the configured ensemble");
    for (std::size_t i = 0; i < fits.size(); ++i)
      a.fits.push_back(detail::fit_from_json(fits[i], a.ensemble.models[i], config.mcmc));
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed fit bundle: ") + e.what());
  }
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
}

inline void write_bundle(const std::filesystem::path& path, const Analysis& a) {
  const auto bytes = save_bundle(a);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Analysis read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open fit bundle '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_bundle(bytes);
}

}  // namespace bma
