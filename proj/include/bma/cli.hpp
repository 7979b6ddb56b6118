#pragma once

// Command-line front end: escalc, fit, report, plot, sensitivity, validate.
// Exit codes: 0 success, 1 user error, 2 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bma/config.hpp"

namespace bma {

namespace cli {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string summary_text(const EnsembleSummary& s) { return to_json(s).dump(2) + "\n"; }

/// Adds effect sizes to a CSV: Fisher's z from correlations or log odds
/// ratios from reported confidence intervals.
inline std::string escalc(const std::string& csv, const std::string& kind, const std::vector<std::string>& cols,
                          double level, const std::string& yi, const std::string& sei) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw InputError("escalc input is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InputError("escalc: no column '" + name + "' in the input");
  };
  std::vector<std::size_t> idx;
  for (const auto& c : cols) idx.push_back(column(c));
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << detail::quote_csv(header[i]);
  out << "," << detail::quote_csv(yi) << "," << detail::quote_csv(sei) << "\n";
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) throw InputError("escalc: row " + std::to_string(row) + " has the wrong number of cells");
    std::vector<double> v;
    for (auto k : idx) {
      const auto x = detail::parse_real(cells[k]);
      if (!x) throw InputError("escalc: row " + std::to_string(row) + ": '" + cells[k] + "' is not a number");
      v.push_back(*x);
    }
    EffectEstimate e{};
    try {
      if (kind == "fishersZ") {
        if (std::floor(v[1]) != v[1]) throw DomainError("sample size must be an integer");
        e = fishers_z(v[0], static_cast<int>(v[1]));
      } else {
        e = logor_from_ci(v[0], v[1], v[2], level);
      }
    } catch (const DomainError& err) {
      throw DomainError("escalc: row " + std::to_string(row) + ": " + err.what());
    }
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << detail::quote_csv(cells[i]);
    out << "," << detail::format_real(e.y) << "," << detail::format_real(e.se) << "\n";
  }
  return out.str();
}

struct ProfileChoice {
  std::string name;
  PriorConfig priors;
};

/// "default", "medicine:<subfield>" or "custom" (the config's own custom
/// priors), each optionally followed by ":scale=<b>".
inline ProfileChoice parse_profile(const std::string& text, const PriorConfig& base) {
  ProfileChoice c;
  c.name = text;
  c.priors = base;
  c.priors.scale = 1.0;
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.empty()) throw InputError("empty prior profile");
  std::size_t next = 1;
  if (parts[0] == "default") {
    c.priors.source = ProfileSource::Default;
  } else if (parts[0] == "medicine") {
    if (parts.size() < 2 || parts[1].empty()) throw InputError("profile '" + text + "' needs medicine:<subfield>");
    c.priors.source = ProfileSource::Medicine;
    c.priors.subfield = parts[1];
    next = 2;
  } else if (parts[0] == "custom") {
    if (!base.custom_effect) throw InputError("profile 'custom' needs custom priors in the configuration");
    c.priors.source = ProfileSource::Custom;
  } else {
    throw InputError("unknown prior profile '" + text + "' (use default, medicine:<subfield> or custom)");
  }
  for (; next < parts.size(); ++next) {
    if (parts[next].rfind("scale=", 0) != 0) throw InputError("unknown profile option '" + parts[next] + "'");
    const auto v = detail::parse_real(parts[next].substr(6));
    if (!v || !(*v > 0.0)) throw InputError("profile scale must be a positive number");
    c.priors.scale = *v;
  }
  return c;
}

struct SensitivityRow {
  std::string profile;
  std::string effect_prior;
  std::string heterogeneity_prior;
  double effect_scale = kNaN;
  EnsembleSummary summary;
};

inline std::string sensitivity_text(const std::vector<SensitivityRow>& rows) {
  std::ostringstream out;
  std::vector<std::string> header{"Profile", "Effect prior", "Heterogeneity prior"};
  for (const auto& t : rows.front().summary.tests) header.push_back("BF10 " + t.component);
  header.push_back("Effect mean [CI]");
  detail::Table t("Prior Sensitivity", header);
  for (const auto& r : rows) {
    std::vector<std::string> cells{r.profile, r.effect_prior, r.heterogeneity_prior};
    for (const auto& test : r.summary.tests) cells.push_back(detail::bf_text(test, BfDirection::BF10));
    const auto& mu = r.summary.estimate("mu");
    cells.push_back(detail::estimate_text(mu.mean, mu.lower, mu.upper));
    t.row(cells);
  }
  out << t.str() << '\n';
  const auto& ref = rows.front();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "Effect prior scale ratio (%s / %s): %.2f\n", rows[i].profile.c_str(),
                  ref.profile.c_str(), rows[i].effect_scale / ref.effect_scale);
    out << buf;
    std::vector<std::string> changed;
    for (std::size_t k = 0; k < ref.summary.tests.size() && k < rows[i].summary.tests.size(); ++k) {
      const auto& a = ref.summary.tests[k];
      const auto& b = rows[i].summary.tests[k];
      if (!a.applicable || !b.applicable) continue;
      const double ba = a.infinite ? kInf : a.bf10(), bb = b.infinite ? kInf : b.bf10();
      if (evidence_label(ba) != evidence_label(bb)) changed.push_back(a.component);
    }
    if (changed.empty()) {
      out << "Qualitative conclusions (evidence bands) match the " << ref.profile << " profile.\n";
    } else {
      out << "Evidence bands differ from the " << ref.profile << " profile for:";
      for (const auto& c : changed) out << " " << c << ";";
      out << "\n";
    }
  }
  return out.str();
}

inline nlohmann::json sensitivity_json(const std::vector<SensitivityRow>& rows) {
  auto a = nlohmann::json::array();
  for (const auto& r : rows)
    a.push_back({{"profile", r.profile}, {"effect_prior", r.effect_prior}, {"heterogeneity_prior", r.heterogeneity_prior},
                 {"effect_scale", r.effect_scale},
                 {"scale_ratio", r.effect_scale / rows.front().effect_scale},
                 {"summary", to_json(r.summary)}});
  return {{"format", "bma-sensitivity"}, {"reference", rows.front().profile}, {"profiles", a}};
}

}  // namespace cli

/// Runs the command line; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian model-averaged meta-analysis", "bma"};
  app.require_subcommand(1);

  // escalc
  auto* esc = app.add_subcommand("escalc", "Compute effect sizes and standard errors from a CSV");
  std::string esc_in, esc_out, esc_type = "fishersZ", esc_r = "ri", esc_n = "ni", esc_or = "or", esc_lo = "lower",
                                esc_hi = "upper", esc_yi = "yi", esc_sei = "sei";
  double esc_level = 0.95;
  esc->add_option("--input", esc_in, "Input CSV")->required();
  esc->add_option("--output", esc_out, "Output CSV (default: stdout)");
  esc->add_option("--type", esc_type, "fishersZ or logOR")->check(CLI::IsMember({"fishersZ", "logOR"}));
  esc->add_option("--r", esc_r, "Correlation column (fishersZ)");
  esc->add_option("--n", esc_n, "Sample-size column (fishersZ)");
  esc->add_option("--or", esc_or, "Odds-ratio column (logOR)");
  esc->add_option("--lower", esc_lo, "Lower CI bound column (logOR)");
  esc->add_option("--upper", esc_hi, "Upper CI bound column (logOR)");
  esc->add_option("--level", esc_level, "CI coverage (logOR)");
  esc->add_option("--yi", esc_yi, "Name of the effect-size column to add");
  esc->add_option("--sei", esc_sei, "Name of the standard-error column to add");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model ensemble described by a configuration");
  std::string fit_config, fit_out;
  std::optional<std::uint64_t> fit_seed;
  std::optional<unsigned> fit_threads;
  bool fit_quiet = false;
  fit_cmd->add_option("--config", fit_config, "Analysis configuration (JSON)")->required();
  fit_cmd->add_option("--seed", fit_seed, "Override the configured seed");
  fit_cmd->add_option("--out", fit_out, "Output directory (overrides output.directory)");
  fit_cmd->add_option("--threads", fit_threads, "Worker threads (0: all cores)");
  fit_cmd->add_flag("--quiet", fit_quiet, "No progress output");

  // report
  auto* rep = app.add_subcommand("report", "Render tables from a stored fit or summary");
  std::string rep_fit, rep_summary, rep_json;
  std::optional<std::string> rep_bf;
  bool rep_conditional = false, rep_models = false;
  auto* rep_fit_opt = rep->add_option("--fit", rep_fit, "Fit bundle written by 'fit'");
  auto* rep_sum_opt = rep->add_option("--summary", rep_summary, "Summary JSON written by 'fit'");
  rep_fit_opt->excludes(rep_sum_opt);
  rep->add_option("--json", rep_json, "Also write the summary JSON here");
  rep->add_option("--bf", rep_bf, "BF10, BF01 or logBF10")->check(CLI::IsMember({"BF10", "BF01", "logBF10"}));
  rep->add_flag("--conditional", rep_conditional, "Include conditional tables");
  rep->add_flag("--models", rep_models, "Include the model table");

  // plot
  auto* plt = app.add_subcommand("plot", "Render an SVG figure from a stored fit");
  std::string plt_fit, plt_kind, plt_param, plt_mod, plt_out;
  std::vector<std::string> plt_sections;
  bool plt_conditional = false, plt_transformed = false;
  std::optional<std::size_t> plt_model;
  plt->add_option("--fit", plt_fit, "Fit bundle written by 'fit'")->required();
  plt->add_option("--kind", plt_kind, "forest, bubble, prior_posterior, trace, weight_function, pet_peese")
      ->required()
      ->check(CLI::IsMember({"forest", "bubble", "prior_posterior", "trace", "weight_function", "pet_peese"}));
  plt->add_option("--parameter", plt_param, "Parameter (trace, prior_posterior)");
  plt->add_option("--moderator", plt_mod, "Moderator (bubble)");
  plt->add_option("--sections", plt_sections, "Forest sections: studies emm models");
  plt->add_option("--model", plt_model, "Model index for trace plots (0-based)");
  plt->add_flag("--conditional", plt_conditional, "Condition on models including the component");
  plt->add_flag("--transformed", plt_transformed, "Apply the reporting transform to prior/posterior plots");
  plt->add_option("--output", plt_out, "Output SVG file (default: stdout)");

  // sensitivity
  auto* sen = app.add_subcommand("sensitivity", "Refit under alternative prior profiles and compare");
  std::string sen_config, sen_out;
  std::vector<std::string> sen_profiles;
  std::optional<std::uint64_t> sen_seed;
  std::optional<unsigned> sen_threads;
  bool sen_quiet = false;
  sen->add_option("--config", sen_config, "Analysis configuration (JSON)")->required();
  sen->add_option("--profile", sen_profiles, "default | medicine:<subfield> | custom, optionally :scale=<b>")
      ->required()
      ->expected(1, -1);
  sen->add_option("--seed", sen_seed, "Override the configured seed");
  sen->add_option("--threads", sen_threads, "Worker threads (0: all cores)");
  sen->add_option("--json", sen_out, "Write the comparison as JSON");
  sen->add_flag("--quiet", sen_quiet, "No progress output");

  // validate
  auto* val = app.add_subcommand("validate", "Check a configuration without fitting");
  std::string val_config;
  val->add_option("--config", val_config, "Analysis configuration (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*esc) {
      std::vector<std::string> cols = esc_type == "fishersZ" ? std::vector<std::string>{esc_r, esc_n}
                                                             : std::vector<std::string>{esc_or, esc_lo, esc_hi};
      const auto text = cli::escalc(cli::read_text(esc_in), esc_type, cols, esc_level, esc_yi, esc_sei);
      if (esc_out.empty()) out << text;
      else write_file(esc_out, text);
      return 0;
    }

    if (*val) {
      std::ifstream in(val_config);
      if (!in) throw InputError("cannot open configuration '" + val_config + "'");
      nlohmann::json doc;
      try {
        in >> doc;
      } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("configuration is not valid JSON: ") + e.what());
      }
      const auto errors = validate_against(config_schema(), doc);
      if (!errors.empty()) {
        err << "configuration does not match the schema:\n" << format_schema_errors(errors);
        return 1;
      }
      auto config = parse_config(doc, std::filesystem::path(val_config).parent_path());
      // resolves priors and the model space without fitting
      auto a = prepare_analysis(config);
      out << "configuration is valid: " << a.data.size() << " studies, " << a.ensemble.models.size() << " models\n";
      return 0;
    }

    if (*fit_cmd) {
      auto config = load_config(fit_config);
      if (fit_seed) config.mcmc.seed = *fit_seed;
      if (fit_threads) config.threads = *fit_threads;
      if (!fit_out.empty()) config.output.directory = fit_out;
      config.source["mcmc"]["seed"] = config.mcmc.seed;
      auto a = prepare_analysis(config);
      const std::size_t n = a.ensemble.models.size();
      run_fits(a, [&](std::size_t i, const FitResult& f) {
        if (!fit_quiet) err << "[" << i + 1 << "/" << n << "] " << f.model.label() << "\n";
      });
      const auto summary = summarize(a);
      const std::filesystem::path dir(config.output.directory);
      std::filesystem::create_directories(dir);
      const auto tables = render_tables(summary, report_options(config));
      write_file(dir / "summary.json", cli::summary_text(summary));
      write_file(dir / "report.txt", tables);
      write_file(dir / "ensemble.json", to_json(a.ensemble).dump(2) + "\n");
      write_bundle(dir / "fit.cbor", a);
      if (config.output.draws) write_file(dir / "draws.csv", draws_csv(a));
      const auto pc = plot_context(a, summary);
      for (const auto& spec : config.output.plots)
        write_file(dir / (spec.file.empty() ? spec.default_file() : spec.file), render_plot(spec, pc));
      out << tables;
      return 0;
    }

    if (*rep) {
      EnsembleSummary summary;
      ReportOptions ro;
      if (!rep_fit.empty()) {
        const auto a = read_bundle(rep_fit);
        summary = summarize(a);
        ro = report_options(a.config);
      } else if (!rep_summary.empty()) {
        try {
          summary = summary_from_json(nlohmann::json::parse(cli::read_text(rep_summary)));
        } catch (const nlohmann::json::exception& e) {
          throw InputError(std::string("summary is not valid JSON: ") + e.what());
        }
      } else {
        throw InputError("report needs --fit or --summary");
      }
      if (rep_conditional) ro.conditional = true;
      if (rep_models) ro.models = true;
      if (rep_bf) ro.bf = parse_bf_direction(*rep_bf);
      if (!rep_json.empty()) write_file(rep_json, cli::summary_text(summary));
      out << render_tables(summary, ro);
      return 0;
    }

    if (*plt) {
      const auto a = read_bundle(plt_fit);
      PlotSpec spec;
      spec.kind = parse_plot_kind(plt_kind);
      spec.parameter = plt_param;
      spec.moderator = plt_mod;
      spec.conditional = plt_conditional;
      spec.transformed = plt_transformed;
      spec.model = plt_model;
      if (!plt_sections.empty()) spec.sections = plt_sections;
      spec.validate();
      const auto summary = summarize(a);
      const auto svg_text = render_plot(spec, plot_context(a, summary));
      if (plt_out.empty()) out << svg_text;
      else write_file(plt_out, svg_text);
      return 0;
    }

    if (*sen) {
      auto config = load_config(sen_config);
      if (sen_seed) config.mcmc.seed = *sen_seed;
      if (sen_threads) config.threads = *sen_threads;
      const auto data = load_csv(config.data.path, config.data.columns, config.measure);
      std::vector<cli::SensitivityRow> rows;
      for (const auto& text : sen_profiles) {
        const auto choice = cli::parse_profile(text, config.priors);
        auto c = config;
        c.priors = choice.priors;
        auto a = prepare_analysis(c, data);
        if (!sen_quiet) err << "profile " << choice.name << ": fitting " << a.ensemble.models.size() << " models\n";
        run_fits(a);
        cli::SensitivityRow row;
        row.profile = choice.name;
        row.effect_prior = a.profile.effect().alt.describe();
        row.heterogeneity_prior = a.profile.heterogeneity().alt.describe();
        row.effect_scale = a.profile.effect().alt.scale();
        row.summary = summarize(a);
        rows.push_back(std::move(row));
      }
      if (!sen_out.empty()) write_file(sen_out, cli::sensitivity_json(rows).dump(2) + "\n");
      out << cli::sensitivity_text(rows);
      return 0;
    }
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace bma
