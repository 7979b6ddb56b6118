#pragma once

// SVG 1.1 figures: forest, bubble, prior/posterior, trace, weight function and
// PET-PEESE. Coordinates are printed with fixed precision so identical inputs
// give byte-identical documents.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "bma/averaging.hpp"
#include "bma/error.hpp"

namespace bma {

enum class PlotKind { Forest, Bubble, PriorPosterior, Trace, WeightFunction, PetPeese };

inline std::string to_string(PlotKind k) {
  switch (k) {
    case PlotKind::Forest: return "forest";
    case PlotKind::Bubble: return "bubble";
    case PlotKind::PriorPosterior: return "prior_posterior";
    case PlotKind::Trace: return "trace";
    case PlotKind::WeightFunction: return "weight_function";
    case PlotKind::PetPeese: return "pet_peese";
  }
  return "forest";
}

inline PlotKind parse_plot_kind(const std::string& s) {
  for (auto k : {PlotKind::Forest, PlotKind::Bubble, PlotKind::PriorPosterior, PlotKind::Trace,
                 PlotKind::WeightFunction, PlotKind::PetPeese})
    if (to_string(k) == s) return k;
  throw InputError("unknown plot kind '" + s + "'");
}

struct PlotSpec {
  PlotKind kind = PlotKind::Forest;
  std::string parameter;                          // Trace, PriorPosterior
  std::string moderator;                          // Bubble
  bool conditional = false;
  std::vector<std::string> sections{"studies"};   // Forest: studies, emm, models
  bool transformed = false;                       // PriorPosterior only; others follow the report transform
  std::optional<std::size_t> model;               // Trace: model index (default: most probable with the parameter)
  std::string file;

  void validate() const {
    if ((kind == PlotKind::Trace || kind == PlotKind::PriorPosterior) && parameter.empty())
      throw InputError(to_string(kind) + " plot needs a parameter name");
    if (kind == PlotKind::Bubble && moderator.empty()) throw InputError("bubble plot needs a moderator");
    if (kind == PlotKind::Forest) {
      if (sections.empty()) throw InputError("forest plot needs at least one section");
      for (const auto& s : sections)
        if (s != "studies" && s != "emm" && s != "models") throw InputError("unknown forest section '" + s + "'");
    }
  }

  std::string default_file() const {
    std::string f = to_string(kind);
    if (!parameter.empty()) f += "_" + parameter;
    if (!moderator.empty()) f += "_" + moderator;
    if (conditional) f += "_conditional";
    for (char& c : f)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
    return f + ".svg";
  }
};

struct PlotContext {
  const Ensemble& ensemble;
  const std::vector<FitResult>& fits;
  const LikelihoodContext& ctx;
  const EnsembleSummary& summary;
  Transform transform = Transform::Identity;
  std::uint64_t seed = 1;
};

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

class Document {
 public:
  Document(double width, double height) : w_(width), h_(height) {}

  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black", double width = 1.0,
            const std::string& dash = "") {
    out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
         << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"";
    if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << "\"";
    out_ << "/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none",
            double width = 1.0) {
    out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(std::max(w, 0.0))
         << "\" height=\"" << num(std::max(h, 0.0)) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
         << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill, const std::string& stroke = "black",
              double opacity = 1.0) {
    out_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill
         << "\" stroke=\"" << stroke << "\" fill-opacity=\"" << num(opacity) << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.0,
                const std::string& dash = "") {
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"";
    if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << "\"";
    out_ << " points=\"" << points(pts) << "\"/>\n";
  }
  void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& fill,
               const std::string& stroke = "none", double opacity = 1.0) {
    out_ << "<polygon fill=\"" << fill << "\" stroke=\"" << stroke << "\" fill-opacity=\"" << num(opacity)
         << "\" points=\"" << points(pts) << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "start", double size = 11.0,
            const std::string& extra = "") {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size) << "\" text-anchor=\""
         << anchor << "\"";
    if (!extra.empty()) out_ << " " << extra;
    out_ << ">" << escape(s) << "</text>\n";
  }
  /// Upward arrow from y0 to y1 (y1 above y0).
  void arrow(double x, double y0, double y1, const std::string& stroke, double width = 2.0) {
    line(x, y0, x, y1 + 6.0, stroke, width);
    polygon({{x - 5.0, y1 + 8.0}, {x + 5.0, y1 + 8.0}, {x, y1}}, stroke, stroke);
  }

  std::string str() const {
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(w_) << "\" height=\"" << num(h_)
      << "\" viewBox=\"0 0 " << num(w_) << " " << num(h_) << "\" font-family=\"Helvetica, Arial, sans-serif\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << num(w_) << "\" height=\"" << num(h_) << "\" fill=\"white\"/>\n"
      << out_.str() << "</svg>\n";
    return s.str();
  }

 private:
  static std::string points(const std::vector<std::pair<double, double>>& pts) {
    std::string s;
    for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + num(pts[i].first) + "," + num(pts[i].second);
    return s;
  }

  double w_, h_;
  std::ostringstream out_;
};

/// Roughly five round tick positions covering [lo, hi].
inline std::vector<double> ticks(double lo, double hi, int target = 5) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + 1e-9 * step; t += step) out.push_back(t);
  return out;
}

/// Data-to-pixel mapping for one rectangular panel.
struct Panel {
  double left, top, width, height;
  double x0, x1, y0, y1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * width; }
  double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }

  void axes(Document& d, const std::string& xlab, const std::string& ylab, bool y_axis = true,
            bool x_axis = true) const {
    if (x_axis) {
      d.line(left, top + height, left + width, top + height);
      for (double t : ticks(x0, x1)) {
        d.line(px(t), top + height, px(t), top + height + 5);
        d.text(px(t), top + height + 18, label(t), "middle");
      }
      d.text(left + width / 2, top + height + 36, xlab, "middle", 12);
    }
    if (!y_axis) return;
    d.line(left, top, left, top + height);
    for (double t : ticks(y0, y1)) {
      d.line(left - 5, py(t), left, py(t));
      d.text(left - 8, py(t) + 4, label(t), "end");
    }
    d.text(left - 45, top + height / 2, ylab, "middle", 12,
           "transform=\"rotate(-90 " + num(left - 45) + " " + num(top + height / 2) + ")\"");
  }
};

inline std::pair<double, double> padded(double lo, double hi, double frac = 0.05) {
  if (!(hi > lo)) {
    const double d = std::max(std::abs(lo) * 0.1, 0.1);
    return {lo - d, hi + d};
  }
  const double p = (hi - lo) * frac;
  return {lo - p, hi + p};
}

inline const char* chain_colour(std::size_t c) {
  static const char* colours[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"};
  return colours[c % 8];
}

}  // namespace svg

namespace detail {

inline double tr(const PlotContext& pc, double x) { return apply_transform(pc.transform, x); }

inline std::string estimate_text(double m, double lo, double hi) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f [%.2f, %.2f]", m, lo, hi);
  return buf;
}

inline std::string effect_axis_label(const PlotContext& pc) {
  if (pc.transform == Transform::FishersZToR) return "Effect size (correlation)";
  if (pc.transform == Transform::Exponential) return "Effect size (ratio scale)";
  return "Effect size (" + to_string(pc.ctx.data().measure()) + ")";
}

/// Prior of one reported parameter in model m.
inline PriorDistribution parameter_prior(const Ensemble& e, const ModelSpec& m, const std::string& p) {
  if (p == "mu") return m.priors.mu;
  if (p == "tau") return m.priors.tau;
  if (p == "rho") return m.priors.rho;
  if (p == "PET") return m.bias.kind == BiasVariant::Kind::PET ? m.bias.slope : PriorDistribution::point(0.0);
  if (p == "PEESE") return m.bias.kind == BiasVariant::Kind::PEESE ? m.bias.slope : PriorDistribution::point(0.0);
  if (p.rfind("beta:", 0) == 0) {
    std::string term = p.substr(5);
    if (const auto b = term.find('['); b != std::string::npos) term = term.substr(0, b);
    for (std::size_t t = 0; t < e.terms.size(); ++t)
      if (e.terms[t] == term) return m.priors.beta[t];
  }
  throw InputError("no prior/posterior plot for parameter '" + p + "'");
}

inline std::string forest(const PlotSpec& spec, const PlotContext& pc) {
  struct Row {
    Row(std::string l, double e, double a, double b, bool d = false, bool h = false)
        : label(std::move(l)), est(e), lo(a), hi(b), diamond(d), header(h) {}
    std::string label;
    double est, lo, hi;
    bool diamond, header;
    double size = 4.0;
    std::string right;
  };
  std::vector<Row> rows;
  const auto probs = posterior_model_probs(pc.fits);
  for (const auto& section : spec.sections) {
    if (section == "studies") {
      rows.push_back({"Study information", kNaN, kNaN, kNaN, false, true});
      const auto& recs = pc.ctx.data().records();
      double wmax = 0.0;
      for (const auto& r : recs) wmax = std::max(wmax, 1.0 / (r.se * r.se));
      const double z = norm_quantile((1.0 + pc.summary.level) / 2.0);
      for (const auto& r : recs) {
        Row row{r.id, tr(pc, r.y), tr(pc, r.y - z * r.se), tr(pc, r.y + z * r.se)};
        row.size = 2.0 + 4.0 * std::sqrt((1.0 / (r.se * r.se)) / wmax);
        row.right = estimate_text(row.est, row.lo, row.hi);
        rows.push_back(row);
      }
      const auto& mu = pc.summary.estimate("mu", spec.conditional);
      Row pooled{spec.conditional ? "Pooled (conditional)" : "Pooled (model-averaged)", mu.mean, mu.lower, mu.upper, true};
      pooled.right = estimate_text(mu.mean, mu.lower, mu.upper);
      rows.push_back(pooled);
    } else if (section == "emm") {
      if (pc.summary.emms.empty())
        throw InputError("forest EMM section requested but the summary has no estimated marginal means");
      rows.push_back({"Estimated marginal means", kNaN, kNaN, kNaN, false, true});
      for (const auto& e : pc.summary.emms) {
        Row row{e.term == "intercept" ? "Adjusted effect" : e.term + " = " + e.level, e.estimate.mean, e.estimate.lower,
                e.estimate.upper, true};
        row.right = estimate_text(row.est, row.lo, row.hi);
        rows.push_back(row);
      }
    } else {
      rows.push_back({"Model information", kNaN, kNaN, kNaN, false, true});
      for (std::size_t i = 0; i < pc.fits.size(); ++i) {
        auto d = pc.fits[i].draws.pooled("mu");
        for (double& x : d) x = tr(pc, x);
        std::sort(d.begin(), d.end());
        const double lv = pc.summary.level;
        Row row{pc.fits[i].model.label(), sorted_quantile(d, 0.5), sorted_quantile(d, (1 - lv) / 2),
                sorted_quantile(d, (1 + lv) / 2)};
        row.size = 2.0 + 4.0 * std::sqrt(probs[i]);
        char buf[48];
        std::snprintf(buf, sizeof buf, "  P(M|data) = %.3f", probs[i]);
        row.right = estimate_text(row.est, row.lo, row.hi) + buf;
        rows.push_back(row);
      }
    }
  }

  double lo = tr(pc, 0.0), hi = tr(pc, 0.0);
  for (const auto& r : rows)
    if (!r.header) {
      lo = std::min(lo, r.lo);
      hi = std::max(hi, r.hi);
    }
  const auto [x0, x1] = svg::padded(lo, hi);
  const double row_h = 18.0, top = 30.0;
  const double height = top + row_h * static_cast<double>(rows.size()) + 60.0;
  svg::Document d(900, height);
  svg::Panel p{260, top, 380, row_h * static_cast<double>(rows.size()), x0, x1, 0, 1};
  d.line(p.px(tr(pc, 0.0)), top, p.px(tr(pc, 0.0)), top + p.height, "#888888", 1, "4,3");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double y = top + row_h * (static_cast<double>(i) + 0.5);
    if (r.header) {
      d.text(10, y + 4, r.label, "start", 12, "font-weight=\"bold\"");
      continue;
    }
    d.text(20, y + 4, r.label);
    if (r.diamond) {
      d.polygon({{p.px(r.lo), y}, {p.px(r.est), y - 6}, {p.px(r.hi), y}, {p.px(r.est), y + 6}}, "black");
    } else {
      d.line(p.px(r.lo), y, p.px(r.hi), y);
      d.rect(p.px(r.est) - r.size / 2, y - r.size / 2, r.size, r.size, "black");
    }
    d.text(650, y + 4, r.right);
  }
  p.axes(d, effect_axis_label(pc), "", false);
  return d.str();
}

inline std::string bubble(const PlotSpec& spec, const PlotContext& pc) {
  const auto& terms = pc.ensemble.terms;
  if (std::find(terms.begin(), terms.end(), spec.moderator) == terms.end())
    throw InputError("bubble plot moderator '" + spec.moderator + "' is not in the model");
  const auto& meta = *std::find_if(pc.ctx.design()->terms.begin(), pc.ctx.design()->terms.end(),
                                   [&](const TermMeta& t) { return t.name == spec.moderator; });
  const auto probs = posterior_model_probs(pc.fits);
  const auto emm = estimated_marginal_means(pc.ensemble, pc.fits, probs, pc.ctx, spec.moderator, false,
                                            stream_seed(pc.seed, 21));
  const auto& recs = pc.ctx.data().records();
  const double lv = pc.summary.level;
  double wmax = 0.0;
  for (const auto& r : recs) wmax = std::max(wmax, 1.0 / (r.se * r.se));
  Rng jitter(0x6a6974746572ULL);

  struct Pt {
    double x, y, r;
  };
  std::vector<Pt> pts;
  double ylo = kInf, yhi = -kInf;
  const bool categorical = meta.kind == CovariateKind::Categorical;
  for (const auto& r : recs) {
    double x;
    if (categorical) {
      const auto& level = std::get<std::string>(r.covariates.at(spec.moderator));
      x = static_cast<double>(std::find(meta.levels.begin(), meta.levels.end(), level) - meta.levels.begin()) + 1.0;
      x += 0.3 * (jitter.uniform() - 0.5);
    } else {
      x = std::get<double>(r.covariates.at(spec.moderator));
    }
    const double y = tr(pc, r.y);
    pts.push_back({x, y, 2.0 + 8.0 * std::sqrt((1.0 / (r.se * r.se)) / wmax)});
    ylo = std::min(ylo, y);
    yhi = std::max(yhi, y);
  }

  struct Box {
    double x, mean, lo, hi;
  };
  std::vector<Box> boxes;
  std::vector<std::pair<double, double>> line_pts, band_lo, band_hi;
  if (categorical) {
    for (std::size_t l = 0; l < emm.levels.size(); ++l) {
      auto d = emm.levels[l].draws;
      for (double& v : d) v = tr(pc, v);
      const double m = mean(d);
      std::sort(d.begin(), d.end());
      boxes.push_back({static_cast<double>(l) + 1.0, m, sorted_quantile(d, (1 - lv) / 2), sorted_quantile(d, (1 + lv) / 2)});
      ylo = std::min(ylo, boxes.back().lo);
      yhi = std::max(yhi, boxes.back().hi);
    }
  } else {
    // EMM draws are linear in the covariate: interpolate from the centre and +1 sd levels
    const auto& a = emm.levels[1].draws;
    const auto& b = emm.levels[2].draws;
    double xmin = kInf, xmax = -kInf;
    for (const auto& q : pts) {
      xmin = std::min(xmin, q.x);
      xmax = std::max(xmax, q.x);
    }
    for (int g = 0; g <= 40; ++g) {
      const double x = xmin + (xmax - xmin) * g / 40.0;
      const double k = (x - meta.center) / meta.scale;
      std::vector<double> d(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) d[i] = tr(pc, a[i] + k * (b[i] - a[i]));
      const double m = mean(d);
      std::sort(d.begin(), d.end());
      line_pts.emplace_back(x, m);
      band_lo.emplace_back(x, sorted_quantile(d, (1 - lv) / 2));
      band_hi.emplace_back(x, sorted_quantile(d, (1 + lv) / 2));
      ylo = std::min(ylo, band_lo.back().second);
      yhi = std::max(yhi, band_hi.back().second);
    }
  }

  double x0, x1;
  if (categorical) {
    x0 = 0.4;
    x1 = static_cast<double>(meta.levels.size()) + 0.6;
  } else {
    std::tie(x0, x1) = svg::padded(line_pts.front().first, line_pts.back().first);
  }
  const auto [y0, y1] = svg::padded(ylo, yhi);
  svg::Document d(640, 440);
  svg::Panel p{80, 30, 520, 340, x0, x1, y0, y1};
  if (categorical) {
    d.line(p.left, p.top + p.height, p.left + p.width, p.top + p.height);
    for (std::size_t l = 0; l < meta.levels.size(); ++l)
      d.text(p.px(static_cast<double>(l) + 1.0), p.top + p.height + 18, meta.levels[l], "middle");
    d.text(p.left + p.width / 2, p.top + p.height + 36, spec.moderator, "middle", 12);
    p.axes(d, "", effect_axis_label(pc), true, false);
    for (const auto& bx : boxes) {
      d.rect(p.px(bx.x - 0.3), p.py(bx.hi), p.px(bx.x + 0.3) - p.px(bx.x - 0.3), p.py(bx.lo) - p.py(bx.hi), "#dddddd",
             "black", 1.5);
      d.line(p.px(bx.x - 0.3), p.py(bx.mean), p.px(bx.x + 0.3), p.py(bx.mean), "black", 3.5);
    }
  } else {
    p.axes(d, spec.moderator, effect_axis_label(pc));
    std::vector<std::pair<double, double>> band;
    for (const auto& q : band_lo) band.emplace_back(p.px(q.first), p.py(q.second));
    for (auto it = band_hi.rbegin(); it != band_hi.rend(); ++it) band.emplace_back(p.px(it->first), p.py(it->second));
    d.polygon(band, "#dddddd", "black");
    std::vector<std::pair<double, double>> ln;
    for (const auto& q : line_pts) ln.emplace_back(p.px(q.first), p.py(q.second));
    d.polyline(ln, "black", 3.5);
  }
  for (const auto& q : pts) d.circle(p.px(q.x), p.py(q.y), q.r, "#4a7bb7", "black", 0.6);
  return d.str();
}

inline std::string prior_posterior(const PlotSpec& spec, const PlotContext& pc) {
  const std::string& par = spec.parameter;
  const auto probs = posterior_model_probs(pc.fits);
  const bool rho = par == "rho";
  if (rho && !pc.ensemble.multilevel) throw InputError("rho is only defined for multilevel models");
  std::vector<double> prior_w, post_w;
  std::vector<PriorDistribution> priors;
  double prior_atom = 0.0, post_atom = 0.0, prior_total = 0.0, post_total = 0.0;
  std::optional<double> atom_at;
  for (std::size_t i = 0; i < pc.ensemble.models.size(); ++i) {
    const auto& m = pc.ensemble.models[i];
    if (rho && !m.has_heterogeneity()) {
      prior_w.push_back(0.0);
      post_w.push_back(0.0);
      priors.push_back(PriorDistribution::point(0.0));
      continue;
    }
    auto pr = parameter_prior(pc.ensemble, m, par);
    prior_total += m.prior_prob;
    post_total += probs[i];
    if (pr.is_point()) {
      if (!spec.conditional) {
        prior_atom += m.prior_prob;
        post_atom += probs[i];
        atom_at = pr.point_value();
      }
      prior_w.push_back(0.0);
      post_w.push_back(0.0);
    } else {
      prior_w.push_back(m.prior_prob);
      post_w.push_back(probs[i]);
    }
    priors.push_back(std::move(pr));
  }
  double prior_cont = 0.0, post_cont = 0.0;
  for (double w : prior_w) prior_cont += w;
  for (double w : post_w) post_cont += w;
  if (!(prior_cont > 0.0)) throw InputError("parameter '" + par + "' has no continuous prior in the ensemble");
  // masses relative to the plotted models (all, or those with heterogeneity for rho)
  prior_atom /= prior_total;
  post_atom /= post_total;
  const double prior_mass = spec.conditional ? 1.0 : prior_cont / prior_total;
  const double post_mass = spec.conditional ? 1.0 : post_cont / post_total;

  double lower = kInf, upper = -kInf;
  for (std::size_t i = 0; i < priors.size(); ++i)
    if (prior_w[i] > 0.0) {
      lower = std::min(lower, priors[i].support().first);
      upper = std::max(upper, priors[i].support().second);
    }

  std::vector<double> post_draws;
  if (post_cont > 0.0 && post_cont / post_total > 1e-6) {
    const auto idx = resample_index(pc.fits, post_w, stream_seed(pc.seed, 31));
    post_draws = gather(pc.fits, idx, par);
  }

  // plotting range: central prior mass plus the posterior bulk
  double lo = kInf, hi = -kInf;
  for (std::size_t i = 0; i < priors.size(); ++i)
    if (prior_w[i] > 0.0) {
      lo = std::min(lo, priors[i].quantile(0.025));
      hi = std::max(hi, priors[i].quantile(0.975));
    }
  if (!post_draws.empty()) {
    auto s = post_draws;
    std::sort(s.begin(), s.end());
    lo = std::min(lo, sorted_quantile(s, 0.001));
    hi = std::max(hi, sorted_quantile(s, 0.999));
  }
  if (atom_at) {
    lo = std::min(lo, *atom_at);
    hi = std::max(hi, *atom_at);
  }
  lo = std::max(lo, lower);
  hi = std::min(hi, upper);

  const bool transform = spec.transformed && par == "mu";
  auto t = [&](double x) { return transform ? tr(pc, x) : x; };
  auto jac = [&](double x) {
    if (!transform) return 1.0;
    const double e = 1e-6 * std::max(1.0, std::abs(x));
    return (tr(pc, x + e) - tr(pc, x - e)) / (2.0 * e);
  };

  constexpr int kGrid = 200;
  std::vector<double> gx(kGrid + 1), prior_d(kGrid + 1, 0.0), post_d(kGrid + 1, 0.0);
  std::optional<KernelDensity> kde;
  if (post_draws.size() > 10) {
    // the density plot tolerates a coarse bandwidth search on a thinned sample
    std::vector<double> thin;
    const std::size_t step = std::max<std::size_t>(1, post_draws.size() / 5000);
    for (std::size_t i = 0; i < post_draws.size(); i += step) thin.push_back(post_draws[i]);
    if (stddev(thin) > 0.0) kde = kernel_density(thin, lower, upper);
  }
  double dmax = 0.0;
  for (int g = 0; g <= kGrid; ++g) {
    const double x = lo + (hi - lo) * g / kGrid;
    gx[g] = x;
    double pd = 0.0;
    for (std::size_t i = 0; i < priors.size(); ++i)
      if (prior_w[i] > 0.0) pd += prior_w[i] / prior_cont * priors[i].pdf(x);
    prior_d[g] = prior_mass * pd / jac(x);
    if (kde) post_d[g] = post_mass * (*kde)(x) / jac(x);
    if (std::isfinite(prior_d[g])) dmax = std::max(dmax, prior_d[g]);
    if (std::isfinite(post_d[g])) dmax = std::max(dmax, post_d[g]);
  }
  if (!(dmax > 0.0)) dmax = 1.0;

  const auto [x0, x1] = svg::padded(t(lo), t(hi), 0.02);
  svg::Document d(640, 440);
  svg::Panel p{80, 40, 470, 330, x0, x1, 0.0, dmax * 1.08};
  std::string xlab = par;
  if (transform) xlab += " (" + to_string(pc.transform) + ")";
  p.axes(d, xlab, "Density");
  auto curve = [&](const std::vector<double>& dens, const char* colour, const std::string& dash) {
    std::vector<std::pair<double, double>> pts;
    for (int g = 0; g <= kGrid; ++g)
      if (std::isfinite(dens[g])) pts.emplace_back(p.px(t(gx[g])), p.py(std::min(dens[g], p.y1)));
    d.polyline(pts, colour, 2.0, dash);
  };
  curve(prior_d, "#999999", "6,4");
  if (kde) curve(post_d, "black", "");

  if (atom_at) {
    svg::Panel prob = p;
    prob.y0 = 0.0;
    prob.y1 = 1.0;
    d.line(p.left + p.width, p.top, p.left + p.width, p.top + p.height);
    for (double tk : svg::ticks(0.0, 1.0)) {
      d.line(p.left + p.width, prob.py(tk), p.left + p.width + 5, prob.py(tk));
      d.text(p.left + p.width + 8, prob.py(tk) + 4, svg::label(tk));
    }
    d.text(p.left + p.width + 45, p.top + p.height / 2, "Probability", "middle", 12,
           "transform=\"rotate(90 " + svg::num(p.left + p.width + 45) + " " + svg::num(p.top + p.height / 2) + ")\"");
    const double ax = p.px(t(*atom_at));
    d.arrow(ax - 3, prob.py(0.0), prob.py(prior_atom), "#999999");
    d.arrow(ax + 3, prob.py(0.0), prob.py(post_atom), "black");
  }
  d.line(360, 18, 385, 18, "#999999", 2, "6,4");
  d.text(390, 22, "Prior");
  d.line(440, 18, 465, 18, "black", 2);
  d.text(470, 22, "Posterior");
  d.text(80, 22, spec.conditional ? "Conditional" : "Model-averaged", "start", 12);
  return d.str();
}

inline std::string trace(const PlotSpec& spec, const PlotContext& pc) {
  const auto probs = posterior_model_probs(pc.fits);
  std::size_t model = pc.fits.size();
  if (spec.model) {
    if (*spec.model >= pc.fits.size()) throw InputError("trace plot model index out of range");
    model = *spec.model;
  } else {
    double best = -1.0;
    for (std::size_t i = 0; i < pc.fits.size(); ++i) {
      const auto& f = pc.fits[i];
      if (!f.draws.contains(spec.parameter)) continue;
      const auto& ch = f.draws.at(spec.parameter);
      const bool fixed = detail::constant_draws(ch);
      if (!fixed && probs[i] > best) {
        best = probs[i];
        model = i;
      }
    }
  }
  if (model == pc.fits.size() || !pc.fits[model].draws.contains(spec.parameter))
    throw InputError("no model samples parameter '" + spec.parameter + "'");
  const auto& chains = pc.fits[model].draws.at(spec.parameter);
  const std::size_t n = chains.front().size();
  double lo = kInf, hi = -kInf;
  for (const auto& c : chains)
    for (double v : c) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const auto [y0, y1] = svg::padded(lo, hi);
  svg::Document d(720, 420);
  svg::Panel p{80, 40, 580, 310, 1.0, static_cast<double>(n), y0, y1};
  p.axes(d, "Iteration", spec.parameter);
  const std::size_t step = std::max<std::size_t>(1, n / 1000);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < n; i += step) pts.emplace_back(p.px(static_cast<double>(i + 1)), p.py(chains[c][i]));
    d.polyline(pts, svg::chain_colour(c), 0.8);
    d.line(500 + 45.0 * static_cast<double>(c), 18, 515 + 45.0 * static_cast<double>(c), 18, svg::chain_colour(c), 2);
    d.text(518 + 45.0 * static_cast<double>(c), 22, std::to_string(c + 1));
  }
  d.text(80, 22, "Model: " + pc.fits[model].model.label(), "start", 12);
  return d.str();
}

inline std::string weight_function(const PlotSpec& spec, const PlotContext& pc) {
  const auto& rows = spec.conditional ? pc.summary.weight_function_conditional : pc.summary.weight_function_averaged;
  if (rows.empty()) throw InputError("weight function plot needs selection models in the ensemble");
  const auto edges = common_weight_grid(pc.ensemble);
  if (edges.size() != rows.size() + 1) throw InputError("weight function summary does not match the ensemble");
  svg::Document d(640, 420);
  svg::Panel p{80, 40, 520, 310, 0.0, 1.0, 0.0, 1.05};
  p.axes(d, "One-sided p-value", "Relative publication probability");
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const double a = p.px(edges[b]), z = p.px(edges[b + 1]);
    d.rect(a, p.py(rows[b].upper), z - a, p.py(rows[b].lower) - p.py(rows[b].upper), "#dddddd");
  }
  std::vector<std::pair<double, double>> step;
  for (std::size_t b = 0; b < rows.size(); ++b) {
    step.emplace_back(p.px(edges[b]), p.py(rows[b].mean));
    step.emplace_back(p.px(edges[b + 1]), p.py(rows[b].mean));
  }
  d.polyline(step, "black", 2.0);
  d.text(80, 22, spec.conditional ? "Conditional weight function" : "Model-averaged weight function", "start", 12);
  return d.str();
}

inline std::string pet_peese(const PlotSpec& spec, const PlotContext& pc) {
  if (!pc.summary.has_pet_peese) throw InputError("PET-PEESE plot needs PET or PEESE models in the ensemble");
  const auto probs = posterior_model_probs(pc.fits);
  std::vector<bool> inc;
  for (const auto& m : pc.ensemble.models)
    inc.push_back(m.bias.kind == BiasVariant::Kind::PET || m.bias.kind == BiasVariant::Kind::PEESE);
  const auto w = mode_weights(probs, spec.conditional ? AverageMode::Conditional : AverageMode::Averaged, inc,
                              "PET-PEESE models");
  const auto idx = resample_index(pc.fits, w, stream_seed(pc.seed, 41));
  const auto mu = gather(pc.fits, idx, "mu");
  const auto pet = gather(pc.fits, idx, "PET");
  const auto peese = gather(pc.fits, idx, "PEESE");
  const auto& recs = pc.ctx.data().records();
  double smax = 0.0, ylo = kInf, yhi = -kInf;
  for (const auto& r : recs) {
    smax = std::max(smax, r.se);
    ylo = std::min(ylo, tr(pc, r.y));
    yhi = std::max(yhi, tr(pc, r.y));
  }
  smax *= 1.05;
  const double lv = pc.summary.level;
  std::vector<std::array<double, 4>> curve;  // se, mean, lower, upper
  for (int g = 0; g <= 50; ++g) {
    const double s = smax * g / 50.0;
    std::vector<double> v(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) v[i] = tr(pc, mu[i] + pet[i] * s + peese[i] * s * s);
    const double m = mean(v);
    std::sort(v.begin(), v.end());
    curve.push_back({s, m, sorted_quantile(v, (1 - lv) / 2), sorted_quantile(v, (1 + lv) / 2)});
    ylo = std::min(ylo, curve.back()[2]);
    yhi = std::max(yhi, curve.back()[3]);
  }
  const auto [y0, y1] = svg::padded(ylo, yhi);
  svg::Document d(640, 420);
  svg::Panel p{80, 40, 520, 310, 0.0, smax, y0, y1};
  p.axes(d, "Standard error", effect_axis_label(pc));
  std::vector<std::pair<double, double>> band, line;
  for (const auto& c : curve) band.emplace_back(p.px(c[0]), p.py(c[2]));
  for (auto it = curve.rbegin(); it != curve.rend(); ++it) band.emplace_back(p.px((*it)[0]), p.py((*it)[3]));
  for (const auto& c : curve) line.emplace_back(p.px(c[0]), p.py(c[1]));
  d.polygon(band, "#dddddd");
  d.polyline(line, "black", 2.0);
  for (const auto& r : recs) d.circle(p.px(r.se), p.py(tr(pc, r.y)), 3.0, "#4a7bb7", "black", 0.7);
  d.text(80, 22, spec.conditional ? "Conditional PET-PEESE" : "Model-averaged PET-PEESE", "start", 12);
  return d.str();
}

}  // namespace detail

inline std::string render_plot(const PlotSpec& spec, const PlotContext& pc) {
  spec.validate();
  switch (spec.kind) {
    case PlotKind::Forest: return detail::forest(spec, pc);
    case PlotKind::Bubble: return detail::bubble(spec, pc);
    case PlotKind::PriorPosterior: return detail::prior_posterior(spec, pc);
    case PlotKind::Trace: return detail::trace(spec, pc);
    case PlotKind::WeightFunction: return detail::weight_function(spec, pc);
    case PlotKind::PetPeese: return detail::pet_peese(spec, pc);
  }
  return {};
}

}  // namespace bma
