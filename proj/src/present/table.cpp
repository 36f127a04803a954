#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

#include "fehd/error.hpp"
#include "fehd/formula.hpp"
#include "fehd/present.hpp"

namespace fehd::present {

namespace {

struct Pattern {
  std::regex re;
  bool negate = false;
  bool matches(const std::string& s) const { return std::regex_search(s, re) != negate; }
};

std::vector<Pattern> compile(const std::vector<std::string>& pats, const char* what) {
  std::vector<Pattern> out;
  for (const auto& p : pats) {
    Pattern pt;
    std::string body = p;
    if (!body.empty() && body[0] == '!') {
      pt.negate = true;
      body.erase(0, 1);
    }
    try {
      pt.re = std::regex(body, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw invalid_argument(std::string("invalid --") + what + " regex '" + p + "': " + e.what());
    }
    out.push_back(std::move(pt));
  }
  return out;
}

std::string label_of(const TableSpec& spec, const std::string& name) {
  const auto it = spec.dict.find(name);
  return it == spec.dict.end() ? name : it->second;
}

Signif resolve(Signif s, Format f) {
  if (s != Signif::Auto) return s;
  return f == Format::Latex ? Signif::Aer : Signif::Console;
}

std::string stat_label(const std::string& name) {
  static const std::map<std::string, std::string> labels = {
      {"n", "Observations"},     {"r2", "R2"},
      {"ar2", "Adj. R2"},        {"wr2", "Within R2"},
      {"pr2", "Pseudo R2"},      {"apr2", "Adj. Pseudo R2"},
      {"rmse", "RMSE"},          {"ll", "Log-Likelihood"},
      {"bic", "BIC"},            {"sq.cor", "Squared Cor."},
      {"wald", "Wald (joint nullity)"}, {"ivf", "F-test (1st stage)"},
      {"wh", "Wu-Hausman"},      {"my", "Dep. Var. mean"}};
  if (name.rfind("ivf::", 0) == 0) return "F-test (1st stage), " + name.substr(5);
  const auto it = labels.find(name);
  return it == labels.end() ? name : it->second;
}

std::string format_count(double v) {
  const auto n = static_cast<long long>(std::llround(v));
  std::string digits = std::to_string(n < 0 ? -n : n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return n < 0 ? "-" + out : out;
}

std::string format_stat(const std::string& name, const inf::Stat& s) {
  if (std::isnan(s.value)) return "";
  if (name == "n") return format_count(s.value);
  std::string out = format_number(s.value);
  if (s.p) out += " (p=" + format_number(*s.p) + ")";
  return out;
}

const inf::CoefRow* find_coef(const Column& c, const std::string& name) {
  for (const auto& r : c.coefs)
    if (r.name == name) return &r;
  return nullptr;
}

std::string sample_cell(const Column& c) { return c.fit->sample_label; }

bool any_sample(const TableData& t) {
  return std::any_of(t.columns.begin(), t.columns.end(),
                     [](const Column& c) { return !c.fit->sample_label.empty(); });
}

std::string signif_legend(Signif s) {
  switch (s) {
    case Signif::Console: return "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1";
    case Signif::Aer: return "Signif. codes: ***: 0.01, **: 0.05, *: 0.1";
    default: return "";
  }
}

std::string latex_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '_': out += "\\_"; break;
      case '%': out += "\\%"; break;
      case '&': out += "\\&"; break;
      case '#': out += "\\#"; break;
      case '$': out += "\\$"; break;
      case '{': out += "\\{"; break;
      case '}': out += "\\}"; break;
      case '~': out += "\\textasciitilde{}"; break;
      case '^': out += "\\textasciicircum{}"; break;
      case '\\': out += "\\textbackslash{}"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string sample_heading(const TableSpec& spec) {
  return spec.split_var ? "Sample (" + label_of(spec, *spec.split_var) + ")" : "Sample";
}

}  // namespace

Format parse_format(std::string_view s) {
  if (s == "text") return Format::Text;
  if (s == "latex") return Format::Latex;
  if (s == "json") return Format::Json;
  throw invalid_argument("unknown output format '" + std::string(s) + "' (expected text, latex or json)");
}

Signif parse_signif(std::string_view s) {
  if (s == "auto") return Signif::Auto;
  if (s == "console") return Signif::Console;
  if (s == "aer") return Signif::Aer;
  if (s == "none" || s == "off") return Signif::None;
  throw invalid_argument("unknown --signif '" + std::string(s) + "' (expected auto, console, aer or none)");
}

std::string format_number(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  if (v != 0.0 && std::fabs(v) < 1e-4)
    std::snprintf(buf, sizeof buf, "%.3e", v);
  else if (std::fabs(v) >= 1e15)
    std::snprintf(buf, sizeof buf, "%.3e", v);
  else {
    // Four significant digits in fixed notation.
    const int mag = v == 0.0 ? 0 : static_cast<int>(std::floor(std::log10(std::fabs(v))));
    const int decimals = std::max(0, 3 - mag);
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  }
  return buf;
}

std::string stars(double p, Signif style) {
  if (std::isnan(p)) return "";
  switch (style) {
    case Signif::Console:
      if (p < 0.001) return "***";
      if (p < 0.01) return "**";
      if (p < 0.05) return "*";
      if (p < 0.1) return ".";
      return "";
    case Signif::Aer:
      if (p < 0.01) return "***";
      if (p < 0.05) return "**";
      if (p < 0.1) return "*";
      return "";
    default: return "";
  }
}

std::vector<std::string> select_rows(const std::vector<std::string>& names,
                                     const std::vector<std::string>& keep,
                                     const std::vector<std::string>& drop,
                                     const std::vector<std::string>& order) {
  const auto k = compile(keep, "keep");
  const auto d = compile(drop, "drop");
  const auto o = compile(order, "order");
  std::vector<std::string> out;
  for (const auto& nm : names) {
    if (!k.empty() && std::none_of(k.begin(), k.end(), [&](const Pattern& p) { return p.matches(nm); }))
      continue;
    if (std::any_of(d.begin(), d.end(), [&](const Pattern& p) { return p.matches(nm); })) continue;
    out.push_back(nm);
  }
  auto rank = [&](const std::string& nm) {
    for (std::size_t j = 0; j < o.size(); ++j)
      if (o[j].matches(nm)) return j;
    return o.size();
  };
  std::stable_sort(out.begin(), out.end(),
                   [&](const std::string& a, const std::string& b) { return rank(a) < rank(b); });
  return out;
}

TableData build_table(const TableSpec& spec, const data::Dataset& ds) {
  if (spec.models.empty()) throw invalid_argument("no model to display");
  for (const auto& s : spec.fitstats)
    if (!inf::is_fit_stat(s)) throw invalid_argument("unknown fit statistic '" + s + "'");
  TableData t;
  const std::vector<inf::VcovSpec> vcovs = spec.vcovs.empty() ? std::vector<inf::VcovSpec>{inf::VcovSpec{}} : spec.vcovs;
  std::vector<std::string> all_names;
  for (const auto* m : spec.models)
    for (const auto& v : vcovs) {
      Column c;
      c.fit = m;
      c.vcov = inf::compute_vcov(*m, v, ds, spec.ssc);
      c.coefs = inf::coef_table(*m, c.vcov);
      const auto names = spec.fitstats.empty() ? inf::default_fit_stats(m->family) : spec.fitstats;
      c.stats = inf::fit_stats(*m, c.vcov, names);
      for (const auto& r : c.coefs)
        if (std::find(all_names.begin(), all_names.end(), r.name) == all_names.end()) all_names.push_back(r.name);
      for (const auto& fe : m->fe_names)
        if (std::find(t.fe_rows.begin(), t.fe_rows.end(), fe) == t.fe_rows.end()) t.fe_rows.push_back(fe);
      t.columns.push_back(std::move(c));
    }
  t.rows = select_rows(all_names, spec.keep, spec.drop, spec.order);
  return t;
}

std::string render_text(const TableSpec& spec, const TableData& t) {
  const Signif sig = resolve(spec.signif, Format::Text);
  const std::size_t C = t.columns.size();
  std::vector<std::vector<std::string>> cells;  // first cell is the row label
  std::vector<std::size_t> rules;               // rows preceded by a rule
  auto row = [&](std::string label) {
    cells.emplace_back(C + 1);
    cells.back()[0] = std::move(label);
    return cells.size() - 1;
  };
  const auto head = row("");
  for (std::size_t j = 0; j < C; ++j) cells[head][j + 1] = "(" + std::to_string(j + 1) + ")";
  const auto dep = row("Dependent Var.:");
  for (std::size_t j = 0; j < C; ++j) cells[dep][j + 1] = label_of(spec, t.columns[j].fit->depvar);
  if (any_sample(t)) {
    const auto s = row(sample_heading(spec));
    for (std::size_t j = 0; j < C; ++j) cells[s][j + 1] = sample_cell(t.columns[j]);
  }
  rules.push_back(cells.size());
  for (const auto& nm : t.rows) {
    const auto r = row(label_of(spec, nm));
    for (std::size_t j = 0; j < C; ++j)
      if (const auto* c = find_coef(t.columns[j], nm))
        cells[r][j + 1] = format_number(c->estimate) + stars(c->p, sig) + " (" + format_number(c->se) + ")";
  }
  if (!t.fe_rows.empty()) {
    rules.push_back(cells.size());
    const auto fh = row("Fixed-Effects:");
    for (std::size_t j = 0; j < C; ++j) cells[fh][j + 1] = "";
    for (const auto& fe : t.fe_rows) {
      const auto r = row(label_of(spec, fe));
      for (std::size_t j = 0; j < C; ++j) {
        const auto& names = t.columns[j].fit->fe_names;
        cells[r][j + 1] = std::find(names.begin(), names.end(), fe) != names.end() ? "Yes" : "No";
      }
    }
  }
  rules.push_back(cells.size());
  const auto se = row("S.E. type");
  for (std::size_t j = 0; j < C; ++j) cells[se][j + 1] = t.columns[j].vcov.label;
  // Fit statistics in first-appearance order across columns.
  std::vector<std::string> stat_names;
  for (const auto& c : t.columns)
    for (const auto& [nm, st] : c.stats)
      if (std::find(stat_names.begin(), stat_names.end(), nm) == stat_names.end()) stat_names.push_back(nm);
  for (const auto& nm : stat_names) {
    const auto r = row(stat_label(nm));
    for (std::size_t j = 0; j < C; ++j)
      for (const auto& [n2, st] : t.columns[j].stats)
        if (n2 == nm) cells[r][j + 1] = format_stat(nm, st);
  }

  std::vector<std::size_t> width(C + 1, 0);
  for (const auto& r : cells)
    for (std::size_t j = 0; j <= C; ++j) width[j] = std::max(width[j], r[j].size());
  std::size_t total = 0;
  for (auto w : width) total += w + 1;
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (std::find(rules.begin(), rules.end(), i) != rules.end()) out << std::string(total - 1, '-') << '\n';
    std::string line;
    for (std::size_t j = 0; j <= C; ++j) {
      const auto& s = cells[i][j];
      if (j == 0)
        line += s + std::string(width[j] - s.size(), ' ');
      else
        line += ' ' + std::string(width[j] - s.size(), ' ') + s;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  const auto legend = signif_legend(sig);
  if (!legend.empty()) out << "---\n" << legend << '\n';
  return out.str();
}

std::string render_latex(const TableSpec& spec, const TableData& t) {
  const Signif sig = resolve(spec.signif, Format::Latex);
  const std::size_t C = t.columns.size();
  std::ostringstream out;
  auto line = [&](const std::string& label, const std::vector<std::string>& vals) {
    out << latex_escape(label);
    for (const auto& v : vals) out << " & " << v;
    out << " \\\\\n";
  };
  out << "\\begin{table}[htbp]\n\\centering\n";
  if (!spec.caption.empty()) out << "\\caption{" << latex_escape(spec.caption) << "}\n";
  if (!spec.label.empty()) out << "\\label{" << spec.label << "}\n";
  out << "\\begin{tabular}{l" << std::string(C, 'c') << "}\n\\hline\\hline\n";
  std::vector<std::string> v(C);
  for (std::size_t j = 0; j < C; ++j) v[j] = "(" + std::to_string(j + 1) + ")";
  line("", v);
  for (std::size_t j = 0; j < C; ++j) v[j] = latex_escape(label_of(spec, t.columns[j].fit->depvar));
  line("Dependent Variable:", v);
  if (any_sample(t)) {
    for (std::size_t j = 0; j < C; ++j) v[j] = latex_escape(sample_cell(t.columns[j]));
    line(sample_heading(spec), v);
  }
  out << "\\hline\n";
  for (const auto& nm : t.rows) {
    std::vector<std::string> est(C), se(C);
    for (std::size_t j = 0; j < C; ++j)
      if (const auto* c = find_coef(t.columns[j], nm)) {
        const auto st = stars(c->p, sig);
        est[j] = format_number(c->estimate) + (st.empty() ? "" : "$^{" + st + "}$");
        se[j] = "(" + format_number(c->se) + ")";
      }
    line(label_of(spec, nm), est);
    line("", se);
  }
  if (!t.fe_rows.empty()) {
    out << "\\hline\n";
    std::vector<std::string> blank(C);
    line("Fixed-effects", blank);
    for (const auto& fe : t.fe_rows) {
      for (std::size_t j = 0; j < C; ++j) {
        const auto& names = t.columns[j].fit->fe_names;
        v[j] = std::find(names.begin(), names.end(), fe) != names.end() ? "Yes" : "No";
      }
      line(label_of(spec, fe), v);
    }
  }
  out << "\\hline\n";
  for (std::size_t j = 0; j < C; ++j) v[j] = latex_escape(t.columns[j].vcov.label);
  line("S.E. type", v);
  std::vector<std::string> stat_names;
  for (const auto& c : t.columns)
    for (const auto& [nm, st] : c.stats)
      if (std::find(stat_names.begin(), stat_names.end(), nm) == stat_names.end()) stat_names.push_back(nm);
  for (const auto& nm : stat_names) {
    for (std::size_t j = 0; j < C; ++j) {
      v[j] = "";
      for (const auto& [n2, st] : t.columns[j].stats)
        if (n2 == nm) v[j] = format_stat(nm, st);
    }
    line(stat_label(nm), v);
  }
  out << "\\hline\\hline\n\\end{tabular}\n";
  const auto legend = signif_legend(sig);
  if (!legend.empty()) out << "\\par\\raggedright\\footnotesize " << legend << "\n";
  out << "\\end{table}\n";
  return out.str();
}

nlohmann::json render_json(const TableSpec& spec, const TableData& t) {
  using nlohmann::json;
  const Signif sig = resolve(spec.signif, Format::Text);
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json models = json::array();
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    const auto& c = t.columns[j];
    const auto& f = *c.fit;
    json m;
    m["column"] = j + 1;
    m["depvar"] = f.depvar;
    m["formula"] = formula::to_string(f.model);
    m["sample"] = f.sample_label;
    m["family"] = est::family_name(f.family);
    m["vcov"] = c.vcov.label;
    json coefs = json::array();
    for (const auto& nm : t.rows)
      if (const auto* r = find_coef(c, nm))
        coefs.push_back({{"name", r->name},
                         {"label", label_of(spec, r->name)},
                         {"estimate", num(r->estimate)},
                         {"se", num(r->se)},
                         {"stat", num(r->stat)},
                         {"p", num(r->p)},
                         {"stars", stars(r->p, sig)}});
    m["coefficients"] = std::move(coefs);
    m["dropped_collinear"] = f.dropped_collinear;
    m["fixed_effects"] = f.fe_names;
    m["fixed_effect_sizes"] = f.fe_sizes;
    json stats = json::object();
    for (const auto& [nm, st] : c.stats) {
      json s = {{"value", num(st.value)}};
      if (st.p) s["p"] = num(*st.p);
      if (st.df) s["df"] = {st.df->first, st.df->second};
      stats[nm] = std::move(s);
    }
    m["fitstats"] = std::move(stats);
    m["removed"] = f.removed;
    m["dof"] = {{"n", f.dof.n}, {"k_vars", f.dof.k_vars}, {"k_fe", f.dof.k_fe}, {"df_resid", f.dof.df_resid}};
    m["convergence"] = {{"demean_iterations", f.demean_iterations},
                        {"demean_sweeps", f.demean_sweeps},
                        {"demean_converged", f.demean_converged},
                        {"irls_iterations", f.irls_iterations},
                        {"converged", f.converged}};
    models.push_back(std::move(m));
  }
  return json{{"models", std::move(models)}, {"rows", t.rows}};
}

std::string render(const TableSpec& spec, const data::Dataset& ds) {
  const auto t = build_table(spec, ds);
  switch (spec.format) {
    case Format::Text: return render_text(spec, t);
    case Format::Latex: return render_latex(spec, t);
    case Format::Json: return render_json(spec, t).dump(2) + "\n";
  }
  return "";
}

std::vector<PlotRow> plot_data(const TableData& t, double level) {
  if (!(level >= 0.0 && level < 1.0)) throw invalid_argument("confidence level must be in [0, 1)");
  std::vector<PlotRow> out;
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    const auto& c = t.columns[j];
    const double p = 0.5 * (1.0 + level);
    const double q = level == 0.0 ? 0.0
                     : inf::uses_t(*c.fit) ? inf::t_quantile(p, static_cast<double>(c.fit->dof.df_resid))
                                           : inf::normal_quantile(p);
    for (const auto& nm : t.rows)
      if (const auto* r = find_coef(c, nm)) {
        PlotRow pr;
        pr.model = j + 1;
        pr.depvar = c.fit->depvar;
        pr.sample = c.fit->sample_label;
        pr.vcov = c.vcov.label;
        pr.coef = nm;
        pr.estimate = r->estimate;
        pr.se = r->se;
        pr.ci_low = r->estimate - q * r->se;
        pr.ci_high = r->estimate + q * r->se;
        pr.level = level;
        out.push_back(std::move(pr));
      }
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_plot_csv(const std::vector<PlotRow>& rows, std::ostream& out) {
  out << "model,depvar,sample,vcov,coef,estimate,se,ci_low,ci_high,level\n";
  for (const auto& r : rows)
    out << r.model << ',' << csv_field(r.depvar) << ',' << csv_field(r.sample) << ','
        << csv_field(r.vcov) << ',' << csv_field(r.coef) << ',' << full(r.estimate) << ','
        << full(r.se) << ',' << full(r.ci_low) << ',' << full(r.ci_high) << ',' << full(r.level) << '\n';
}

void write_fixef_csv(const std::vector<const est::FitResult*>& fits, std::ostream& out) {
  out << "model,dimension,group,coef,value,dropped\n";
  for (std::size_t m = 0; m < fits.size(); ++m) {
    const auto& f = *fits[m];
    if (!f.fixef) continue;
    const auto& fx = *f.fixef;
    for (std::size_t q = 0; q < fx.names.size(); ++q) {
      const auto& labels = fx.coef_labels[q];
      const std::size_t L = labels.size();
      for (std::size_t g = 0; g < fx.group_labels[q].size(); ++g)
        for (std::size_t l = 0; l < L; ++l)
          out << (m + 1) << ',' << csv_field(fx.names[q]) << ',' << csv_field(fx.group_labels[q][g]) << ','
              << csv_field(labels[l]) << ',' << full(fx.report.coef[q][g * L + l]) << ','
              << static_cast<int>(fx.report.dropped[q][g * L + l]) << '\n';
    }
  }
}

}  // namespace fehd::present
