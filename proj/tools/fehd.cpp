// Command-line front end. Talks to the engine only through the C API.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fehd/fehd.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

// Usage-type failures exit 1; data and estimation failures exit 2.
int exit_code(fehd_status s) {
  switch (s) {
    case FEHD_OK: return kExitOk;
    case FEHD_ERR_INVALID_ARGUMENT:
    case FEHD_ERR_PARSE: return kExitUsage;
    default: return kExitFailure;
  }
}

struct Failure {
  int code;
};

void check(fehd_status s) {
  if (s == FEHD_OK) return;
  std::cerr << "fehd: error: " << fehd_last_error() << "\n";
  throw Failure{exit_code(s)};
}

struct StringDeleter {
  void operator()(char* s) const { fehd_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

struct DatasetDeleter {
  void operator()(fehd_dataset* d) const { fehd_dataset_free(d); }
};
struct OptionsDeleter {
  void operator()(fehd_options* o) const { fehd_options_free(o); }
};
struct ResultsDeleter {
  void operator()(fehd_results* r) const { fehd_results_free(r); }
};

std::unique_ptr<fehd_options, OptionsDeleter> new_options() {
  fehd_options* o = nullptr;
  check(fehd_options_new(&o));
  return std::unique_ptr<fehd_options, OptionsDeleter>(o);
}

void set(fehd_options* o, const char* key, const std::string& value) { check(fehd_options_set(o, key, value.c_str())); }

template <class T>
void set_if(fehd_options* o, const char* key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>)
    set(o, key, *v);
  else {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(*v));
    set(o, key, buf);
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    std::cerr << "fehd: error: cannot open '" << path << "' for writing\n";
    throw Failure{kExitFailure};
  }
  f << text;
  if (!f) {
    std::cerr << "fehd: error: failed writing '" << path << "'\n";
    throw Failure{kExitFailure};
  }
}

// Accepts "100000" as well as "1e5".
std::size_t parse_count(const std::string& flag, const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !(v >= 0.0) || v != std::floor(v) || v > 1e15)
    throw CLI::ValidationError(flag, "expected a nonnegative integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

std::string infer_format(const std::string& file) {
  auto ends_with = [&](const char* ext) {
    const std::string e = ext;
    return file.size() >= e.size() && file.compare(file.size() - e.size(), e.size(), e) == 0;
  };
  if (ends_with(".tex")) return "latex";
  if (ends_with(".json")) return "json";
  return "text";
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

struct NumericFlags {
  std::optional<double> demean_tol;
  std::optional<std::string> demean_maxiter;
  std::optional<unsigned> threads;
  std::optional<std::string> seed;
  bool no_accelerate = false;
};

void add_numeric_flags(CLI::App* cmd, NumericFlags& f) {
  cmd->add_option("--threads", f.threads, "Worker threads, 0 = half of the available ones")
      ->envname("FEHD_THREADS");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_flag("--no-accelerate", f.no_accelerate, "Plain alternating projections");
}

void apply_numeric_flags(fehd_options* o, const NumericFlags& f) {
  set_if(o, "demean_tol", f.demean_tol);
  if (f.demean_maxiter) set(o, "demean_maxiter", std::to_string(parse_count("--demean-maxiter", *f.demean_maxiter)));
  set_if(o, "threads", f.threads);
  if (f.seed) set(o, "seed", std::to_string(parse_count("--seed", *f.seed)));
  if (f.no_accelerate) set(o, "accelerate", "false");
}

struct FitArgs {
  std::string formula, data;
  std::optional<std::string> family, weights, offset, split, fsplit, subset, panel, ssc;
  std::vector<std::string> vcov;
  std::optional<std::string> output, file, signif, caption, label;
  std::vector<std::string> dict, keep, drop, order, fitstat;
  std::optional<std::string> fe_coefs, plot_data;
  std::optional<double> ci_level;
  bool dump_ast = false;
  NumericFlags num;
};

int dump_formula(const std::string& formula) {
  char* json = nullptr;
  check(fehd_formula_dump(formula.c_str(), &json));
  OwnedString owned(json);
  std::cout << json;
  return kExitOk;
}

int run_fit(const FitArgs& a) {
  if (a.dump_ast) return dump_formula(a.formula);
  if (a.data.empty()) throw CLI::RequiredError("--data");

  auto opt = new_options();
  fehd_options* o = opt.get();
  set_if(o, "family", a.family);
  set_if(o, "weights", a.weights);
  set_if(o, "offset", a.offset);
  set_if(o, "split", a.split);
  set_if(o, "fsplit", a.fsplit);
  set_if(o, "subset", a.subset);
  set_if(o, "ssc", a.ssc);
  for (const auto& v : a.vcov) set(o, "vcov", v);
  const std::string format = a.output ? *a.output : (a.file ? infer_format(*a.file) : "text");
  set(o, "output", format);
  if (!a.dict.empty()) set(o, "dict", join(a.dict));
  if (!a.keep.empty()) set(o, "keep", join(a.keep));
  if (!a.drop.empty()) set(o, "drop", join(a.drop));
  if (!a.order.empty()) set(o, "order", join(a.order));
  if (!a.fitstat.empty()) set(o, "fitstat", join(a.fitstat));
  set_if(o, "signif", a.signif);
  set_if(o, "caption", a.caption);
  set_if(o, "label", a.label);
  set_if(o, "ci_level", a.ci_level);
  if (a.fe_coefs) set(o, "fe_coefs", "true");
  apply_numeric_flags(o, a.num);
  // Every flag is checked before the data is read.
  check(fehd_options_validate(o));

  fehd_dataset* raw = nullptr;
  check(fehd_dataset_load_csv(a.data.c_str(), &raw));
  std::unique_ptr<fehd_dataset, DatasetDeleter> ds(raw);
  if (a.panel) {
    const auto comma = a.panel->find(',');
    if (comma == std::string::npos) throw CLI::ValidationError("--panel", "expected unit,time");
    check(fehd_dataset_set_panel(ds.get(), a.panel->substr(0, comma).c_str(), a.panel->substr(comma + 1).c_str()));
  }

  fehd_results* rraw = nullptr;
  check(fehd_fit(ds.get(), a.formula.c_str(), o, &rraw));
  std::unique_ptr<fehd_results, ResultsDeleter> res(rraw);
  for (std::size_t i = 0; i < fehd_results_count(res.get()); ++i)
    if (const char* err = fehd_results_error(res.get(), i))
      std::cerr << "fehd: warning: model " << i + 1 << " failed: " << err << "\n";

  char* table = nullptr;
  check(fehd_results_render(res.get(), o, &table));
  OwnedString owned_table(table);
  write_text(a.file.value_or("-"), table);

  if (a.fe_coefs) {
    char* csv = nullptr;
    check(fehd_results_fixef_csv(res.get(), &csv));
    OwnedString owned(csv);
    write_text(*a.fe_coefs, csv);
  }
  if (a.plot_data) {
    char* csv = nullptr;
    check(fehd_results_plot_csv(res.get(), o, &csv));
    OwnedString owned(csv);
    write_text(*a.plot_data, csv);
  }
  return kExitOk;
}

struct SimulateArgs {
  std::string n = "100000";
  std::string seed = "42";
  std::string out = "-";
};

int run_simulate(const SimulateArgs& a) {
  const auto n = parse_count("--n", a.n);
  const auto seed = parse_count("--seed", a.seed);
  fehd_dataset* raw = nullptr;
  check(fehd_dataset_simulate(n, seed, &raw));
  std::unique_ptr<fehd_dataset, DatasetDeleter> ds(raw);
  check(fehd_dataset_write_csv(ds.get(), a.out == "-" ? "/dev/stdout" : a.out.c_str()));
  return kExitOk;
}

struct BenchArgs {
  std::vector<std::string> sizes{"1e4", "1e5", "1e6"};
  std::vector<std::string> cases{"simple2fe", "difficult3fe"};
  std::string reps = "3";
  std::optional<double> timeout;
  std::string out = "-";
  bool parallel_cases = false;
  NumericFlags num;
};

int run_bench(const BenchArgs& a) {
  auto opt = new_options();
  fehd_options* o = opt.get();
  std::vector<std::string> sizes;
  for (const auto& s : a.sizes) sizes.push_back(std::to_string(parse_count("--sizes", s)));
  set(o, "sizes", join(sizes));
  set(o, "cases", join(a.cases));
  set(o, "reps", std::to_string(parse_count("--reps", a.reps)));
  set_if(o, "timeout", a.timeout);
  if (a.parallel_cases) set(o, "parallel_cases", "true");
  apply_numeric_flags(o, a.num);
  check(fehd_options_validate(o));
  char* csv = nullptr;
  check(fehd_bench_run(o, &csv));
  OwnedString owned(csv);
  write_text(a.out, csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fehd: fixed-effects regressions on tabular files"};
  app.set_version_flag("--version", std::string(fehd_version()));
  app.set_config("--config", "", "TOML-like file of flag values; [fit], [bench] and [simulate] sections");
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Estimate one or more models and print a table");
  fit_cmd->add_option("--formula,-f", fit.formula, "Model formula")->required();
  fit_cmd->add_option("--data,-d", fit.data, "CSV file with a header row");
  fit_cmd->add_option("--family", fit.family, "ols, gaussian, poisson or logit");
  fit_cmd->add_option("--vcov", fit.vcov,
                      "iid, hc1, cluster[=col], twoway=a,b, nw=unit,time[,lag] or dk=time[,lag]; repeatable");
  fit_cmd->add_option("--weights", fit.weights, "Weight column");
  fit_cmd->add_option("--offset", fit.offset, "Offset column");
  auto* split_opt = fit_cmd->add_option("--split", fit.split, "One estimation per level of this column");
  auto* fsplit_opt = fit_cmd->add_option("--fsplit", fit.fsplit, "Full sample plus one estimation per level");
  split_opt->excludes(fsplit_opt);
  fit_cmd->add_option("--subset", fit.subset, "Row filter such as 'col==value'");
  fit_cmd->add_option("--panel", fit.panel, "Panel identifiers: unit,time");
  fit_cmd->add_option("--ssc", fit.ssc, "Small-sample correction: default or none");
  fit_cmd->add_option("--output,-o", fit.output, "text, latex or json (default: from --file, else text)");
  fit_cmd->add_option("--file", fit.file, "Write the table here instead of stdout");
  fit_cmd->add_option("--dict", fit.dict, "Variable labels as name=label pairs")->delimiter(',');
  fit_cmd->add_option("--keep", fit.keep, "Regexes of coefficients to keep")->delimiter(',');
  fit_cmd->add_option("--drop", fit.drop, "Regexes of coefficients to drop")->delimiter(',');
  fit_cmd->add_option("--order", fit.order, "Regexes giving the coefficient order")->delimiter(',');
  fit_cmd->add_option("--fitstat", fit.fitstat, "Fit statistics, e.g. n,r2,wr2")->delimiter(',');
  fit_cmd->add_option("--signif", fit.signif, "Significance stars: auto, console, aer or none");
  fit_cmd->add_option("--caption", fit.caption, "LaTeX caption");
  fit_cmd->add_option("--label", fit.label, "LaTeX label");
  fit_cmd->add_option("--fe-coefs", fit.fe_coefs, "Write recovered FE coefficients as CSV to this file");
  fit_cmd->add_option("--plot-data", fit.plot_data, "Write coefficient plot data as CSV to this file");
  fit_cmd->add_option("--ci-level", fit.ci_level, "Confidence level of the plot data");
  fit_cmd->add_option("--demean-tol", fit.num.demean_tol, "Demeaning tolerance");
  fit_cmd->add_option("--demean-maxiter", fit.num.demean_maxiter, "Demeaning iteration cap");
  fit_cmd->add_flag("--dump-ast", fit.dump_ast, "Print the parsed formula as JSON and exit");
  add_numeric_flags(fit_cmd, fit.num);
  fit_cmd->get_option("--output")->check(CLI::IsMember({"text", "latex", "json"}));

  std::string ast_formula;
  auto* ast_cmd = app.add_subcommand("dump-ast", "Print the parsed formula and its expanded models as JSON");
  ast_cmd->add_option("formula,--formula", ast_formula, "Model formula")->required();

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Write a simulated employee-firm panel as CSV");
  sim_cmd->add_option("--n", sim.n, "Number of observations");
  sim_cmd->add_option("--seed", sim.seed, "Random seed");
  sim_cmd->add_option("--out", sim.out, "Output CSV, - for stdout");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time fits on simulated panels");
  bench_cmd->add_option("--sizes", bench.sizes, "Sample sizes, ascending")->delimiter(',');
  bench_cmd->add_option("--cases", bench.cases, "simple2fe, simple3fe, difficult2fe, difficult3fe, optional -poisson")
      ->delimiter(',');
  bench_cmd->add_option("--reps", bench.reps, "Replications per size");
  bench_cmd->add_option("--timeout", bench.timeout, "Per-fit time limit in seconds");
  bench_cmd->add_option("--out", bench.out, "Output CSV, - for stdout");
  bench_cmd->add_flag("--parallel-cases", bench.parallel_cases, "Run the cases of each panel concurrently");
  add_numeric_flags(bench_cmd, bench.num);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*fit_cmd) return run_fit(fit);
    if (*ast_cmd) return dump_formula(ast_formula);
    if (*sim_cmd) return run_simulate(sim);
    if (*bench_cmd) return run_bench(bench);
  } catch (const Failure& f) {
    return f.code;
  } catch (const CLI::ParseError& e) {
    std::cerr << "fehd: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "fehd: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
