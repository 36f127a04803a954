#include "fehd/fehd.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "fehd/bench.hpp"
#include "fehd/data.hpp"
#include "fehd/error.hpp"
#include "fehd/formula.hpp"
#include "fehd/inference.hpp"
#include "fehd/multiest.hpp"
#include "fehd/present.hpp"

struct fehd_dataset {
  fehd::data::Dataset ds;
};

struct fehd_options {
  std::map<std::string, std::string> values;
  std::vector<std::string> vcovs;
};

struct fehd_results {
  const fehd_dataset* dataset = nullptr;
  std::optional<std::string> split;
  fehd::multi::MultiResult multi;
};

namespace {

thread_local std::string g_last_error;

fehd_status status_of(fehd::ErrorKind k) {
  switch (k) {
    case fehd::ErrorKind::InvalidArgument: return FEHD_ERR_INVALID_ARGUMENT;
    case fehd::ErrorKind::Parse: return FEHD_ERR_PARSE;
    case fehd::ErrorKind::Io: return FEHD_ERR_IO;
    case fehd::ErrorKind::Data: return FEHD_ERR_DATA;
    case fehd::ErrorKind::Estimation: return FEHD_ERR_ESTIMATION;
  }
  return FEHD_ERR_INTERNAL;
}

template <class F>
fehd_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return FEHD_OK;
  } catch (const fehd::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FEHD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FEHD_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (!p) throw fehd::invalid_argument(std::string(what) + " must not be null");
}

// Typed views of the option strings.
class OptionReader {
 public:
  explicit OptionReader(const fehd_options* o) : o_(o) {}

  std::optional<std::string> str(const std::string& key) const {
    if (!o_) return std::nullopt;
    const auto it = o_->values.find(key);
    if (it == o_->values.end()) return std::nullopt;
    return it->second;
  }
  double number(const std::string& key, double def) const {
    const auto s = str(key);
    if (!s) return def;
    char* end = nullptr;
    const double v = std::strtod(s->c_str(), &end);
    if (s->empty() || *end != '\0' || !std::isfinite(v))
      throw fehd::invalid_argument("option '" + key + "' expects a number, got '" + *s + "'");
    return v;
  }
  std::size_t count(const std::string& key, std::size_t def) const {
    const auto s = str(key);
    if (!s) return def;
    const double v = number(key, 0.0);
    if (v < 0.0 || v != std::floor(v))
      throw fehd::invalid_argument("option '" + key + "' expects a nonnegative integer, got '" + *s + "'");
    return static_cast<std::size_t>(v);
  }
  bool flag(const std::string& key, bool def) const {
    const auto s = str(key);
    if (!s) return def;
    if (*s == "true" || *s == "1" || *s == "yes" || *s == "on") return true;
    if (*s == "false" || *s == "0" || *s == "no" || *s == "off") return false;
    throw fehd::invalid_argument("option '" + key + "' expects true or false, got '" + *s + "'");
  }
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    const auto s = str(key);
    if (!s || s->empty()) return out;
    std::stringstream ss(*s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(' ');
      const auto e = item.find_last_not_of(' ');
      out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
    }
    return out;
  }
  const std::vector<std::string>& vcovs() const {
    static const std::vector<std::string> none;
    return o_ ? o_->vcovs : none;
  }

 private:
  const fehd_options* o_;
};

fehd::multi::MultiOptions multi_options(const OptionReader& r) {
  fehd::multi::MultiOptions m;
  auto& f = m.fit;
  if (auto s = r.str("family")) f.family = fehd::est::parse_family(*s);
  f.weights = r.str("weights");
  f.offset = r.str("offset");
  if (auto s = r.str("subset")) f.subset = fehd::data::parse_subset(*s);
  f.collin_tol = r.number("collin_tol", f.collin_tol);
  f.demean.tol = r.number("demean_tol", f.demean.tol);
  if (!(f.demean.tol > 0.0)) throw fehd::invalid_argument("option 'demean_tol' must be positive");
  f.demean.max_iter = r.count("demean_maxiter", f.demean.max_iter);
  f.demean.accelerate = r.flag("accelerate", true);
  f.glm_tol = r.number("glm_tol", f.glm_tol);
  f.irls_max_iter = r.count("irls_maxiter", f.irls_max_iter);
  f.demean.threads = fehd::demean::resolve_threads(static_cast<unsigned>(r.count("threads", 0)));
  f.keep_fixef = r.flag("fe_coefs", false);
  const auto split = r.str("split");
  const auto fsplit = r.str("fsplit");
  if (split && fsplit) throw fehd::invalid_argument("options 'split' and 'fsplit' are mutually exclusive");
  if (split) m.split = *split;
  if (fsplit) {
    m.split = *fsplit;
    m.fsplit = true;
  }
  return m;
}

fehd::present::TableSpec table_spec(const OptionReader& r) {
  fehd::present::TableSpec t;
  for (const auto& v : r.vcovs()) t.vcovs.push_back(fehd::inf::parse_vcov(v));
  if (auto s = r.str("ssc")) {
    if (*s == "none") t.ssc = fehd::inf::Ssc::None;
    else if (*s != "default") throw fehd::invalid_argument("option 'ssc' expects none or default");
  }
  for (const auto& kv : r.list("dict")) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw fehd::invalid_argument("option 'dict' expects name=label pairs, got '" + kv + "'");
    t.dict[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  t.keep = r.list("keep");
  t.drop = r.list("drop");
  t.order = r.list("order");
  t.fitstats = r.list("fitstat");
  for (const auto& s : t.fitstats)
    if (!fehd::inf::is_fit_stat(s)) throw fehd::invalid_argument("unknown fit statistic '" + s + "'");
  if (auto s = r.str("signif")) t.signif = fehd::present::parse_signif(*s);
  if (auto s = r.str("output")) t.format = fehd::present::parse_format(*s);
  t.caption = r.str("caption").value_or("");
  t.label = r.str("label").value_or("");
  t.split_var = r.str("split");
  if (!t.split_var) t.split_var = r.str("fsplit");
  // Patterns are compiled here so that bad regexes surface before any work.
  fehd::present::select_rows({}, t.keep, t.drop, t.order);
  return t;
}

fehd::bench::BenchOptions bench_options(const OptionReader& r) {
  fehd::bench::BenchOptions b;
  for (const auto& s : r.list("sizes")) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0' || !(v >= 1.0) || v != std::floor(v))
      throw fehd::invalid_argument("option 'sizes' expects positive integers, got '" + s + "'");
    b.sizes.push_back(static_cast<std::size_t>(v));
  }
  for (const auto& c : r.list("cases")) b.cases.push_back(fehd::bench::parse_case(c));
  if (b.cases.empty()) b.cases.push_back(fehd::bench::parse_case("simple2fe"));
  b.reps = r.count("reps", b.reps);
  b.seed = r.count("seed", b.seed);
  b.threads = fehd::demean::resolve_threads(static_cast<unsigned>(r.count("threads", 0)));
  b.accelerate = r.flag("accelerate", true);
  if (r.str("timeout")) b.timeout_seconds = r.number("timeout", 0.0);
  b.parallel_cases = r.flag("parallel_cases", false);
  return b;
}

std::vector<const fehd::est::FitResult*> successful(const fehd_results* res) {
  std::vector<const fehd::est::FitResult*> out;
  for (const auto& e : res->multi.entries)
    if (e.fit) out.push_back(&*e.fit);
  return out;
}

const fehd::multi::Entry& entry(const fehd_results* res, size_t i) {
  if (i >= res->multi.entries.size()) throw fehd::invalid_argument("result index out of range");
  return res->multi.entries[i];
}

}  // namespace

extern "C" {

const char* fehd_version(void) { return "1.0.0"; }

const char* fehd_last_error(void) { return g_last_error.c_str(); }

void fehd_string_free(char* s) { std::free(s); }

fehd_status fehd_dataset_load_csv(const char* path, fehd_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto h = std::make_unique<fehd_dataset>();
    h->ds = fehd::data::load_csv(path);
    *out = h.release();
  });
}

fehd_status fehd_dataset_read_csv_text(const char* text, fehd_dataset** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    std::istringstream in(text);
    auto h = std::make_unique<fehd_dataset>();
    h->ds = fehd::data::read_csv(in);
    *out = h.release();
  });
}

fehd_status fehd_dataset_simulate(size_t n, uint64_t seed, fehd_dataset** out) {
  return guarded([&] {
    require(out, "out");
    fehd::bench::DgpConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    auto h = std::make_unique<fehd_dataset>();
    h->ds = fehd::bench::simulate_panel(cfg);
    *out = h.release();
  });
}

fehd_status fehd_dataset_write_csv(const fehd_dataset* ds, const char* path) {
  return guarded([&] {
    require(ds, "dataset");
    require(path, "path");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw fehd::io_error(std::string("cannot open '") + path + "' for writing");
    fehd::data::write_csv(ds->ds, f);
    if (!f) throw fehd::io_error(std::string("failed writing '") + path + "'");
  });
}

fehd_status fehd_dataset_set_panel(fehd_dataset* ds, const char* unit, const char* time) {
  return guarded([&] {
    require(ds, "dataset");
    require(unit, "unit");
    require(time, "time");
    ds->ds.set_panel(unit, time);
  });
}

size_t fehd_dataset_nrows(const fehd_dataset* ds) { return ds ? ds->ds.n_rows() : 0; }
size_t fehd_dataset_ncols(const fehd_dataset* ds) { return ds ? ds->ds.n_cols() : 0; }
void fehd_dataset_free(fehd_dataset* ds) { delete ds; }

fehd_status fehd_formula_dump(const char* formula, char** json_out) {
  return guarded([&] {
    require(formula, "formula");
    require(json_out, "json_out");
    const auto spec = fehd::formula::parse_formula(formula);
    nlohmann::json j;
    j["formula"] = fehd::formula::to_string(spec);
    j["ast"] = fehd::formula::to_json(spec);
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : fehd::formula::expand_models(spec)) models.push_back(fehd::formula::to_json(m));
    j["models"] = std::move(models);
    *json_out = dup_string(j.dump(2) + "\n");
  });
}

fehd_status fehd_options_new(fehd_options** out) {
  return guarded([&] {
    require(out, "out");
    *out = new fehd_options();
  });
}

fehd_status fehd_options_set(fehd_options* opt, const char* key, const char* value) {
  static const char* known[] = {"family",    "weights",  "offset",    "subset",       "split",
                                "fsplit",    "vcov",     "ssc",       "collin_tol",   "demean_tol",
                                "demean_maxiter", "accelerate", "glm_tol", "irls_maxiter", "threads",
                                "fe_coefs",  "output",   "dict",      "keep",         "drop",
                                "order",     "fitstat",  "signif",    "caption",      "label",
                                "ci_level",  "sizes",    "cases",     "reps",         "seed",
                                "timeout",   "parallel_cases"};
  return guarded([&] {
    require(opt, "options");
    require(key, "key");
    require(value, "value");
    const std::string k = key;
    if (std::none_of(std::begin(known), std::end(known), [&](const char* s) { return k == s; }))
      throw fehd::invalid_argument("unknown option '" + k + "'");
    if (k == "vcov")
      opt->vcovs.emplace_back(value);
    else
      opt->values[k] = value;
  });
}

fehd_status fehd_options_validate(const fehd_options* opt) {
  return guarded([&] {
    require(opt, "options");
    const OptionReader r(opt);
    multi_options(r);
    table_spec(r);
    const double level = r.number("ci_level", 0.95);
    if (!(level >= 0.0 && level < 1.0)) throw fehd::invalid_argument("option 'ci_level' must be in [0, 1)");
    if (r.str("sizes") || r.str("cases")) bench_options(r);
    r.count("reps", 0);
    r.count("seed", 0);
    if (r.str("timeout") && !(r.number("timeout", 0.0) > 0.0))
      throw fehd::invalid_argument("option 'timeout' must be positive");
  });
}

void fehd_options_free(fehd_options* opt) { delete opt; }

fehd_status fehd_fit(const fehd_dataset* ds, const char* formula, const fehd_options* opt,
                     fehd_results** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(formula, "formula");
    require(out, "out");
    const OptionReader r(opt);
    const auto mo = multi_options(r);
    const auto spec = fehd::formula::parse_formula(formula);
    auto h = std::make_unique<fehd_results>();
    h->dataset = ds;
    h->split = mo.split;
    h->multi = fehd::multi::run_multi(spec, ds->ds, mo);
    *out = h.release();
  });
}

size_t fehd_results_count(const fehd_results* res) { return res ? res->multi.entries.size() : 0; }
size_t fehd_results_failed(const fehd_results* res) { return res ? res->multi.n_failed() : 0; }

const char* fehd_results_error(const fehd_results* res, size_t i) {
  if (!res || i >= res->multi.entries.size()) return nullptr;
  const auto& e = res->multi.entries[i];
  return e.fit ? nullptr : e.error.c_str();
}

size_t fehd_results_ncoef(const fehd_results* res, size_t i) {
  if (!res || i >= res->multi.entries.size() || !res->multi.entries[i].fit) return 0;
  return static_cast<size_t>(res->multi.entries[i].fit->coef.size());
}

const char* fehd_results_coef_name(const fehd_results* res, size_t i, size_t j) {
  if (!res || i >= res->multi.entries.size() || !res->multi.entries[i].fit) return nullptr;
  const auto& names = res->multi.entries[i].fit->coef_names;
  return j < names.size() ? names[j].c_str() : nullptr;
}

fehd_status fehd_results_coef(const fehd_results* res, size_t i, double* out) {
  return guarded([&] {
    require(res, "results");
    require(out, "out");
    const auto& e = entry(res, i);
    if (!e.fit) throw fehd::estimation_error("entry " + std::to_string(i) + " failed: " + e.error);
    for (Eigen::Index j = 0; j < e.fit->coef.size(); ++j) out[j] = e.fit->coef(j);
  });
}

fehd_status fehd_results_vcov(const fehd_results* res, size_t i, const fehd_options* opt, double* out) {
  return guarded([&] {
    require(res, "results");
    require(out, "out");
    const auto& e = entry(res, i);
    if (!e.fit) throw fehd::estimation_error("entry " + std::to_string(i) + " failed: " + e.error);
    const auto t = table_spec(OptionReader(opt));
    const auto spec = t.vcovs.empty() ? fehd::inf::VcovSpec{} : t.vcovs.front();
    const auto v = fehd::inf::compute_vcov(*e.fit, spec, res->dataset->ds, t.ssc);
    const auto K = v.matrix.rows();
    for (Eigen::Index a = 0; a < K; ++a)
      for (Eigen::Index b = 0; b < K; ++b) out[a * K + b] = v.matrix(a, b);
  });
}

fehd_status fehd_results_render(const fehd_results* res, const fehd_options* opt, char** out) {
  return guarded([&] {
    require(res, "results");
    require(out, "out");
    auto t = table_spec(OptionReader(opt));
    t.models = successful(res);
    if (!t.split_var) t.split_var = res->split;
    *out = dup_string(fehd::present::render(t, res->dataset->ds));
  });
}

fehd_status fehd_results_plot_csv(const fehd_results* res, const fehd_options* opt, char** out) {
  return guarded([&] {
    require(res, "results");
    require(out, "out");
    const OptionReader r(opt);
    auto t = table_spec(r);
    t.models = successful(res);
    const auto data = fehd::present::build_table(t, res->dataset->ds);
    std::ostringstream s;
    fehd::present::write_plot_csv(fehd::present::plot_data(data, r.number("ci_level", 0.95)), s);
    *out = dup_string(s.str());
  });
}

fehd_status fehd_results_fixef_csv(const fehd_results* res, char** out) {
  return guarded([&] {
    require(res, "results");
    require(out, "out");
    std::ostringstream s;
    fehd::present::write_fixef_csv(successful(res), s);
    *out = dup_string(s.str());
  });
}

void fehd_results_free(fehd_results* res) { delete res; }

fehd_status fehd_bench_run(const fehd_options* opt, char** csv_out) {
  return guarded([&] {
    require(csv_out, "csv_out");
    const auto b = bench_options(OptionReader(opt));
    if (b.sizes.empty()) throw fehd::invalid_argument("option 'sizes' is required for benchmarks");
    std::ostringstream s;
    fehd::bench::write_bench_csv(fehd::bench::run_benchmark(b), s);
    *csv_out = dup_string(s.str());
  });
}

}  // extern "C"
