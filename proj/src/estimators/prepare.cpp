#include <algorithm>
#include <cmath>
#include <set>

#include "fehd/error.hpp"
#include "fehd/estimators.hpp"

namespace fehd::est {

std::string family_name(Family f) {
  switch (f) {
    case Family::Ols: return "ols";
    case Family::Poisson: return "poisson";
    case Family::Logit: return "logit";
    case Family::Gaussian: return "gaussian";
  }
  return "ols";
}

Family parse_family(std::string_view name) {
  if (name == "ols") return Family::Ols;
  if (name == "poisson") return Family::Poisson;
  if (name == "logit") return Family::Logit;
  if (name == "gaussian") return Family::Gaussian;
  throw invalid_argument("unknown family '" + std::string(name) +
                         "' (expected ols, poisson, logit or gaussian)");
}

namespace {

constexpr std::size_t kNoReason = sizeof(kReasonOrder) / sizeof(kReasonOrder[0]);

struct RowReasons {
  std::vector<std::uint8_t> first;  // index into kReasonOrder, kNoReason when kept

  explicit RowReasons(std::size_t n) : first(n, kNoReason) {}
  void flag(std::size_t row, std::size_t reason) {
    if (reason < first[row]) first[row] = static_cast<std::uint8_t>(reason);
  }
  void flag_missing(const std::vector<std::uint8_t>& missing, std::size_t reason) {
    for (std::size_t r = 0; r < missing.size(); ++r)
      if (missing[r]) flag(r, reason);
  }
  void flag_missing(const data::Column& col, std::size_t reason) {
    if (const auto* c = std::get_if<data::CategoricalColumn>(&col)) {
      for (std::size_t r = 0; r < c->codes.size(); ++r)
        if (c->codes[r] < 0) flag(r, reason);
      return;
    }
    flag_missing(std::get<data::NumericColumn>(col).missing, reason);
  }
};

std::vector<double> restrict_rows(const std::vector<double>& v, const std::vector<std::size_t>& rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

void add_unique(std::vector<std::string>& names, std::vector<std::vector<double>>& cols,
                formula::NamedColumn&& c) {
  if (std::find(names.begin(), names.end(), c.name) != names.end()) return;
  names.push_back(std::move(c.name));
  cols.push_back(std::move(c.values));
}

// Removes rows of FE groups whose outcome is constant at an uninformative value.
std::size_t drop_uninformative_groups(const data::Dataset& ds, data::SampleMask& mask,
                                      const std::vector<std::vector<std::string>>& factors,
                                      const std::vector<bool>& has_intercept,
                                      const std::vector<double>& y, Family family,
                                      std::size_t& n_groups_removed) {
  std::size_t removed = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t t = 0; t < factors.size(); ++t) {
      if (!has_intercept[t]) continue;
      const auto idx = data::make_factor_index(ds, mask, factors[t]);
      const auto rows = mask.used_rows();
      std::vector<double> lo(idx.n_groups, INFINITY), hi(idx.n_groups, -INFINITY);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto g = idx.group_of_row[i];
        lo[g] = std::min(lo[g], y[rows[i]]);
        hi[g] = std::max(hi[g], y[rows[i]]);
      }
      std::vector<std::uint8_t> bad(idx.n_groups, 0);
      std::size_t n_bad = 0;
      for (std::uint32_t g = 0; g < idx.n_groups; ++g) {
        const bool constant = lo[g] == hi[g];
        bad[g] = family == Family::Poisson ? (hi[g] == 0.0) : constant;
        n_bad += bad[g];
      }
      if (n_bad == 0) continue;
      n_groups_removed += n_bad;
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (bad[idx.group_of_row[i]]) {
          mask.keep[rows[i]] = 0;
          ++removed;
        }
      changed = true;
    }
  }
  return removed;
}

}  // namespace

Prepared prepare(const data::Dataset& ds, const formula::ModelSpec& model, const FitOptions& opt,
                 PrepareCache* cache) {
  const std::size_t n = ds.n_rows();
  Prepared p;
  p.dataset = &ds;
  p.model = model;
  RowReasons why(n);

  if (opt.subset) {
    const auto& col = ds.column(opt.subset->column);
    for (std::size_t r = 0; r < n; ++r)
      if (!data::subset_keeps(*opt.subset, col, r)) why.flag(r, 0);
  }
  if (opt.split) {
    const auto& col = ds.column(opt.split->column);
    for (std::size_t r = 0; r < n; ++r)
      if (data::is_missing(col, r) || data::cell_label(col, r) != opt.split->level) why.flag(r, 1);
    p.sample_label = opt.split->level;
  }

  auto yc = formula::evaluate(ds, model.lhs);
  why.flag_missing(yc.missing, 2);
  p.y_name = yc.name;

  std::vector<std::string> x_names;
  std::vector<std::vector<double>> x_full;
  for (const auto& t : model.rhs)
    for (auto& c : formula::evaluate(ds, t)) {
      why.flag_missing(c.missing, 3);
      add_unique(x_names, x_full, std::move(c));
    }

  std::vector<std::vector<double>> endo_full, inst_full;
  if (model.iv) {
    if (model.iv->instruments.empty() || model.iv->endo.empty())
      throw invalid_argument("the IV part needs endogenous variables and instruments");
    for (const auto& e : model.iv->endo) {
      auto c = formula::evaluate(ds, e);
      why.flag_missing(c.missing, 4);
      add_unique(p.endo_names, endo_full, std::move(c));
    }
    for (const auto& t : model.iv->instruments)
      for (auto& c : formula::evaluate(ds, t)) {
        why.flag_missing(c.missing, 4);
        add_unique(p.inst_names, inst_full, std::move(c));
      }
    for (const auto& e : p.endo_names)
      if (std::find(x_names.begin(), x_names.end(), e) != x_names.end())
        throw invalid_argument("variable '" + e + "' is both exogenous and endogenous");
  }

  std::vector<bool> fe_intercept;
  for (const auto& fe : model.fe) {
    p.fe_factors.push_back(fe.factors);
    fe_intercept.push_back(fe.intercept);
    for (const auto& f : fe.factors) why.flag_missing(ds.column(f), 5);
    for (const auto& s : fe.slopes) {
      const auto& col = ds.column(s);
      if (!data::is_numeric(col))
        throw data_error("varying-slope variable '" + s + "' must be numeric");
      why.flag_missing(col, 5);
    }
  }

  std::vector<double> w_full;
  if (opt.weights) {
    const auto& wc = ds.numeric(*opt.weights);
    w_full = wc.values;
    for (std::size_t r = 0; r < n; ++r) {
      if (wc.missing[r]) {
        why.flag(r, 6);
        continue;
      }
      if (wc.values[r] < 0.0 || !std::isfinite(wc.values[r]))
        throw data_error("weights '" + *opt.weights + "' contain negative or infinite values");
      if (wc.values[r] == 0.0) why.flag(r, 8);
    }
  }
  std::vector<double> o_full;
  if (opt.offset) {
    const auto& oc = ds.numeric(*opt.offset);
    o_full = oc.values;
    why.flag_missing(oc.missing, 7);
  }

  p.mask.keep.assign(n, 1);
  for (std::size_t r = 0; r < n; ++r)
    if (why.first[r] != kNoReason) {
      p.mask.keep[r] = 0;
      ++p.mask.reason_counts[kReasonOrder[why.first[r]]];
    }

  if (opt.family == Family::Poisson || opt.family == Family::Logit) {
    for (std::size_t r = 0; r < n; ++r) {
      if (!p.mask.keep[r]) continue;
      const double v = yc.values[r];
      if (opt.family == Family::Poisson && v < 0.0)
        throw data_error("Poisson outcome '" + p.y_name + "' has negative values");
      if (opt.family == Family::Logit && v != 0.0 && v != 1.0)
        throw data_error("logit outcome '" + p.y_name + "' must be 0 or 1");
    }
    if (!model.fe.empty()) {
      p.n_removed_fe_rows = drop_uninformative_groups(ds, p.mask, p.fe_factors, fe_intercept,
                                                      yc.values, opt.family, p.n_removed_fe_groups);
      if (p.n_removed_fe_rows)
        p.mask.reason_counts["FE-constant-outcome"] += p.n_removed_fe_rows;
    }
  }

  p.rows = p.mask.used_rows();
  if (p.rows.empty()) throw estimation_error("no observations left after removing missing values");

  // With every row kept the evaluated columns are moved rather than gathered.
  const bool all_rows = p.rows.size() == n;
  auto take = [&](std::vector<double>& v) { return all_rows ? std::move(v) : restrict_rows(v, p.rows); };
  p.y = take(yc.values);
  const bool fe_absorbs_constant =
      std::any_of(model.fe.begin(), model.fe.end(), [](const formula::FeTerm& f) { return f.intercept; });
  if (!fe_absorbs_constant) {
    p.x_names.push_back("(Intercept)");
    p.x.emplace_back(p.rows.size(), 1.0);
  }
  for (std::size_t j = 0; j < x_names.size(); ++j) {
    p.x_names.push_back(x_names[j]);
    p.x.push_back(take(x_full[j]));
  }
  for (auto& e : endo_full) p.endo.push_back(take(e));
  for (auto& z : inst_full) p.inst.push_back(take(z));
  if (!w_full.empty()) p.weights = take(w_full);
  if (!o_full.empty()) p.offset = take(o_full);

  for (std::size_t t = 0; t < model.fe.size(); ++t) {
    const auto& term = model.fe[t];
    const std::string name = formula::to_string(term);
    if (cache) {
      auto hit = std::find_if(cache->entries.begin(), cache->entries.end(), [&](const auto& e) {
        return e.fe == name && e.keep == p.mask.keep;
      });
      if (hit != cache->entries.end()) {
        p.fe.push_back(hit->dim);
        continue;
      }
    }
    auto idx = data::make_factor_index(ds, p.mask, term.factors);
    demean::FeDimension d;
    d.name = name;
    d.group = std::move(idx.group_of_row);
    d.n_groups = idx.n_groups;
    d.intercept = term.intercept;
    for (const auto& s : term.slopes) d.slopes.push_back(restrict_rows(ds.numeric(s).values, p.rows));
    if (cache) cache->entries.push_back({name, p.mask.keep, d});
    p.fe.push_back(std::move(d));
  }
  return p;
}

std::string pooling_key(const Prepared& p, const FitOptions& opt) {
  std::string key = family_name(opt.family);
  key += '|';
  for (const auto& f : p.fe) key += f.name + "+";
  key += '|';
  key += opt.weights.value_or("");
  key += '|';
  key.append(reinterpret_cast<const char*>(p.mask.keep.data()), p.mask.keep.size());
  return key;
}

std::vector<std::string> linear_targets(const Prepared& p) {
  std::vector<std::string> names{p.y_name};
  auto add = [&](const std::string& s) {
    if (std::find(names.begin(), names.end(), s) == names.end()) names.push_back(s);
  };
  for (const auto& s : p.x_names) add(s);
  for (const auto& s : p.endo_names) add(s);
  for (const auto& s : p.inst_names) add(s);
  return names;
}

const std::vector<double>& raw_column(const Prepared& p, const std::string& name) {
  if (name == p.y_name) return p.y;
  for (std::size_t j = 0; j < p.x_names.size(); ++j)
    if (p.x_names[j] == name) return p.x[j];
  for (std::size_t j = 0; j < p.endo_names.size(); ++j)
    if (p.endo_names[j] == name) return p.endo[j];
  for (std::size_t j = 0; j < p.inst_names.size(); ++j)
    if (p.inst_names[j] == name) return p.inst[j];
  throw invalid_argument("unknown model column '" + name + "'");
}

DemeanCache demean_columns(const Prepared& p, const std::vector<std::string>& names,
                           const demean::Options& opt) {
  DemeanCache cache;
  if (p.fe.empty()) {
    for (const auto& nm : names) cache.columns[nm] = raw_column(p, nm);
    return cache;
  }
  demean::FeStructure fs(p.fe, p.weights);
  std::vector<std::span<const double>> spans;
  for (const auto& nm : names) spans.emplace_back(raw_column(p, nm));
  auto res = demean::demean(fs, std::span<const std::span<const double>>(spans), opt);
  for (std::size_t j = 0; j < names.size(); ++j) {
    cache.columns[names[j]] = std::move(res.residuals[j]);
    cache.info[names[j]] = res.info[j];
  }
  cache.iterations = res.max_iterations();
  cache.sweeps = res.max_sweeps();
  cache.converged = res.all_converged();
  return cache;
}

void summarize(const DemeanCache& cache, const std::vector<std::string>& names,
               std::size_t& iterations, std::size_t& sweeps, bool& converged) {
  iterations = 0;
  sweeps = 0;
  converged = true;
  if (cache.info.empty()) {
    iterations = cache.iterations;
    sweeps = cache.sweeps;
    converged = cache.converged;
    return;
  }
  for (const auto& nm : names) {
    const auto it = cache.info.find(nm);
    if (it == cache.info.end()) continue;
    iterations = std::max(iterations, it->second.iterations);
    sweeps = std::max(sweeps, it->second.sweeps);
    converged = converged && it->second.converged;
  }
}

}  // namespace fehd::est
