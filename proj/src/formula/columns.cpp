#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fehd/error.hpp"
#include "fehd/formula.hpp"

namespace fehd::formula {
namespace {

struct Level {
  bool numeric = false;
  double value = 0.0;
  std::string label;
};

// Sorted distinct observed levels and the per-row level index (-1 missing).
std::vector<Level> sorted_levels(const data::Column& col, std::vector<std::int32_t>& row_level) {
  const std::size_t n = data::column_size(col);
  row_level.assign(n, -1);
  std::vector<Level> levels;
  if (const auto* num = std::get_if<data::NumericColumn>(&col)) {
    std::map<double, std::int32_t> seen;
    for (std::size_t r = 0; r < n; ++r)
      if (!num->missing[r]) seen.emplace(num->values[r], 0);
    std::int32_t k = 0;
    for (auto& [v, idx] : seen) {
      idx = k++;
      levels.push_back({true, v, data::number_label(v)});
    }
    for (std::size_t r = 0; r < n; ++r)
      if (!num->missing[r]) row_level[r] = seen.at(num->values[r]);
    return levels;
  }
  const auto& cat = std::get<data::CategoricalColumn>(col);
  std::vector<std::uint8_t> used(cat.levels.size(), 0);
  for (auto c : cat.codes)
    if (c >= 0) used[static_cast<std::size_t>(c)] = 1;
  std::vector<std::int32_t> order;
  for (std::size_t c = 0; c < cat.levels.size(); ++c)
    if (used[c]) order.push_back(static_cast<std::int32_t>(c));
  std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
    return cat.levels[static_cast<std::size_t>(a)] < cat.levels[static_cast<std::size_t>(b)];
  });
  std::vector<std::int32_t> remap(cat.levels.size(), -1);
  for (std::size_t k = 0; k < order.size(); ++k) {
    remap[static_cast<std::size_t>(order[k])] = static_cast<std::int32_t>(k);
    levels.push_back({false, 0.0, cat.levels[static_cast<std::size_t>(order[k])]});
  }
  for (std::size_t r = 0; r < n; ++r)
    if (cat.codes[r] >= 0) row_level[r] = remap[static_cast<std::size_t>(cat.codes[r])];
  return levels;
}

std::string literal_label(const Literal& l) {
  return l.is_string ? l.text : data::number_label(l.number);
}

std::int32_t find_level(const std::vector<Level>& levels, const std::string& label) {
  for (std::size_t k = 0; k < levels.size(); ++k)
    if (levels[k].label == label) return static_cast<std::int32_t>(k);
  return -1;
}

}  // namespace

std::vector<NamedColumn> expand_i(const ITerm& term, const data::Column& column,
                                  const data::Column* interacting) {
  const std::size_t n = data::column_size(column);
  std::vector<std::int32_t> row_level;
  std::vector<Level> levels = sorted_levels(column, row_level);

  // Binning: merged level sits at the position of its smallest member.
  if (!term.bin.empty()) {
    std::vector<std::int32_t> target(levels.size());
    std::iota(target.begin(), target.end(), 0);
    std::vector<std::string> new_label(levels.size());
    for (std::size_t k = 0; k < levels.size(); ++k) new_label[k] = levels[k].label;
    for (const auto& g : term.bin) {
      std::vector<std::int32_t> members;
      for (const auto& m : g.members) {
        const std::int32_t k = find_level(levels, literal_label(m));
        if (k >= 0) members.push_back(k);
      }
      if (members.empty()) continue;
      const std::int32_t existing = find_level(levels, g.label);
      if (existing >= 0 &&
          std::find(members.begin(), members.end(), existing) == members.end())
        throw invalid_argument("i(" + term.var + "): bin label '" + g.label +
                               "' collides with an existing level");
      const std::int32_t head = *std::min_element(members.begin(), members.end());
      for (auto k : members) target[static_cast<std::size_t>(k)] = head;
      new_label[static_cast<std::size_t>(head)] = g.label;
    }
    std::vector<std::int32_t> compact(levels.size(), -1);
    std::vector<Level> merged;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      if (target[k] != static_cast<std::int32_t>(k)) continue;
      compact[k] = static_cast<std::int32_t>(merged.size());
      Level l = levels[k];
      if (new_label[k] != l.label) {
        l.numeric = false;
        l.label = new_label[k];
      }
      merged.push_back(std::move(l));
    }
    for (auto& r : row_level)
      if (r >= 0) r = compact[static_cast<std::size_t>(target[static_cast<std::size_t>(r)])];
    levels = std::move(merged);
  }

  std::vector<std::uint8_t> dropped(levels.size(), 0);
  for (const auto& ref : term.ref) {
    const std::int32_t k = find_level(levels, literal_label(ref));
    if (k < 0)
      throw invalid_argument("i(" + term.var + "): reference level '" + literal_label(ref) +
                             "' does not exist");
    dropped[static_cast<std::size_t>(k)] = 1;
  }
  if (term.ref.empty() && !term.with && !levels.empty()) dropped[0] = 1;

  std::vector<NamedColumn> out;
  if (!term.with) {
    for (std::size_t k = 0; k < levels.size(); ++k) {
      if (dropped[k]) continue;
      NamedColumn c{term.var + "::" + levels[k].label, std::vector<double>(n, 0.0),
                    std::vector<std::uint8_t>(n, 0)};
      for (std::size_t r = 0; r < n; ++r) {
        if (row_level[r] < 0) c.missing[r] = 1;
        else if (row_level[r] == static_cast<std::int32_t>(k)) c.values[r] = 1.0;
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  if (!interacting) throw invalid_argument("i(" + term.var + "): interacting column missing");
  if (data::column_size(*interacting) != n)
    throw invalid_argument("i(" + term.var + "): interacting column has a different length");

  if (!term.with_categorical) {
    const auto* num = std::get_if<data::NumericColumn>(interacting);
    if (!num)
      throw data_error("i(" + term.var + ", " + *term.with + "): '" + *term.with +
                       "' is categorical; write i." + *term.with + " for a categorical interaction");
    for (std::size_t k = 0; k < levels.size(); ++k) {
      if (dropped[k]) continue;
      NamedColumn c{term.var + "::" + levels[k].label + ":" + *term.with,
                    std::vector<double>(n, 0.0), std::vector<std::uint8_t>(n, 0)};
      for (std::size_t r = 0; r < n; ++r) {
        if (row_level[r] < 0 || num->missing[r]) c.missing[r] = 1;
        else if (row_level[r] == static_cast<std::int32_t>(k)) c.values[r] = num->values[r];
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  std::vector<std::int32_t> row_level2;
  const std::vector<Level> levels2 = sorted_levels(*interacting, row_level2);
  const std::size_t n2 = levels2.size();
  std::vector<std::uint8_t> observed(levels.size() * n2, 0);
  for (std::size_t r = 0; r < n; ++r)
    if (row_level[r] >= 0 && row_level2[r] >= 0)
      observed[static_cast<std::size_t>(row_level[r]) * n2 + static_cast<std::size_t>(row_level2[r])] = 1;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (dropped[k]) continue;
    for (std::size_t k2 = 1; k2 < n2; ++k2) {
      if (!observed[k * n2 + k2]) continue;
      NamedColumn c{term.var + "::" + levels[k].label + ":" + *term.with + "::" + levels2[k2].label,
                    std::vector<double>(n, 0.0), std::vector<std::uint8_t>(n, 0)};
      for (std::size_t r = 0; r < n; ++r) {
        if (row_level[r] < 0 || row_level2[r] < 0) c.missing[r] = 1;
        else if (row_level[r] == static_cast<std::int32_t>(k) &&
                 row_level2[r] == static_cast<std::int32_t>(k2))
          c.values[r] = 1.0;
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

NamedColumn evaluate(const data::Dataset& ds, const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Var: {
      const auto& col = ds.column(e.name);
      const auto* num = std::get_if<data::NumericColumn>(&col);
      if (!num)
        throw data_error("variable '" + e.name +
                         "' is categorical and cannot be used as a numeric regressor");
      return {e.name, num->values, num->missing};
    }
    case Expr::Kind::Log:
    case Expr::Kind::Exp: {
      NamedColumn c = evaluate(ds, e.args[0]);
      c.name = to_string(e);
      for (std::size_t r = 0; r < c.values.size(); ++r) {
        if (c.missing[r]) continue;
        const double v = e.kind == Expr::Kind::Log ? std::log(c.values[r]) : std::exp(c.values[r]);
        if (!std::isfinite(v)) {
          c.missing[r] = 1;
          c.values[r] = 0.0;
        } else {
          c.values[r] = v;
        }
      }
      return c;
    }
    case Expr::Kind::Shift: {
      NamedColumn inner = evaluate(ds, e.args[0]);
      data::NumericColumn src{std::move(inner.values), std::move(inner.missing)};
      data::NumericColumn shifted = data::shift_column(ds, src, e.op, e.offset);
      Expr named = e;
      named.explicit_offset = true;
      return {to_string(named), std::move(shifted.values), std::move(shifted.missing)};
    }
  }
  return {};
}

std::vector<NamedColumn> evaluate(const data::Dataset& ds, const Term& t) {
  if (const auto* e = std::get_if<Expr>(&t)) return {evaluate(ds, *e)};
  if (const auto* it = std::get_if<ITerm>(&t)) {
    const data::Column* with = it->with ? &ds.column(*it->with) : nullptr;
    return expand_i(*it, ds.column(it->var), with);
  }
  const auto& lt = std::get<LagTerm>(t);
  std::vector<NamedColumn> out;
  for (int k : lt.offsets) {
    if (k == 0 && lt.op != ShiftOp::Diff) {
      out.push_back(evaluate(ds, lt.inner));
      continue;
    }
    Expr e;
    e.kind = Expr::Kind::Shift;
    e.op = lt.op;
    e.offset = k;
    e.explicit_offset = true;
    e.args.push_back(lt.inner);
    out.push_back(evaluate(ds, e));
  }
  return out;
}

}  // namespace fehd::formula
