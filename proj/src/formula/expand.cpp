#include <algorithm>

#include "fehd/error.hpp"
#include "fehd/formula.hpp"

namespace fehd::formula {
namespace {

// Index sets chosen from the stepwise arguments, one per step.
std::vector<std::vector<std::size_t>> step_selections(StepKind kind, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  switch (kind) {
    case StepKind::Sw0:
      out.push_back({});
      [[fallthrough]];
    case StepKind::Sw:
      for (std::size_t j = 0; j < k; ++j) out.push_back({j});
      break;
    case StepKind::Csw0:
      out.push_back({});
      [[fallthrough]];
    case StepKind::Csw:
      for (std::size_t j = 0; j < k; ++j) {
        std::vector<std::size_t> s(j + 1);
        for (std::size_t m = 0; m <= j; ++m) s[m] = m;
        out.push_back(std::move(s));
      }
      break;
    case StepKind::Mvsw:
      // Subsets ordered by size, then lexicographically by argument index.
      for (std::size_t size = 0; size <= k; ++size) {
        std::vector<std::uint8_t> pick(k, 0);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), 1);
        do {
          std::vector<std::size_t> s;
          for (std::size_t j = 0; j < k; ++j)
            if (pick[j]) s.push_back(j);
          out.push_back(std::move(s));
        } while (std::prev_permutation(pick.begin(), pick.end()));
      }
      break;
  }
  return out;
}

template <class T>
std::vector<std::vector<T>> expand_part(const std::vector<Item<T>>& items) {
  const Stepwise<T>* sw = nullptr;
  for (const auto& it : items)
    if (const auto* s = std::get_if<Stepwise<T>>(&it)) sw = s;
  if (!sw) {
    std::vector<T> flat;
    for (const auto& it : items) flat.push_back(std::get<T>(it));
    return {flat};
  }
  std::vector<std::vector<T>> out;
  for (const auto& sel : step_selections(sw->kind, sw->args.size())) {
    std::vector<T> terms;
    for (const auto& it : items) {
      if (const auto* t = std::get_if<T>(&it)) {
        terms.push_back(*t);
        continue;
      }
      for (std::size_t j : sel)
        for (const auto& t : sw->args[j]) terms.push_back(t);
    }
    out.push_back(std::move(terms));
  }
  return out;
}

}  // namespace

std::size_t step_count(StepKind kind, std::size_t n_args) {
  switch (kind) {
    case StepKind::Sw:
    case StepKind::Csw: return n_args;
    case StepKind::Sw0:
    case StepKind::Csw0: return n_args + 1;
    case StepKind::Mvsw: return std::size_t{1} << n_args;
  }
  return 1;
}

std::vector<ModelSpec> expand_models(const FormulaSpec& spec) {
  if (spec.lhs.empty()) throw invalid_argument("formula has no dependent variable");
  const auto rhs_steps = expand_part(spec.rhs);
  const auto fe_steps =
      spec.fe ? expand_part(*spec.fe) : std::vector<std::vector<FeTerm>>{{}};
  std::vector<ModelSpec> out;
  out.reserve(spec.lhs.size() * rhs_steps.size() * fe_steps.size());
  for (std::size_t l = 0; l < spec.lhs.size(); ++l)
    for (std::size_t r = 0; r < rhs_steps.size(); ++r)
      for (std::size_t f = 0; f < fe_steps.size(); ++f) {
        ModelSpec m;
        m.lhs = spec.lhs[l];
        m.rhs = rhs_steps[r];
        m.fe = fe_steps[f];
        m.iv = spec.iv;
        m.provenance = Provenance{l, r, f, {}};
        out.push_back(std::move(m));
      }
  return out;
}

std::vector<std::string> referenced_columns(const ModelSpec& m) {
  std::vector<std::string> out;
  auto add = [&](const std::string& n) {
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  };
  auto add_expr = [&](auto&& self, const Expr& e) -> void {
    if (e.kind == Expr::Kind::Var) {
      add(e.name);
      return;
    }
    for (const auto& a : e.args) self(self, a);
  };
  auto add_term = [&](const Term& t) {
    if (const auto* e = std::get_if<Expr>(&t)) {
      add_expr(add_expr, *e);
    } else if (const auto* it = std::get_if<ITerm>(&t)) {
      add(it->var);
      if (it->with) add(*it->with);
    } else {
      add_expr(add_expr, std::get<LagTerm>(t).inner);
    }
  };
  add_expr(add_expr, m.lhs);
  for (const auto& t : m.rhs) add_term(t);
  for (const auto& fe : m.fe) {
    for (const auto& f : fe.factors) add(f);
    for (const auto& s : fe.slopes) add(s);
  }
  if (m.iv) {
    for (const auto& e : m.iv->endo) add_expr(add_expr, e);
    for (const auto& t : m.iv->instruments) add_term(t);
  }
  return out;
}

}  // namespace fehd::formula
