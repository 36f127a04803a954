#include <charconv>
#include <string>

#include "fehd/formula.hpp"

namespace fehd::formula {
namespace {

std::string shift_name(ShiftOp op) {
  switch (op) {
    case ShiftOp::Lag: return "l";
    case ShiftOp::Lead: return "f";
    case ShiftOp::Diff: return "d";
  }
  return "l";
}

std::string number_text(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string literal_text(const Literal& l) {
  return l.is_string ? quoted(l.text) : number_text(l.number);
}

template <class T, class F>
std::string join(const std::vector<T>& xs, const std::string& sep, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += f(xs[i]);
  }
  return out;
}

std::string literal_set(const std::vector<Literal>& ls) {
  if (ls.size() == 1) return literal_text(ls[0]);
  return "c(" + join(ls, ", ", literal_text) + ")";
}

std::string offsets_text(const std::vector<int>& o) {
  if (o.size() == 1) return std::to_string(o[0]);
  bool contiguous = true;
  for (std::size_t i = 1; i < o.size(); ++i) contiguous = contiguous && o[i] == o[i - 1] + 1;
  if (contiguous) return std::to_string(o.front()) + ":" + std::to_string(o.back());
  return "c(" + join(o, ", ", [](int v) { return std::to_string(v); }) + ")";
}

std::string step_name(StepKind k) {
  switch (k) {
    case StepKind::Sw: return "sw";
    case StepKind::Sw0: return "sw0";
    case StepKind::Csw: return "csw";
    case StepKind::Csw0: return "csw0";
    case StepKind::Mvsw: return "mvsw";
  }
  return "sw";
}

template <class T>
std::string item_text(const Item<T>& it) {
  if (const auto* t = std::get_if<T>(&it)) return to_string(*t);
  const auto& sw = std::get<Stepwise<T>>(it);
  return step_name(sw.kind) + "(" +
         join(sw.args, ", ",
              [](const std::vector<T>& arg) {
                return join(arg, " + ", [](const T& t) { return to_string(t); });
              }) +
         ")";
}

std::string rhs_text(const std::string& joined) { return joined.empty() ? "1" : joined; }

std::string iv_text(const IvPart& iv) {
  return join(iv.endo, " + ", [](const Expr& e) { return to_string(e); }) + " ~ " +
         join(iv.instruments, " + ", [](const Term& t) { return to_string(t); });
}

nlohmann::json expr_json(const Expr& e);

nlohmann::json literal_json(const Literal& l) {
  if (l.is_string) return l.text;
  return l.number;
}

nlohmann::json term_json(const Term& t) {
  using nlohmann::json;
  if (const auto* e = std::get_if<Expr>(&t)) return expr_json(*e);
  if (const auto* it = std::get_if<ITerm>(&t)) {
    json j = {{"type", "i"}, {"var", it->var}};
    if (it->with) {
      j["with"] = *it->with;
      j["with_categorical"] = it->with_categorical;
    }
    json ref = json::array();
    for (const auto& l : it->ref) ref.push_back(literal_json(l));
    j["ref"] = ref;
    json bin = json::array();
    for (const auto& g : it->bin) {
      json m = json::array();
      for (const auto& l : g.members) m.push_back(literal_json(l));
      bin.push_back({{"label", g.label}, {"members", m}});
    }
    j["bin"] = bin;
    return j;
  }
  const auto& lt = std::get<LagTerm>(t);
  return {{"type", shift_name(lt.op)}, {"expr", expr_json(lt.inner)}, {"offsets", lt.offsets}};
}

nlohmann::json expr_json(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Var: return {{"type", "var"}, {"name", e.name}};
    case Expr::Kind::Log: return {{"type", "log"}, {"expr", expr_json(e.args[0])}};
    case Expr::Kind::Exp: return {{"type", "exp"}, {"expr", expr_json(e.args[0])}};
    case Expr::Kind::Shift:
      return {{"type", shift_name(e.op)}, {"expr", expr_json(e.args[0])}, {"offsets", {e.offset}}};
  }
  return {};
}

nlohmann::json fe_json(const FeTerm& fe) {
  return {{"factors", fe.factors}, {"slopes", fe.slopes}, {"intercept", fe.intercept}};
}

template <class T, class F>
nlohmann::json item_json(const Item<T>& it, F&& f) {
  if (const auto* t = std::get_if<T>(&it)) return f(*t);
  const auto& sw = std::get<Stepwise<T>>(it);
  nlohmann::json args = nlohmann::json::array();
  for (const auto& arg : sw.args) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : arg) a.push_back(f(t));
    args.push_back(a);
  }
  return {{"type", "stepwise"}, {"kind", step_name(sw.kind)}, {"args", args}};
}

nlohmann::json iv_json(const IvPart& iv) {
  nlohmann::json endo = nlohmann::json::array();
  for (const auto& e : iv.endo) endo.push_back(expr_json(e));
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& t : iv.instruments) inst.push_back(term_json(t));
  return {{"endo", endo}, {"instruments", inst}};
}

}  // namespace

std::string to_string(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Var: return e.name;
    case Expr::Kind::Log: return "log(" + to_string(e.args[0]) + ")";
    case Expr::Kind::Exp: return "exp(" + to_string(e.args[0]) + ")";
    case Expr::Kind::Shift: {
      std::string s = shift_name(e.op) + "(" + to_string(e.args[0]);
      if (e.explicit_offset) s += ", " + std::to_string(e.offset);
      return s + ")";
    }
  }
  return {};
}

std::string to_string(const Term& t) {
  if (const auto* e = std::get_if<Expr>(&t)) return to_string(*e);
  if (const auto* it = std::get_if<ITerm>(&t)) {
    std::string s = "i(" + it->var;
    if (it->with) s += ", " + std::string(it->with_categorical ? "i." : "") + *it->with;
    if (!it->ref.empty()) s += ", ref = " + literal_set(it->ref);
    if (!it->bin.empty()) {
      s += ", bin = list(" +
           join(it->bin, ", ",
                [](const BinGroup& g) { return quoted(g.label) + " = " + literal_set(g.members); }) +
           ")";
    }
    return s + ")";
  }
  const auto& lt = std::get<LagTerm>(t);
  std::string s = shift_name(lt.op) + "(" + to_string(lt.inner);
  if (lt.explicit_offsets) s += ", " + offsets_text(lt.offsets);
  return s + ")";
}

std::string to_string(const FeTerm& fe) {
  std::string s = join(fe.factors, "^", [](const std::string& x) { return x; });
  if (!fe.slopes.empty()) {
    const std::string inner = join(fe.slopes, ", ", [](const std::string& x) { return x; });
    s += fe.intercept ? "[" + inner + "]" : "[[" + inner + "]]";
  }
  return s;
}

std::string to_string(const FormulaSpec& spec) {
  std::string s;
  const std::string lhs = join(spec.lhs, ", ", [](const Expr& e) { return to_string(e); });
  s = spec.lhs_multi ? "c(" + lhs + ")" : lhs;
  s += " ~ " + rhs_text(join(spec.rhs, " + ", item_text<Term>));
  if (spec.fe) s += " | " + join(*spec.fe, " + ", item_text<FeTerm>);
  if (spec.iv) s += " | " + iv_text(*spec.iv);
  return s;
}

std::string to_string(const ModelSpec& m) {
  std::string s = to_string(m.lhs) + " ~ " +
                  rhs_text(join(m.rhs, " + ", [](const Term& t) { return to_string(t); }));
  if (!m.fe.empty()) s += " | " + join(m.fe, " + ", [](const FeTerm& f) { return to_string(f); });
  if (m.iv) s += " | " + iv_text(*m.iv);
  return s;
}

nlohmann::json to_json(const FormulaSpec& spec) {
  using nlohmann::json;
  json lhs = json::array();
  for (const auto& e : spec.lhs) lhs.push_back(expr_json(e));
  json rhs = json::array();
  for (const auto& it : spec.rhs) rhs.push_back(item_json<Term>(it, term_json));
  json j = {{"lhs", lhs}, {"lhs_multi", spec.lhs_multi}, {"rhs", rhs}};
  if (spec.fe) {
    json fe = json::array();
    for (const auto& it : *spec.fe) fe.push_back(item_json<FeTerm>(it, fe_json));
    j["fe"] = fe;
  } else {
    j["fe"] = nullptr;
  }
  j["iv"] = spec.iv ? iv_json(*spec.iv) : json(nullptr);
  j["formula"] = to_string(spec);
  return j;
}

nlohmann::json to_json(const ModelSpec& m) {
  using nlohmann::json;
  json rhs = json::array();
  for (const auto& t : m.rhs) rhs.push_back(term_json(t));
  json fe = json::array();
  for (const auto& f : m.fe) fe.push_back(fe_json(f));
  return {{"formula", to_string(m)},
          {"lhs", expr_json(m.lhs)},
          {"rhs", rhs},
          {"fe", fe},
          {"iv", m.iv ? iv_json(*m.iv) : json(nullptr)},
          {"provenance",
           {{"lhs_index", m.provenance.lhs_index},
            {"rhs_step", m.provenance.rhs_step},
            {"fe_step", m.provenance.fe_step},
            {"sample", m.provenance.sample_label}}}};
}

}  // namespace fehd::formula
