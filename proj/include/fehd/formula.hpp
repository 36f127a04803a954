#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fehd/data.hpp"

// Multi-part regression formulas:
//
//   lhs ~ rhs | fixed_effects | endo ~ instruments
//
// The fixed-effect and IV parts are optional; the IV part is always last.
namespace fehd::formula {

using data::ShiftOp;

// Numeric value expression: a column, log/exp of an expression, or a single
// panel shift of an expression.
struct Expr {
  enum class Kind { Var, Log, Exp, Shift };
  Kind kind = Kind::Var;
  std::string name;        // Var only
  std::vector<Expr> args;  // exactly one child otherwise
  ShiftOp op = ShiftOp::Lag;
  int offset = 1;
  bool explicit_offset = false;

  static Expr var(std::string n) { return Expr{Kind::Var, std::move(n), {}, ShiftOp::Lag, 1, false}; }
  bool operator==(const Expr&) const = default;
};

// Literal used in i()'s ref= and bin= arguments.
struct Literal {
  bool is_string = false;
  double number = 0.0;
  std::string text;
  bool operator==(const Literal&) const = default;
};

struct BinGroup {
  std::string label;
  std::vector<Literal> members;
  bool operator==(const BinGroup&) const = default;
};

// i(var [, with] [, ref = ...] [, bin = list(...)])
struct ITerm {
  std::string var;
  std::optional<std::string> with;  // interacting variable
  bool with_categorical = false;    // written `i.name`
  std::vector<Literal> ref;
  std::vector<BinGroup> bin;
  bool operator==(const ITerm&) const = default;
};

// l/f/d(expr, offsets): one column per offset.
struct LagTerm {
  ShiftOp op = ShiftOp::Lag;
  Expr inner;
  std::vector<int> offsets;
  bool explicit_offsets = false;
  bool operator==(const LagTerm&) const = default;
};

using Term = std::variant<Expr, ITerm, LagTerm>;

struct FeTerm {
  std::vector<std::string> factors;  // combined with ^
  std::vector<std::string> slopes;   // varying-slope variables
  bool intercept = true;             // false for fe[[x]]
  bool operator==(const FeTerm&) const = default;
};

enum class StepKind { Sw, Sw0, Csw, Csw0, Mvsw };

template <class T>
struct Stepwise {
  StepKind kind = StepKind::Sw;
  std::vector<std::vector<T>> args;
  bool operator==(const Stepwise&) const = default;
};

template <class T>
using Item = std::variant<T, Stepwise<T>>;

struct IvPart {
  std::vector<Expr> endo;
  std::vector<Term> instruments;
  bool operator==(const IvPart&) const = default;
};

struct FormulaSpec {
  std::vector<Expr> lhs;
  bool lhs_multi = false;         // written c(...)
  std::vector<Item<Term>> rhs;    // empty: intercept only
  std::optional<std::vector<Item<FeTerm>>> fe;
  std::optional<IvPart> iv;
  bool operator==(const FormulaSpec&) const = default;
};

struct Provenance {
  std::size_t lhs_index = 0;
  std::size_t rhs_step = 0;
  std::size_t fe_step = 0;
  std::string sample_label;  // empty unless split
  bool operator==(const Provenance&) const = default;
};

struct ModelSpec {
  Expr lhs;
  std::vector<Term> rhs;
  std::vector<FeTerm> fe;
  std::optional<IvPart> iv;
  Provenance provenance;
  bool operator==(const ModelSpec&) const = default;
};

FormulaSpec parse_formula(std::string_view text);

// Cartesian expansion: lhs-major, then rhs step, then fe step.
std::vector<ModelSpec> expand_models(const FormulaSpec& spec);

// Number of steps a part expands to (1 when stepwise-free).
std::size_t step_count(StepKind kind, std::size_t n_args);

std::string to_string(const Expr& e);
std::string to_string(const Term& t);
std::string to_string(const FeTerm& fe);
std::string to_string(const FormulaSpec& spec);
std::string to_string(const ModelSpec& m);

nlohmann::json to_json(const FormulaSpec& spec);
nlohmann::json to_json(const ModelSpec& m);

// ---------------------------------------------------------------------------
// Column production

struct NamedColumn {
  std::string name;
  std::vector<double> values;
  std::vector<std::uint8_t> missing;
};

// Expands i() into indicator columns named `var::level`, `var::level:with`
// (numeric interaction) or `var::level:with::level2` (categorical interaction).
// Bins are applied before the reference levels are removed. Without an explicit
// ref, the lowest level is the reference for plain i(var) and the lowest level
// of the interacting factor for i(var, i.with); i(var, numeric) keeps all
// levels.
std::vector<NamedColumn> expand_i(const ITerm& term, const data::Column& column,
                                  const data::Column* interacting = nullptr);

// Evaluates expressions and terms on every row of the dataset.
NamedColumn evaluate(const data::Dataset& ds, const Expr& e);
std::vector<NamedColumn> evaluate(const data::Dataset& ds, const Term& t);

// Names of every dataset column a model reads.
std::vector<std::string> referenced_columns(const ModelSpec& m);

}  // namespace fehd::formula
