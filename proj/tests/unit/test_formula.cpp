#include <doctest.h>

#include "fehd/error.hpp"
#include "fehd/formula.hpp"
#include "support.hpp"

using namespace fehd;
using fehd::testing::make_dataset;

namespace {

std::vector<std::string> names_of(const std::vector<formula::NamedColumn>& cols) {
  std::vector<std::string> out;
  for (const auto& c : cols) out.push_back(c.name);
  return out;
}

}  // namespace

TEST_CASE("printing then parsing reproduces the formula") {
  for (const char* f : {"y ~ x1 + x2", "y ~ 1 | fe1^fe2 + fe3[z]", "log(y) ~ l(x, 1:2) + f(x) + d(x)",
                        "c(y1, y2) ~ sw(x1, x2) | csw0(fe1, fe2)", "y ~ i(t, treat, ref = 5) | id + t",
                        "y ~ x | fe | endo1 + endo2 ~ z1 + z2", "y ~ i(cat, bin = list(\"ab\" = c(\"a\", \"b\")))",
                        "y ~ x | fe[[z]]", "exp(y) ~ mvsw(a, b)"}) {
    CAPTURE(f);
    const auto spec = formula::parse_formula(f);
    CHECK(formula::parse_formula(formula::to_string(spec)) == spec);
  }
}

TEST_CASE("json dump carries every part") {
  const auto j = formula::to_json(formula::parse_formula("y ~ x | fe | e ~ z"));
  CHECK(j.contains("lhs"));
  CHECK(j.contains("rhs"));
  CHECK(j.contains("fe"));
  CHECK(j.contains("iv"));
}

TEST_CASE("stepwise step counts") {
  using formula::StepKind;
  CHECK(formula::step_count(StepKind::Sw, 3) == 3);
  CHECK(formula::step_count(StepKind::Sw0, 3) == 4);
  CHECK(formula::step_count(StepKind::Csw, 3) == 3);
  CHECK(formula::step_count(StepKind::Csw0, 3) == 4);
  CHECK(formula::step_count(StepKind::Mvsw, 3) == 8);
}

TEST_CASE("expansion is the product of the parts, lhs-major") {
  const auto models = testing::models_of("c(a, b) ~ x + sw0(u, v) | csw(f, g)");
  REQUIRE(models.size() == 2 * 3 * 2);
  CHECK(formula::to_string(models[0]) == "a ~ x | f");
  CHECK(formula::to_string(models[1]) == "a ~ x | f + g");
  CHECK(formula::to_string(models[2]) == "a ~ x + u | f");
  CHECK(formula::to_string(models[6]) == "b ~ x | f");
  CHECK(models[7].provenance.lhs_index == 1);
  CHECK(models[7].provenance.fe_step == 1);
  CHECK(models[9].provenance.rhs_step == 1);
}

TEST_CASE("syntax errors carry a byte offset") {
  for (const char* f : {"y ~", "~ x", "y ~ x +", "y ~ x | fe[", "y ~ sw(x", "y ~ x | | z", "y ~ foo(x)"}) {
    CAPTURE(f);
    CHECK_THROWS_AS(formula::parse_formula(f), FormulaError);
  }
  try {
    formula::parse_formula("y ~ x + + z");
    FAIL("expected an error");
  } catch (const FormulaError& e) {
    CHECK(e.offset() >= 6);
    CHECK(e.offset() <= 8);
    CHECK(e.kind() == ErrorKind::Parse);
  }
}

TEST_CASE("stepwise functions are not allowed in the outcome") {
  CHECK_THROWS_AS(formula::parse_formula("sw(y1, y2) ~ x"), Error);
}

TEST_CASE("i() drops the reference and names columns by level") {
  const auto ds = make_dataset({{"t", {1, 2, 3, 1}}, {"d", {1, 0, 1, 1}}});
  formula::ITerm plain;
  plain.var = "t";
  CHECK(names_of(formula::expand_i(plain, ds.column("t"))) == std::vector<std::string>{"t::2", "t::3"});

  formula::ITerm ref = plain;
  ref.ref = {formula::Literal{false, 2.0, ""}};
  const auto cols = formula::expand_i(ref, ds.column("t"));
  CHECK(names_of(cols) == std::vector<std::string>{"t::1", "t::3"});
  CHECK(cols[0].values == std::vector<double>{1, 0, 0, 1});

  formula::ITerm inter = plain;
  inter.with = "d";
  const auto ic = formula::expand_i(inter, ds.column("t"), &ds.column("d"));
  CHECK(names_of(ic) == std::vector<std::string>{"t::1:d", "t::2:d", "t::3:d"});
  CHECK(ic[1].values == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("i() bins levels before removing the reference") {
  const auto ds = make_dataset({{"t", {1, 2, 3, 4}}});
  formula::ITerm b;
  b.var = "t";
  b.bin = {formula::BinGroup{"low", {formula::Literal{false, 1.0, ""}, formula::Literal{false, 2.0, ""}}}};
  const auto cols = formula::expand_i(b, ds.column("t"));
  // Levels low, 3, 4: the lowest ("low") is the reference.
  CHECK(names_of(cols) == std::vector<std::string>{"t::3", "t::4"});
}

TEST_CASE("evaluated expressions propagate missing values") {
  const auto ds = make_dataset({{"x", {1.0, -1.0, std::exp(1.0)}}});
  const auto c = formula::evaluate(ds, formula::parse_formula("log(x) ~ 1").lhs[0]);
  CHECK(c.name == "log(x)");
  CHECK(c.missing == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(c.values[2] == doctest::Approx(1.0));
}

TEST_CASE("referenced columns cover every part") {
  const auto m = testing::models_of("y ~ x + l(w) | f1^f2 + g[z] | e ~ q").front();
  auto cols = formula::referenced_columns(m);
  std::sort(cols.begin(), cols.end());
  CHECK(cols == std::vector<std::string>{"e", "f1", "f2", "g", "q", "w", "x", "y", "z"});
}
