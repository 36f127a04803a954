#include <doctest.h>

#include <random>

#include "fehd/error.hpp"
#include "fehd/estimators.hpp"
#include "support.hpp"

using namespace fehd;
using fehd::testing::fit_formula;
using fehd::testing::make_dataset;

TEST_CASE("ols without fixed effects matches the normal equations") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N;
  const std::size_t n = 60;
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = N(rng);
    y[i] = 1.0 + 2.0 * x[i] + N(rng);
  }
  const auto f = fit_formula(make_dataset({{"x", x}, {"y", y}}), "y ~ x");
  Eigen::MatrixXd X(n, 2);
  for (std::size_t i = 0; i < n; ++i) X.row(static_cast<Eigen::Index>(i)) << 1.0, x[i];
  const Eigen::VectorXd b = (X.transpose() * X).ldlt().solve(X.transpose() * testing::to_eigen(y));
  CHECK(f.coef_names == std::vector<std::string>{"(Intercept)", "x"});
  CHECK(testing::rel_gap(f.coef, b) < 1e-12);
  CHECK(f.dof.df_resid == n - 2);
  CHECK(f.has_intercept);
}

TEST_CASE("perfectly collinear regressors are dropped in order") {
  const auto ds = make_dataset({{"y", {1, 3, 2, 5, 4}}, {"a", {1, 2, 3, 4, 5}}, {"b", {2, 4, 6, 8, 10}}});
  const auto f = fit_formula(ds, "y ~ a + b");
  CHECK(f.coef_names == std::vector<std::string>{"(Intercept)", "a"});
  CHECK(f.dropped_collinear == std::vector<std::string>{"b"});
}

TEST_CASE("a regressor constant within groups is absorbed") {
  const auto ds = make_dataset({{"y", {1, 2, 3, 5, 4, 7}}, {"g", {1, 1, 2, 2, 3, 3}}, {"c", {4, 4, 9, 9, 1, 1}},
                                {"x", {0.5, 1, 3, 2, 8, 1}}});
  const auto f = fit_formula(ds, "y ~ x + c | g");
  CHECK(f.coef_names == std::vector<std::string>{"x"});
  CHECK(f.dropped_collinear == std::vector<std::string>{"c"});
}

TEST_CASE("listwise deletion records its reasons") {
  auto ds = make_dataset({{"y", {1, 2, 3, 4, 5, 6}}, {"x", {1, 0, 2, 1, 3, 5}}});
  auto& y = const_cast<data::NumericColumn&>(ds.numeric("y"));
  y.missing[0] = 1;
  auto& x = const_cast<data::NumericColumn&>(ds.numeric("x"));
  x.missing[0] = 1;
  x.missing[3] = 1;
  const auto f = fit_formula(ds, "y ~ x");
  CHECK(f.dof.n == 4);
  CHECK(f.removed.at("NA-LHS") == 1);
  CHECK(f.removed.at("NA-RHS") == 1);
  CHECK(f.rows == std::vector<std::size_t>{1, 2, 4, 5});
}

TEST_CASE("fixed-effect-only ols has zero within R2 material") {
  const auto ds = make_dataset({{"y", {1, 2, 3, 5, 4, 7}}, {"g", {1, 1, 2, 2, 3, 3}}});
  const auto f = fit_formula(ds, "y ~ 1 | g");
  CHECK(f.coef.size() == 0);
  CHECK(f.ssr == doctest::Approx(f.tss_within));
  CHECK(f.dof.k_fe == 3);
  CHECK(f.dof.df_resid == 3);
}

TEST_CASE("poisson drops all-zero groups and matches group means") {
  const auto ds = make_dataset({{"y", {0, 0, 1, 3, 2, 6}}, {"g", {1, 1, 2, 2, 3, 3}}});
  est::FitOptions o;
  o.family = est::Family::Poisson;
  o.glm_tol = 1e-12;
  const auto f = fit_formula(ds, "y ~ 1 | g", o);
  CHECK(f.dof.n == 4);
  CHECK(f.removed.at("FE-constant-outcome") == 2);
  CHECK(f.fitted[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(f.fitted[2] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(f.converged);
}

TEST_CASE("poisson rejects negative outcomes, logit non-binary ones") {
  const auto ds = make_dataset({{"y", {0, -1, 2}}, {"x", {1, 2, 3}}});
  est::FitOptions p;
  p.family = est::Family::Poisson;
  CHECK_THROWS_AS(fit_formula(ds, "y ~ x", p), Error);
  est::FitOptions l;
  l.family = est::Family::Logit;
  CHECK_THROWS_AS(fit_formula(ds, "y ~ x", l), Error);
}

TEST_CASE("logit recovers the direction of a clear effect") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> U;
  const std::size_t n = 2000;
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = N(rng);
    y[i] = U(rng) < 1.0 / (1.0 + std::exp(-(0.3 + 1.2 * x[i]))) ? 1.0 : 0.0;
  }
  est::FitOptions o;
  o.family = est::Family::Logit;
  const auto f = fit_formula(make_dataset({{"x", x}, {"y", y}}), "y ~ x", o);
  CHECK(f.coef(1) == doctest::Approx(1.2).epsilon(0.15));
  CHECK(f.converged);
}

TEST_CASE("gaussian glm equals ols") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> N;
  std::vector<double> x(80), y(80), g(80);
  for (std::size_t i = 0; i < 80; ++i) {
    x[i] = N(rng);
    g[i] = static_cast<double>(i % 7);
    y[i] = x[i] + g[i] + N(rng);
  }
  const auto ds = make_dataset({{"x", x}, {"y", y}, {"g", g}});
  est::FitOptions o;
  o.family = est::Family::Gaussian;
  o.demean.tol = 1e-12;
  est::FitOptions ols;
  ols.demean.tol = 1e-12;
  const auto a = fit_formula(ds, "y ~ x | g", o);
  const auto b = fit_formula(ds, "y ~ x | g", ols);
  CHECK(testing::rel_gap(a.coef, b.coef) < 1e-8);
}

TEST_CASE("not enough observations is an estimation error") {
  const auto ds = make_dataset({{"y", {1, 2}}, {"x", {3, 1}}});
  try {
    fit_formula(ds, "y ~ x");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Estimation);
  }
}

TEST_CASE("weights enter as frequency weights") {
  // Duplicating a row equals giving it weight 2.
  const auto w = make_dataset({{"y", {1, 3, 2, 7}}, {"x", {0, 1, 2, 3}}, {"w", {1, 2, 1, 1}}});
  const auto d = make_dataset({{"y", {1, 3, 3, 2, 7}}, {"x", {0, 1, 1, 2, 3}}});
  est::FitOptions o;
  o.weights = "w";
  const auto a = fit_formula(w, "y ~ x", o);
  const auto b = fit_formula(d, "y ~ x");
  CHECK(testing::rel_gap(a.coef, b.coef) < 1e-12);
  CHECK(a.ssr == doctest::Approx(b.ssr));
}

TEST_CASE("fixed effects recovered on request") {
  const auto ds = make_dataset({{"y", {1, 2, 3, 5, 4, 7}}, {"g", {1, 1, 2, 2, 3, 3}}, {"x", {0.5, 1, 3, 2, 8, 1}}});
  est::FitOptions o;
  o.keep_fixef = true;
  o.demean.tol = 1e-12;
  const auto f = fit_formula(ds, "y ~ x | g", o);
  REQUIRE(f.fixef);
  const auto& fe = f.fixef->report.coef[0];
  CHECK(fe.size() == 3);
  CHECK(f.fixef->group_labels[0] == std::vector<std::string>{"1", "2", "3"});
  for (std::size_t i = 0; i < 6; ++i) {
    const double fit = f.coef(0) * ds.numeric("x").values[i] + fe[i / 2];
    CHECK(fit == doctest::Approx(f.fitted[i]).epsilon(1e-9));
  }
}
