#include <doctest.h>

#include <random>

#include "fehd/demean.hpp"
#include "fehd/error.hpp"
#include "support.hpp"

using namespace fehd;

namespace {

demean::FeDimension dim_of(const std::vector<int>& g, int n_groups) {
  demean::FeDimension d;
  d.group.assign(g.begin(), g.end());
  d.n_groups = static_cast<std::uint32_t>(n_groups);
  return d;
}

// Two-way unbalanced design with a shared random target set.
struct TwoWay {
  std::vector<demean::FeDimension> dims;
  std::vector<std::vector<double>> cols;
  std::vector<double> w;
};

TwoWay random_two_way(std::uint64_t seed, std::size_t n = 300, int g1 = 25, int g2 = 9, std::size_t k = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> a(0, g1 - 1), b(0, g2 - 1);
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> U(0.3, 2.0);
  std::vector<int> ga(n), gb(n);
  for (std::size_t i = 0; i < n; ++i) {
    ga[i] = i < static_cast<std::size_t>(g1) ? static_cast<int>(i) : a(rng);
    gb[i] = i < static_cast<std::size_t>(g2) ? static_cast<int>(i) : b(rng);
  }
  TwoWay t;
  t.dims = {dim_of(ga, g1), dim_of(gb, g2)};
  t.cols.assign(k, std::vector<double>(n));
  for (auto& c : t.cols)
    for (auto& v : c) v = N(rng);
  t.w.resize(n);
  for (auto& v : t.w) v = U(rng);
  return t;
}

}  // namespace

TEST_CASE("one dimension is solved in closed form") {
  const auto d = dim_of({0, 0, 1, 1, 1}, 2);
  const demean::FeStructure fs({d}, {});
  const auto r = demean::demean(fs, std::vector<std::vector<double>>{{1, 3, 2, 4, 9}});
  CHECK(r.residuals[0] == std::vector<double>{-1, 1, -3, -1, 4});
  CHECK(r.info[0].converged);
  CHECK(r.info[0].iterations == 0);
}

TEST_CASE("residuals are weighted-orthogonal to every group indicator") {
  const auto t = random_two_way(1);
  demean::Options o;
  o.tol = 1e-12;
  const demean::FeStructure fs(t.dims, t.w);
  const auto r = demean::demean(fs, t.cols, o);
  for (std::size_t c = 0; c < t.cols.size(); ++c)
    for (const auto& d : t.dims) {
      std::vector<double> s(d.n_groups, 0.0);
      for (std::size_t i = 0; i < d.group.size(); ++i) s[d.group[i]] += t.w[i] * r.residuals[c][i];
      for (double v : s) CHECK(std::fabs(v) < 1e-9);
    }
}

TEST_CASE("demeaning is idempotent") {
  const auto t = random_two_way(2);
  demean::Options o;
  o.tol = 1e-13;
  const demean::FeStructure fs(t.dims, {});
  const auto once = demean::demean(fs, t.cols, o);
  const auto twice = demean::demean(fs, once.residuals, o);
  for (std::size_t c = 0; c < t.cols.size(); ++c)
    CHECK(testing::rel_gap(twice.residuals[c], once.residuals[c]) < 1e-10);
}

TEST_CASE("a column's result does not depend on its batch or on threads") {
  const auto t = random_two_way(3, 400, 40, 12, 6);
  const demean::FeStructure fs(t.dims, t.w);
  demean::Options o1;
  o1.threads = 1;
  demean::Options o4 = o1;
  o4.threads = 4;
  const auto all = demean::demean(fs, t.cols, o1);
  const auto threaded = demean::demean(fs, t.cols, o4);
  for (std::size_t c = 0; c < t.cols.size(); ++c) {
    const auto alone = demean::demean(fs, std::vector<std::vector<double>>{t.cols[c]}, o1);
    CHECK(alone.residuals[0] == all.residuals[c]);
    CHECK(threaded.residuals[c] == all.residuals[c]);
    CHECK(alone.info[0].iterations == all.info[c].iterations);
  }
}

TEST_CASE("accelerated and plain iteration reach the same fixed point") {
  const auto t = random_two_way(4);
  const demean::FeStructure fs(t.dims, {});
  demean::Options plain;
  plain.accelerate = false;
  plain.tol = 1e-12;
  plain.max_iter = 100000;
  demean::Options fast;
  fast.tol = 1e-12;
  const auto a = demean::demean(fs, t.cols, plain);
  const auto b = demean::demean(fs, t.cols, fast);
  for (std::size_t c = 0; c < t.cols.size(); ++c) {
    CHECK(a.info[c].converged);
    CHECK(b.info[c].converged);
    CHECK(testing::rel_gap(b.residuals[c], a.residuals[c]) < 1e-9);
  }
}

TEST_CASE("irons-tuck solves an affine contraction in one step") {
  // F(x) = 3 + 0.5 x, fixed point 6.
  const std::vector<double> x{1.0};
  const std::vector<double> gx{3.0 + 0.5 * x[0]};
  const std::vector<double> ggx{3.0 + 0.5 * gx[0]};
  const auto r = demean::irons_tuck_step(x, gx, ggx);
  CHECK(r[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("irons-tuck falls back to F(F(x)) at a fixed point") {
  const std::vector<double> x{2.0, 2.0};
  const auto r = demean::irons_tuck_step(x, x, x);
  CHECK(r == x);
}

TEST_CASE("iteration cap flags non-convergence") {
  const auto t = random_two_way(5);
  const demean::FeStructure fs(t.dims, {});
  demean::Options o;
  o.max_iter = 1;
  o.tol = 1e-15;
  o.accelerate = false;
  const auto r = demean::demean(fs, t.cols, o);
  CHECK_FALSE(r.info[0].converged);
  CHECK_FALSE(r.all_converged());
}

TEST_CASE("recovered coefficients reproduce the fitted effects") {
  const auto t = random_two_way(6);
  const demean::FeStructure fs(t.dims, t.w);
  demean::Options o;
  o.tol = 1e-13;
  const auto r = demean::demean(fs, t.cols, o, true);
  for (std::size_t c = 0; c < t.cols.size(); ++c) {
    const auto rep = demean::recover_fixef(fs, r.fe_coef[c]);
    const auto raw = demean::fe_fitted(fs, r.fe_coef[c]);
    const auto norm = demean::fe_fitted(fs, rep.coef);
    CHECK(testing::rel_gap(norm, raw) < 1e-12);
    CHECK(rep.coef[1][0] == 0.0);
    for (std::size_t i = 0; i < raw.size(); ++i)
      CHECK(t.cols[c][i] - raw[i] == doctest::Approx(r.residuals[c][i]).epsilon(1e-9));
  }
}

TEST_CASE("a varying slope absorbs a group-specific trend") {
  // y = a_g + b_g z exactly: residuals vanish.
  std::vector<int> g{0, 0, 0, 1, 1, 1};
  auto d = dim_of(g, 2);
  const std::vector<double> z{1, 2, 3, 1, 4, 9};
  d.slopes = {z};
  std::vector<double> y(6);
  for (std::size_t i = 0; i < 6; ++i) y[i] = (g[i] ? -1.0 : 2.0) + (g[i] ? 0.5 : 3.0) * z[i];
  const demean::FeStructure fs({d}, {});
  CHECK(fs.n_parameters() == 4);
  const auto r = demean::demean(fs, std::vector<std::vector<double>>{y});
  for (double v : r.residuals[0]) CHECK(std::fabs(v) < 1e-12);
}

TEST_CASE("degenerate slope groups drop their slope coefficient") {
  // Group 1 has a constant slope variable: only its intercept is identified.
  auto d = dim_of({0, 0, 1, 1}, 2);
  d.slopes = {{1, 2, 5, 5}};
  const demean::FeStructure fs({d}, {});
  CHECK(fs.n_dropped(0) == 1);
  CHECK(fs.coef_dropped(0, 1, 1));
  CHECK_FALSE(fs.coef_dropped(0, 0, 1));
  CHECK(fs.n_parameters() == 3);
}

TEST_CASE("structure validation") {
  const auto d = dim_of({0, 1}, 2);
  CHECK_THROWS_AS(demean::FeStructure({d}, {1.0, 0.0}), Error);
  CHECK_THROWS_AS(demean::FeStructure({d}, {1.0}), Error);
  const demean::FeStructure fs({d}, {});
  demean::Options bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(demean::demean(fs, std::vector<std::vector<double>>{{1, 2}}, bad), Error);
  CHECK_THROWS_AS(demean::demean(fs, std::vector<std::vector<double>>{{1, 2, 3}}), Error);
}

TEST_CASE("thread count resolution") {
  CHECK(demean::resolve_threads(3) == 3);
  CHECK(demean::resolve_threads(0) >= 1);
}
