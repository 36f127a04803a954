#include <doctest.h>

#include <random>

#include "fehd/error.hpp"
#include "fehd/inference.hpp"
#include "support.hpp"

using namespace fehd;
using fehd::testing::fit_formula;
using fehd::testing::make_dataset;

namespace {

data::Dataset random_panel(std::uint64_t seed, std::size_t units = 30, std::size_t periods = 8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  std::vector<double> id, t, x, y;
  for (std::size_t u = 0; u < units; ++u) {
    const double a = N(rng);
    for (std::size_t p = 0; p < periods; ++p) {
      id.push_back(static_cast<double>(u + 1));
      t.push_back(static_cast<double>(p + 1));
      const double xv = N(rng) + a;
      x.push_back(xv);
      y.push_back(0.5 * xv + a + N(rng));
    }
  }
  auto ds = make_dataset({{"id", id}, {"t", t}, {"x", x}, {"y", y}});
  ds.set_panel("id", "t");
  return ds;
}

double stat_of(const est::FitResult& f, const inf::VcovMatrix& v, const std::string& name) {
  return inf::fit_stats(f, v, {name}).front().second.value;
}

}  // namespace

TEST_CASE("vcov specs print and parse back") {
  for (const char* s : {"iid", "hc1", "cluster", "cluster=id", "cluster=a^b", "twoway=a,b", "nw=id,t,2", "dk=t",
                        "dk=t,3", "nw=id,t"}) {
    CAPTURE(s);
    const auto spec = inf::parse_vcov(s);
    CHECK(inf::parse_vcov(inf::to_string(spec)) == spec);
  }
  CHECK(inf::parse_vcov("nw=id,t,2").lag == std::size_t{2});
  for (const char* bad : {"robust2", "twoway=a", "nw=id", "dk=t,-1", "cluster=a,b,c"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(inf::parse_vcov(bad), Error);
  }
}

TEST_CASE("default lags") {
  using inf::VcovKind;
  CHECK(inf::default_lag(VcovKind::DriscollKraay, 16) == 2);
  CHECK(inf::default_lag(VcovKind::DriscollKraay, 10) == 1);
  CHECK(inf::default_lag(VcovKind::NeweyWest, 8) == 1);
  CHECK(inf::default_lag(VcovKind::NeweyWest, 64) == 3);
}

TEST_CASE("clustering on singletons reproduces hc1") {
  auto ds = random_panel(1);
  std::vector<double> row(ds.n_rows());
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<double>(i);
  ds.add_column("row", testing::numeric(row));
  const auto f = fit_formula(ds, "y ~ x");
  const auto hc = inf::compute_vcov(f, inf::parse_vcov("hc1"), ds);
  const auto cl = inf::compute_vcov(f, inf::parse_vcov("cluster=row"), ds);
  CHECK(testing::rel_gap(cl.matrix, hc.matrix) < 1e-12);
}

TEST_CASE("iid variance is sigma^2 (X'X)^-1") {
  const auto ds = random_panel(2);
  const auto f = fit_formula(ds, "y ~ x");
  const std::size_t n = ds.n_rows();
  Eigen::MatrixXd X(n, 2);
  for (std::size_t i = 0; i < n; ++i) X.row(static_cast<Eigen::Index>(i)) << 1.0, ds.numeric("x").values[i];
  const double s2 = f.ssr / static_cast<double>(n - 2);
  const Eigen::MatrixXd want = s2 * (X.transpose() * X).inverse();
  CHECK(testing::rel_gap(inf::compute_vcov(f, inf::parse_vcov("iid"), ds).matrix, want) < 1e-10);
}

TEST_CASE("variances are symmetric and positive on the diagonal") {
  const auto ds = random_panel(3);
  const auto f = fit_formula(ds, "y ~ x | id + t");
  for (const char* s : {"iid", "hc1", "cluster", "cluster=t", "twoway=id,t", "nw=id,t", "dk=t"}) {
    CAPTURE(s);
    const auto v = inf::compute_vcov(f, inf::parse_vcov(s), ds);
    CHECK(v.matrix.rows() == 1);
    CHECK(v.matrix(0, 0) > 0.0);
    CHECK(testing::rel_gap(v.matrix, Eigen::MatrixXd(v.matrix.transpose())) == 0.0);
  }
}

TEST_CASE("bare cluster uses the first fixed effect") {
  const auto ds = random_panel(4);
  const auto f = fit_formula(ds, "y ~ x | id + t");
  const auto a = inf::compute_vcov(f, inf::parse_vcov("cluster"), ds);
  const auto b = inf::compute_vcov(f, inf::parse_vcov("cluster=id"), ds);
  CHECK(a.matrix == b.matrix);
  CHECK(a.n_clusters == std::vector<std::size_t>{30});
}

TEST_CASE("cluster variables must exist") {
  const auto ds = random_panel(5);
  const auto f = fit_formula(ds, "y ~ x");
  CHECK_THROWS_AS(inf::compute_vcov(f, inf::parse_vcov("cluster=nope"), ds), Error);
}

TEST_CASE("ssc none drops the small-sample factors") {
  const auto ds = random_panel(6);
  const auto f = fit_formula(ds, "y ~ x");
  const auto d = inf::compute_vcov(f, inf::parse_vcov("hc1"), ds, inf::Ssc::Default);
  const auto z = inf::compute_vcov(f, inf::parse_vcov("hc1"), ds, inf::Ssc::None);
  const double n = static_cast<double>(ds.n_rows());
  CHECK(d.matrix(1, 1) / z.matrix(1, 1) == doctest::Approx(n / (n - 2.0)).epsilon(1e-12));
}

TEST_CASE("wald on one coefficient is the squared t statistic") {
  const auto ds = random_panel(7);
  const auto f = fit_formula(ds, "y ~ x");
  const auto v = inf::compute_vcov(f, inf::parse_vcov("hc1"), ds);
  const auto rows = inf::coef_table(f, v);
  CHECK(stat_of(f, v, "wald") == doctest::Approx(rows[1].stat * rows[1].stat).epsilon(1e-12));
}

TEST_CASE("coefficient table statistics") {
  const auto ds = random_panel(8);
  const auto f = fit_formula(ds, "y ~ x");
  const auto v = inf::compute_vcov(f, inf::parse_vcov("iid"), ds);
  const auto rows = inf::coef_table(f, v);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.se == doctest::Approx(std::sqrt(v.matrix(&r - rows.data(), &r - rows.data()))));
    CHECK(r.stat == doctest::Approx(r.estimate / r.se));
    CHECK(r.p >= 0.0);
    CHECK(r.p <= 1.0);
  }
  CHECK(inf::uses_t(f));
}

TEST_CASE("fit statistics") {
  const auto ds = random_panel(9);
  const auto fe_only = fit_formula(ds, "y ~ 1 | id");
  const auto v0 = inf::compute_vcov(fe_only, inf::parse_vcov("iid"), ds);
  CHECK(stat_of(fe_only, v0, "wr2") == doctest::Approx(0.0));

  const auto f = fit_formula(ds, "y ~ x | id");
  const auto v = inf::compute_vcov(f, inf::parse_vcov("iid"), ds);
  const double r2 = stat_of(f, v, "r2");
  const double wr2 = stat_of(f, v, "wr2");
  CHECK(r2 > 0.0);
  CHECK(r2 < 1.0);
  CHECK(wr2 < r2);
  CHECK(stat_of(f, v, "n") == static_cast<double>(ds.n_rows()));
  CHECK(stat_of(f, v, "rmse") == doctest::Approx(std::sqrt(f.ssr / static_cast<double>(ds.n_rows()))));
  const auto plain = fit_formula(ds, "y ~ x");
  CHECK(std::isnan(stat_of(plain, inf::compute_vcov(plain, inf::parse_vcov("iid"), ds), "wr2")));
  CHECK(inf::is_fit_stat("sq.cor"));
  CHECK_FALSE(inf::is_fit_stat("r3"));
}

TEST_CASE("quantiles") {
  CHECK(inf::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(inf::t_quantile(0.975, 10) == doctest::Approx(2.228138851986274).epsilon(1e-12));
}
