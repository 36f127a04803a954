#include <doctest.h>

#include <random>

#include "fehd/error.hpp"
#include "fehd/multiest.hpp"
#include "support.hpp"

using namespace fehd;
using fehd::testing::fit_formula;
using fehd::testing::make_dataset;

namespace {

data::Dataset data_with_gaps() {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> N;
  std::vector<double> g, s, x, z, y1, y2;
  for (int i = 0; i < 200; ++i) {
    g.push_back(i % 9);
    s.push_back(i % 3);
    x.push_back(N(rng));
    z.push_back(N(rng));
    y1.push_back(x.back() + g.back() + N(rng));
    y2.push_back(z.back() - x.back() + N(rng));
  }
  auto ds = make_dataset({{"g", g}, {"s", s}, {"x", x}, {"z", z}, {"y1", y1}, {"y2", y2}});
  // Missing outcome values give the two models different samples.
  auto& y2c = const_cast<data::NumericColumn&>(ds.numeric("y2"));
  for (int i = 0; i < 200; i += 17) y2c.missing[i] = 1;
  return ds;
}

multi::MultiResult run(const data::Dataset& ds, const std::string& f, multi::MultiOptions o = {}) {
  return multi::run_multi(formula::parse_formula(f), ds, o);
}

}  // namespace

TEST_CASE("pooled results equal separate fits bit for bit") {
  const auto ds = data_with_gaps();
  const auto r = run(ds, "c(y1, y2) ~ x + csw0(z) | g");
  REQUIRE(r.entries.size() == 4);
  for (const auto& e : r.entries) {
    REQUIRE(e.fit);
    const auto alone = est::fit(ds, e.model, {});
    CHECK(e.fit->coef == alone.coef);
    CHECK(e.fit->residuals == alone.residuals);
  }
}

TEST_CASE("pooling only groups models sharing a sample") {
  const auto ds = data_with_gaps();
  const auto r = run(ds, "c(y1, y2) ~ x + csw0(z) | g");
  // y1 models share one mask, y2 models another.
  REQUIRE(r.batches.size() == 2);
  CHECK(r.batches[0].entries == std::vector<std::size_t>{0, 1});
  CHECK(r.batches[1].entries == std::vector<std::size_t>{2, 3});
  multi::MultiOptions off;
  off.pool = false;
  CHECK(run(ds, "c(y1, y2) ~ x | g", off).batches.empty());
}

TEST_CASE("glm models are never pooled") {
  auto ds = data_with_gaps();
  std::vector<double> cnt(200);
  for (std::size_t i = 0; i < cnt.size(); ++i) cnt[i] = static_cast<double>(i % 4);
  ds.add_column("cnt", testing::numeric(cnt));
  multi::MultiOptions o;
  o.fit.family = est::Family::Poisson;
  const auto r = run(ds, "cnt ~ sw(x, z) | g", o);
  CHECK(r.batches.empty());
  CHECK(r.n_failed() == 0);
}

TEST_CASE("split estimates each level, fsplit adds the full sample first") {
  const auto ds = data_with_gaps();
  multi::MultiOptions o;
  o.split = "s";
  const auto r = run(ds, "y1 ~ x | g", o);
  REQUIRE(r.entries.size() == 3);
  CHECK(r.entries[0].model.provenance.sample_label == "0");
  CHECK(r.entries[2].model.provenance.sample_label == "2");
  CHECK(r.entries[1].fit->dof.n == 67);
  o.fsplit = true;
  const auto f = run(ds, "y1 ~ x | g", o);
  REQUIRE(f.entries.size() == 4);
  CHECK(f.entries[0].model.provenance.sample_label == multi::kFullSampleLabel);
  CHECK(f.entries[0].fit->dof.n == 200);
}

TEST_CASE("a failing model is recorded while the others run") {
  const auto ds = data_with_gaps();
  const auto r = run(ds, "c(y1, nope) ~ x | g");
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0].fit);
  CHECK_FALSE(r.entries[1].fit);
  CHECK(r.entries[1].error.find("nope") != std::string::npos);
  CHECK(r.entries[1].error_kind == ErrorKind::Data);
  CHECK(r.n_failed() == 1);
}

TEST_CASE("when every model fails the error is thrown") {
  const auto ds = data_with_gaps();
  CHECK_THROWS_AS(run(ds, "c(nope1, nope2) ~ x"), Error);
  try {
    run(ds, "nope ~ x");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}
