#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "fehd/data.hpp"
#include "fehd/error.hpp"
#include "support.hpp"

using namespace fehd;
using fehd::testing::make_dataset;

namespace {

data::Dataset csv(const std::string& text) {
  std::istringstream in(text);
  return data::read_csv(in);
}

data::SampleMask all_rows(std::size_t n) {
  data::SampleMask m;
  m.keep.assign(n, 1);
  return m;
}

}  // namespace

TEST_CASE("csv typing and missing values") {
  const auto ds = csv("a,b,c\n1,x,\n2.5,\"y, z\",NA\n-3,x,4\n");
  CHECK(ds.n_rows() == 3);
  CHECK(data::is_numeric(ds.column("a")));
  CHECK_FALSE(data::is_numeric(ds.column("b")));
  CHECK(data::is_numeric(ds.column("c")));
  CHECK(ds.numeric("a").values[1] == 2.5);
  CHECK(data::cell_label(ds.column("b"), 1) == "y, z");
  CHECK(data::is_missing(ds.column("c"), 0));
  CHECK(data::is_missing(ds.column("c"), 1));
  CHECK(ds.numeric("c").values[2] == 4.0);
}

TEST_CASE("csv write then read is lossless") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N;
  std::vector<double> v(50);
  for (auto& x : v) x = N(rng) * 1e3;
  auto ds = make_dataset({{"v", v}});
  data::CategoricalColumn g;
  for (std::size_t i = 0; i < v.size(); ++i) g.codes.push_back(i % 3 == 0 ? -1 : static_cast<std::int32_t>(i % 2));
  g.levels = {"alpha", "be\"ta, q"};
  ds.add_column("g", g);
  std::ostringstream out;
  data::write_csv(ds, out);
  const auto back = csv(out.str());
  CHECK(back.numeric("v").values == v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(data::is_missing(back.column("g"), i) == (i % 3 == 0));
    CHECK(data::cell_label(back.column("g"), i) == data::cell_label(ds.column("g"), i));
  }
}

TEST_CASE("csv errors are reported as data or io errors") {
  CHECK_THROWS_AS(csv("a,b\n1,2,3\n"), Error);
  CHECK_THROWS_AS(data::load_csv("/nonexistent/file.csv"), Error);
  try {
    data::load_csv("/nonexistent/file.csv");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
}

TEST_CASE("unknown columns name the variable") {
  const auto ds = make_dataset({{"x", {1, 2}}});
  try {
    ds.column("nope");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
}

TEST_CASE("subset parsing") {
  auto s = data::parse_subset("year >= 2005");
  CHECK(s.column == "year");
  CHECK(s.op == data::Subset::Op::Ge);
  CHECK(s.value == "2005");
  s = data::parse_subset("origin=='FR'");
  CHECK(s.op == data::Subset::Op::Eq);
  CHECK(s.value == "FR");
  s = data::parse_subset("x!=3");
  CHECK(s.op == data::Subset::Op::Ne);
  CHECK_THROWS_AS(data::parse_subset("no operator"), Error);

  const auto ds = make_dataset({{"x", {1, 2, 3, 4}}});
  const auto le = data::parse_subset("x<=2");
  std::vector<int> kept;
  for (std::size_t r = 0; r < 4; ++r) kept.push_back(data::subset_keeps(le, ds.column("x"), r));
  CHECK(kept == std::vector<int>{1, 1, 0, 0});
}

TEST_CASE("factor groups number by first appearance") {
  const auto ds = make_dataset({{"f", {30, 10, 30, 20, 10}}});
  const std::vector<std::string> f{"f"};
  const auto idx = data::make_factor_index(ds, all_rows(5), f);
  CHECK(idx.n_groups == 3);
  CHECK(idx.group_of_row == std::vector<std::uint32_t>{0, 1, 0, 2, 1});
  CHECK(idx.group_sizes == std::vector<std::size_t>{2, 2, 1});
  CHECK(idx.first_row == std::vector<std::size_t>{0, 1, 3});
}

TEST_CASE("factor coding agrees across dense and sparse value ranges") {
  // Property: rows share a group iff their tuples are equal, whatever the span.
  std::mt19937_64 rng(11);
  for (double scale : {1.0, 1e9}) {
    std::uniform_int_distribution<int> pick(0, 6);
    std::vector<double> a(200), b(200);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = pick(rng) * scale;
      b[i] = pick(rng) - 3;
    }
    const auto ds = make_dataset({{"a", a}, {"b", b}});
    const std::vector<std::string> f{"a", "b"};
    const auto idx = data::make_factor_index(ds, all_rows(a.size()), f);
    std::map<std::pair<double, double>, std::uint32_t> seen;
    std::uint32_t next = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto [it, fresh] = seen.emplace(std::make_pair(a[i], b[i]), next);
      if (fresh) ++next;
      CHECK(idx.group_of_row[i] == it->second);
    }
    CHECK(idx.n_groups == seen.size());
  }
}

TEST_CASE("factor index honours the sample mask") {
  const auto ds = make_dataset({{"f", {5, 6, 5, 7}}});
  data::SampleMask m;
  m.keep = {0, 1, 1, 1};
  const std::vector<std::string> f{"f"};
  const auto idx = data::make_factor_index(ds, m, f);
  CHECK(idx.group_of_row == std::vector<std::uint32_t>{0, 1, 2});
  const auto rows = m.used_rows();
  CHECK(data::group_label(ds, rows, idx, f, 1) == "5");
}

TEST_CASE("non-integer factors are rejected") {
  const auto ds = make_dataset({{"f", {1.5, 2}}});
  const std::vector<std::string> f{"f"};
  CHECK_THROWS_AS(data::make_factor_index(ds, all_rows(2), f), Error);
}

TEST_CASE("cluster codes") {
  const auto ds = csv("c\nb\na\nb\nc\n");
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  std::uint32_t g = 0;
  const auto codes = data::group_codes(ds.column("c"), rows, &g);
  CHECK(g == 3);
  CHECK(codes == std::vector<std::uint32_t>{0, 1, 0, 2});
}

TEST_CASE("split levels sort numerically and respect the subset") {
  const auto ds = make_dataset({{"s", {10, 2, 2, 33}}, {"k", {0, 1, 1, 1}}});
  CHECK(data::split_levels(ds, "s") == std::vector<std::string>{"2", "10", "33"});
  CHECK(data::split_levels(ds, "s", data::parse_subset("k==1")) == std::vector<std::string>{"2", "33"});
}

TEST_CASE("panel lags use time arithmetic within units") {
  auto ds = make_dataset({{"id", {1, 1, 1, 2, 2}}, {"t", {1, 2, 4, 1, 2}}, {"x", {10, 20, 40, 100, 200}}});
  ds.set_panel("id", "t");
  const auto lag = data::shift_column(ds, ds.numeric("x"), data::ShiftOp::Lag, 1);
  CHECK(lag.missing == std::vector<std::uint8_t>{1, 0, 1, 1, 0});
  CHECK(lag.values[1] == 10.0);
  CHECK(lag.values[4] == 100.0);
  const auto lead = data::shift_column(ds, ds.numeric("x"), data::ShiftOp::Lead, 2);
  CHECK(lead.missing == std::vector<std::uint8_t>{1, 0, 1, 1, 1});
  CHECK(lead.values[1] == 40.0);
  const auto diff = data::shift_column(ds, ds.numeric("x"), data::ShiftOp::Diff, 1);
  CHECK(diff.values[1] == 10.0);
  CHECK(diff.values[4] == 100.0);
}

TEST_CASE("lags without a panel are an invalid argument") {
  const auto ds = make_dataset({{"x", {1, 2}}});
  try {
    data::shift_column(ds, ds.numeric("x"), data::ShiftOp::Lag, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidArgument);
  }
}
