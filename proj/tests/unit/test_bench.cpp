#include <doctest.h>

#include <algorithm>
#include <set>

#include "fehd/bench.hpp"

using namespace fehd;

TEST_CASE("philox4x32-10 known-answer vectors") {
  using B = std::array<std::uint32_t, 4>;
  CHECK(bench::philox4x32({0, 0, 0, 0}, {0, 0}) == B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(bench::philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        B{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(bench::philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("philox streams are stateless and bounded") {
  const bench::Philox a(7), b(7), c(8);
  CHECK(a.block(3, 11) == b.block(3, 11));
  CHECK(a.block(3, 11) != c.block(3, 11));
  CHECK(a.block(3, 11) != a.block(4, 11));
  for (std::uint64_t j = 0; j < 2000; ++j) {
    const double u = a.uniform(0, j);
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("philox normals have unit scale") {
  const bench::Philox g(42);
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int j = 0; j < n; ++j) {
    const double z = g.normal(1, static_cast<std::uint64_t>(j));
    s += z;
    s2 += z * z;
  }
  CHECK(std::fabs(s / n) < 0.05);
  CHECK(std::fabs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("rounding half to even") {
  CHECK(bench::round_half_even(0.5) == 0);
  CHECK(bench::round_half_even(1.5) == 2);
  CHECK(bench::round_half_even(2.5) == 2);
  CHECK(bench::round_half_even(2.6) == 3);
}

TEST_CASE("rep_length cycles 1..k") {
  CHECK(bench::rep_length(4, 10) == std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4, 1, 2});
  CHECK(bench::rep_length(3, 0).empty());
}

TEST_CASE("simulated panel shape") {
  bench::DgpConfig cfg;
  cfg.n = 1234;
  const auto ds = bench::simulate_panel(cfg);
  // round(1234 / 10) * 10
  CHECK(ds.n_rows() == 1230);
  for (const char* c : {"indiv_id", "year", "firm_id", "firm_id_difficult", "x1", "x2", "y"})
    CHECK(ds.has(c));
  const auto& year = ds.numeric("year").values;
  CHECK(*std::min_element(year.begin(), year.end()) == 1.0);
  CHECK(*std::max_element(year.begin(), year.end()) == 10.0);
  // Each individual appears once per year.
  const auto& id = ds.numeric("indiv_id").values;
  std::set<std::pair<double, double>> cells;
  for (std::size_t i = 0; i < id.size(); ++i) cells.emplace(id[i], year[i]);
  CHECK(cells.size() == ds.n_rows());
}

TEST_CASE("simulation is a function of the seed") {
  bench::DgpConfig cfg;
  cfg.n = 500;
  const auto a = bench::simulate_panel(cfg);
  const auto b = bench::simulate_panel(cfg);
  cfg.seed = 43;
  const auto c = bench::simulate_panel(cfg);
  CHECK(a.numeric("y").values == b.numeric("y").values);
  CHECK(a.numeric("y").values != c.numeric("y").values);
}

TEST_CASE("bench case names round-trip") {
  for (const char* name : {"simple2fe", "difficult3fe", "simple3fe-poisson"}) {
    CHECK(bench::parse_case(name).name() == name);
  }
  CHECK_THROWS(bench::parse_case("hard9fe"));
  CHECK(bench::case_formula(bench::parse_case("difficult3fe")).find("firm_id_difficult") != std::string::npos);
}
