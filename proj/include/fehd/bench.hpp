#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fehd/data.hpp"
#include "fehd/estimators.hpp"

namespace fehd::bench {

// Philox4x32-10 counter-based generator with the published round constants.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key);

// Stateless streams: draw j of stream s uses counter (j_lo, j_hi, s, 0) and
// key (seed_lo, seed_hi).
class Philox {
 public:
  explicit Philox(std::uint64_t seed) : seed_(seed) {}
  std::array<std::uint32_t, 4> block(std::uint32_t stream, std::uint64_t j) const;
  // Uniform on (0, 1) from the first two words of the block, 53 bits.
  double uniform(std::uint32_t stream, std::uint64_t j) const;
  // Standard normal via Box-Muller on the block's two uniforms.
  double normal(std::uint32_t stream, std::uint64_t j) const;

 private:
  std::uint64_t seed_;
};

enum class Assignment { Simple, Difficult };

struct DgpConfig {
  std::size_t n = 1000;
  std::size_t nb_year = 10;
  std::size_t nb_indiv_per_firm = 23;
  std::uint64_t seed = 42;
};

// Rounds half to even, as R's round().
std::size_t round_half_even(double v);

// rep(1:k, length.out = n).
std::vector<double> rep_length(std::size_t k, std::size_t n);

// Columns indiv_id, year, firm_id, firm_id_difficult, x1, x2, y. The panel has
// round(n / nb_year) * nb_year rows. y carries the firm effect of the random
// assignment for both variants.
data::Dataset simulate_panel(const DgpConfig& cfg);

struct BenchCase {
  Assignment assignment = Assignment::Simple;
  std::size_t n_fe = 2;
  est::Family family = est::Family::Ols;
  std::string name() const;  // e.g. "simple2fe", "difficult3fe-poisson"
};
BenchCase parse_case(std::string_view name);

// Formula of a case: y (or exp_y) ~ x1 + x2 | indiv_id + firm + [year].
std::string case_formula(const BenchCase& c);

struct BenchOptions {
  std::vector<std::size_t> sizes;
  std::vector<BenchCase> cases;
  std::size_t reps = 3;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  bool accelerate = true;
  std::optional<double> timeout_seconds;  // per fit
  bool parallel_cases = false;            // run the cases of one panel concurrently
};

struct BenchRow {
  std::string case_name;
  std::size_t n = 0;
  std::size_t rep = 0;
  double seconds = 0.0;
  std::size_t demean_iterations = 0;
  std::size_t demean_sweeps = 0;
  std::string status;  // ok, timeout, error: ...
};

std::vector<BenchRow> run_benchmark(const BenchOptions& opt);
void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out);

// Times one fit of a case on an existing simulated panel.
BenchRow run_case(const data::Dataset& ds, const BenchCase& c, const BenchOptions& opt);

}  // namespace fehd::bench
