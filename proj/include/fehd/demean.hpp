#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Residualization of columns on fixed-effect dimensions, some of which may
// carry varying slopes.
namespace fehd::demean {

struct FeDimension {
  std::string name;
  std::vector<std::uint32_t> group;           // group of each used row
  std::uint32_t n_groups = 0;
  std::vector<std::vector<double>> slopes;    // each of length n_used
  bool intercept = true;

  std::size_t n_coef() const noexcept { return slopes.size() + (intercept ? 1 : 0); }
};

struct Options {
  double tol = 1e-6;
  std::size_t max_iter = 10000;
  bool accelerate = true;   // false: plain alternating sweeps
  unsigned threads = 1;     // workers over target columns
  std::optional<std::chrono::steady_clock::time_point> deadline;
};

// Coefficients of one target: per dimension, n_groups * n_coef values laid out
// group-major (intercept first, then slopes in declaration order).
using FeCoefs = std::vector<std::vector<double>>;

// Per-group weighted Gram systems and weight sums for a fixed set of
// dimensions and weights. Built once, reused for any number of targets.
class FeStructure {
 public:
  FeStructure(std::vector<FeDimension> dims, std::vector<double> weights);

  std::size_t n_obs() const noexcept { return n_; }
  std::size_t n_dims() const noexcept { return dims_.size(); }
  const FeDimension& dim(std::size_t q) const { return dims_[q]; }
  const std::vector<double>& weights() const noexcept { return w_; }

  // Coefficients fixed at zero because their group system is degenerate.
  std::size_t n_dropped(std::size_t q) const { return solvers_[q].n_dropped; }
  bool coef_dropped(std::size_t q, std::uint32_t g, std::size_t l) const;

  // Free FE parameters: all retained coefficients minus one shared constant
  // per intercept dimension beyond the first.
  std::size_t n_parameters() const;

  // Solves group g of dimension q in place: rhs (n_coef values) -> coefficients.
  void solve_group(std::size_t q, std::uint32_t g, double* rhs) const;

  // Total weight of group g of an intercept-only dimension q.
  double group_weight(std::size_t q, std::uint32_t g) const { return solvers_[q].wsum[g]; }

  // Value of coefficient column l of dimension q at row i.
  double z(std::size_t q, std::size_t i, std::size_t l) const {
    const auto& d = dims_[q];
    if (d.intercept) return l == 0 ? 1.0 : d.slopes[l - 1][i];
    return d.slopes[l][i];
  }

 private:
  struct Solver {
    std::size_t L = 1;
    std::vector<double> wsum;            // intercept-only fast path
    std::vector<double> lu;              // per group L*L, reduced system in leading block
    std::vector<std::int32_t> piv;       // per group L
    std::vector<std::int32_t> kept;      // per group L retained indices, -1 padded
    std::vector<std::uint8_t> n_kept;    // per group
    std::size_t n_dropped = 0;
    bool simple = true;
  };

  std::size_t n_ = 0;
  std::vector<FeDimension> dims_;
  std::vector<double> w_;
  std::vector<Solver> solvers_;
};

struct ColumnInfo {
  std::size_t iterations = 0;  // accelerated steps, or sweeps in plain mode
  std::size_t sweeps = 0;      // evaluations of the sweep map
  bool converged = true;
  bool timed_out = false;
};

struct DemeanResult {
  std::vector<std::vector<double>> residuals;
  std::vector<ColumnInfo> info;
  std::vector<FeCoefs> fe_coef;  // filled when requested

  std::size_t max_iterations() const;
  std::size_t max_sweeps() const;
  bool all_converged() const;
};

// Demeans every target against the same structure. Column results do not
// depend on which other targets are demeaned alongside or on thread count.
DemeanResult demean(const FeStructure& fs, std::span<const std::span<const double>> targets,
                    const Options& opt = {}, bool keep_coef = false,
                    const std::vector<FeCoefs>* warm_start = nullptr);

DemeanResult demean(const FeStructure& fs, const std::vector<std::vector<double>>& targets,
                    const Options& opt = {}, bool keep_coef = false,
                    const std::vector<FeCoefs>* warm_start = nullptr);

// One application of the acceleration step on a vector with its two images.
// Returns the extrapolated point, or gg when the denominator is negligible.
std::vector<double> irons_tuck_step(std::span<const double> x, std::span<const double> gx,
                                    std::span<const double> ggx);

// Normalized FE coefficients of one target.
struct FixefReport {
  FeCoefs coef;
  std::vector<std::vector<std::uint8_t>> dropped;  // per dimension, per coefficient
  std::size_t reference_dim = 0;                   // absorbs the shared constants
  std::size_t n_normalized = 0;                    // dimensions pinned at group 0
};

// Moves each extra intercept dimension's group-0 intercept into the first
// intercept dimension so that group 0 reads zero there. Fitted values are
// unchanged.
FixefReport recover_fixef(const FeStructure& fs, const FeCoefs& coef);

// Fitted FE contribution at every row.
std::vector<double> fe_fitted(const FeStructure& fs, const FeCoefs& coef);

// Worker count for a requested value: 0 means half the hardware threads,
// overridable with FEHD_THREADS.
unsigned resolve_threads(unsigned requested);

}  // namespace fehd::demean
