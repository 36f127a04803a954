#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fehd/data.hpp"
#include "fehd/demean.hpp"
#include "fehd/formula.hpp"

namespace fehd::est {

enum class Family { Ols, Poisson, Logit, Gaussian };

std::string family_name(Family f);
Family parse_family(std::string_view name);

struct FitOptions {
  Family family = Family::Ols;
  std::optional<std::string> weights;  // column name
  std::optional<std::string> offset;   // column name
  std::optional<data::Subset> subset;
  std::optional<data::SplitLevel> split;
  double collin_tol = 1e-10;
  demean::Options demean;
  double glm_tol = 1e-8;
  std::size_t irls_max_iter = 200;
  bool keep_fixef = false;  // recover FE coefficients after the fit
  bool only_coef = false;   // skip scores and bread
};

// Reasons for removing rows, in attribution order.
inline constexpr const char* kReasonOrder[] = {"subset",     "split-level", "NA-LHS",
                                               "NA-RHS",     "NA-IV",       "NA-FE",
                                               "NA-weights", "NA-offset",   "zero-weight"};

// A model evaluated on its estimation sample.
struct Prepared {
  const data::Dataset* dataset = nullptr;  // source of FE group labels
  formula::ModelSpec model;
  data::SampleMask mask;
  std::vector<std::size_t> rows;
  std::string sample_label;

  std::string y_name;
  std::vector<double> y;
  std::vector<std::string> x_names;  // exogenous regressors, "(Intercept)" first when present
  std::vector<std::vector<double>> x;
  std::vector<std::string> endo_names;
  std::vector<std::vector<double>> endo;
  std::vector<std::string> inst_names;
  std::vector<std::vector<double>> inst;
  std::vector<double> weights;  // empty: unit weights
  std::vector<double> offset;   // empty: none

  std::vector<std::vector<std::string>> fe_factors;  // per FE term
  std::vector<demean::FeDimension> fe;
  std::size_t n_removed_fe_groups = 0;  // GLM groups with constant outcome
  std::size_t n_removed_fe_rows = 0;
};

// FE indices already built for a given sample, reused across models.
struct PrepareCache {
  struct Entry {
    std::string fe;  // printed FE term
    std::vector<std::uint8_t> keep;
    demean::FeDimension dim;
  };
  std::vector<Entry> entries;
};

// Evaluates every model column, applies listwise deletion and builds the FE
// indices. GLM families also drop FE groups whose outcome carries no
// information (all zero for Poisson, constant for logit).
Prepared prepare(const data::Dataset& ds, const formula::ModelSpec& model, const FitOptions& opt,
                 PrepareCache* cache = nullptr);

// Stable key of the columns pooling may share across models.
std::string pooling_key(const Prepared& p, const FitOptions& opt);

struct DofLedger {
  std::size_t n = 0;
  std::size_t k_vars = 0;  // retained regressors incl. intercept
  std::size_t k_fe = 0;
  std::size_t df_resid = 0;
  std::size_t k_total() const { return k_vars + k_fe; }
};

struct FirstStage {
  std::string endo;
  std::vector<std::string> coef_names;
  Eigen::VectorXd coef;
  double f_stat = 0.0;
  std::size_t df1 = 0, df2 = 0;
};

struct IvDiag {
  std::vector<std::string> endo;
  std::vector<std::string> instruments;
  std::vector<FirstStage> first_stages;
  double wh_stat = 0.0;
  std::size_t wh_df1 = 0, wh_df2 = 0;
};

struct Fixef {
  std::vector<std::string> names;  // per dimension, e.g. "indiv" or "fe[x]"
  std::vector<std::vector<std::string>> group_labels;
  std::vector<std::vector<std::string>> coef_labels;  // per dimension, per coefficient column
  demean::FixefReport report;
};

struct FitResult {
  formula::ModelSpec model;
  std::string depvar;
  std::string sample_label;
  Family family = Family::Ols;

  std::vector<std::string> coef_names;
  Eigen::VectorXd coef;
  std::vector<std::string> dropped_collinear;

  std::vector<double> y;          // response on the estimation sample
  std::vector<double> fitted;     // response scale
  std::vector<double> residuals;  // y - fitted
  std::vector<double> weights;    // prior weights, empty when unweighted
  std::vector<double> working_weights;  // IRLS weights (GLM)

  Eigen::MatrixXd bread;   // (X'WX)^-1 of the retained demeaned design
  Eigen::MatrixXd scores;  // n x K score rows
  DofLedger dof;

  double ssr = 0.0;         // weighted sum of squared residuals
  double tss = 0.0;         // weighted, around the weighted mean
  double tss_within = 0.0;  // weighted sum of squares of the demeaned outcome
  double y_mean = 0.0;
  double deviance = 0.0;
  double null_deviance = 0.0;
  double loglik = 0.0;
  double null_loglik = 0.0;
  double dispersion = 1.0;  // scale of the iid vcov

  bool has_intercept = false;
  std::vector<std::string> fe_names;
  std::vector<std::size_t> fe_sizes;
  std::vector<std::size_t> rows;  // dataset rows of the estimation sample
  std::map<std::string, std::size_t> removed;  // reason -> rows

  std::size_t demean_iterations = 0;
  std::size_t demean_sweeps = 0;
  bool demean_converged = true;
  std::size_t irls_iterations = 0;
  bool converged = true;

  std::optional<IvDiag> iv;
  std::optional<Fixef> fixef;
};

// Demeaned columns shared between models with identical sample and FE
// structure, keyed by column name.
struct DemeanCache {
  std::map<std::string, std::vector<double>> columns;
  std::map<std::string, demean::ColumnInfo> info;
  std::size_t iterations = 0;
  std::size_t sweeps = 0;
  bool converged = true;
};

// Names of every column a linear fit demeans.
std::vector<std::string> linear_targets(const Prepared& p);
const std::vector<double>& raw_column(const Prepared& p, const std::string& name);

// Convergence record restricted to `names`.
void summarize(const DemeanCache& cache, const std::vector<std::string>& names,
               std::size_t& iterations, std::size_t& sweeps, bool& converged);

// Demeans the named columns of `p` in one batch.
DemeanCache demean_columns(const Prepared& p, const std::vector<std::string>& names,
                           const demean::Options& opt);

FitResult fit_ols(const Prepared& p, const FitOptions& opt, const DemeanCache* cache = nullptr);
FitResult fit_2sls(const Prepared& p, const FitOptions& opt, const DemeanCache* cache = nullptr);
FitResult fit_glm(const Prepared& p, const FitOptions& opt);

// Prepares then dispatches on family and IV part.
FitResult fit(const data::Dataset& ds, const formula::ModelSpec& model, const FitOptions& opt);
FitResult fit_prepared(const Prepared& p, const FitOptions& opt, const DemeanCache* cache = nullptr);

// Weighted least squares with sequential collinearity pruning. A column is
// dropped when its Cholesky pivot falls below tol times its scale.
struct LsSolution {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> dropped;
  Eigen::VectorXd coef;   // over kept columns
  Eigen::MatrixXd bread;  // (X_k' W X_k)^-1
};
LsSolution weighted_ls(const Eigen::MatrixXd& X, Eigen::Ref<const Eigen::VectorXd> y, const double* w,
                       const Eigen::VectorXd& scale, double tol);

}  // namespace fehd::est
