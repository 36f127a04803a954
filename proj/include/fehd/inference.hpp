#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fehd/data.hpp"
#include "fehd/estimators.hpp"

namespace fehd::inf {

enum class VcovKind { Iid, Hc1, Cluster, Twoway, NeweyWest, DriscollKraay };

// Declarative variance request. `vars` holds cluster factors (each may be a
// `^` combination), or (unit, time) for nw and (time) for dk.
struct VcovSpec {
  VcovKind kind = VcovKind::Iid;
  std::vector<std::string> vars;
  std::optional<std::size_t> lag;
  bool first_fe = false;  // bare `cluster`: cluster on the first FE term

  bool operator==(const VcovSpec&) const = default;
};

// Parses iid | hc1 | cluster | cluster=col | twoway=a,b | nw=unit,time[,lag] | dk=time[,lag].
VcovSpec parse_vcov(std::string_view text);
std::string to_string(const VcovSpec& spec);

enum class Ssc { Default, None };

struct VcovMatrix {
  Eigen::MatrixXd matrix;
  std::string label;  // "IID", "by: indiv", "Newey-West (L=1)", ...
  std::vector<double> ssc;       // factor per meat term, in computation order
  std::vector<std::size_t> n_clusters;
  std::size_t lag = 0;
  bool clamped = false;  // eigenvalues were clamped at zero
};

// Sandwich estimate from the stored bread and scores of `fit`. Cluster and
// panel variables are looked up in `ds` on the fit's estimation rows.
VcovMatrix compute_vcov(const est::FitResult& fit, const VcovSpec& spec, const data::Dataset& ds,
                        Ssc ssc = Ssc::Default);

// dk: floor(T^(1/4)); nw: floor(0.75 T^(1/3)), with T distinct time periods.
std::size_t default_lag(VcovKind kind, std::size_t n_periods);

struct CoefRow {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double stat = 0.0;  // t or z
  double p = 0.0;
};

// t-based p-values for linear fits and gaussian GLM, z-based otherwise.
bool uses_t(const est::FitResult& fit);
std::vector<CoefRow> coef_table(const est::FitResult& fit, const VcovMatrix& v);

struct Stat {
  double value = 0.0;
  std::optional<double> p;
  std::optional<std::pair<double, double>> df;
};

inline constexpr const char* kFitStatNames[] = {"n",   "r2",  "ar2",    "wr2",  "pr2", "rmse", "ll",
                                                "bic", "apr2", "sq.cor", "wald", "ivf",  "wh",   "my"};
bool is_fit_stat(std::string_view name);

// Requested statistics in request order. ivf expands to one entry per
// endogenous variable ("ivf" for one, "ivf::<endo>" for several). Statistics
// undefined for the fit come back as NaN.
std::vector<std::pair<std::string, Stat>> fit_stats(const est::FitResult& fit, const VcovMatrix& v,
                                                    const std::vector<std::string>& names);

// Default statistics per family.
std::vector<std::string> default_fit_stats(est::Family family);

double t_quantile(double p, double df);
double normal_quantile(double p);

}  // namespace fehd::inf
