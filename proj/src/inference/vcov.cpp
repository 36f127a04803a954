#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <unordered_map>

#include "fehd/error.hpp"
#include "fehd/inference.hpp"

namespace fehd::inf {

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? s.size() - start : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_lag(const std::string& s, std::size_t& lag) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, lag);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string> split_caret(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto at = s.find('^', start);
    out.push_back(trim(std::string_view(s).substr(start, at == std::string::npos ? s.size() - start : at - start)));
    if (at == std::string::npos) break;
    start = at + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

data::SampleMask mask_of(const est::FitResult& fit, std::size_t n_rows) {
  data::SampleMask m;
  m.keep.assign(n_rows, 0);
  for (auto r : fit.rows) m.keep[r] = 1;
  return m;
}

// Cluster id per estimation row for a (possibly combined) factor.
std::vector<std::uint32_t> cluster_ids(const data::Dataset& ds, const data::SampleMask& mask, const std::string& var,
                                       std::uint32_t& n_groups) {
  const auto factors = split_caret(var);
  for (const auto& f : factors)
    if (!ds.has(f)) throw invalid_argument("cluster variable '" + f + "' is not in the data");
  auto idx = data::make_factor_index(ds, mask, factors);
  n_groups = idx.n_groups;
  return std::move(idx.group_of_row);
}

Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& S, const std::vector<std::uint32_t>& id,
                             std::uint32_t G) {
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(G, S.cols());
  for (Eigen::Index i = 0; i < S.rows(); ++i) C.row(id[static_cast<std::size_t>(i)]) += S.row(i);
  return C.transpose() * C;
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& B, const Eigen::MatrixXd& M) {
  Eigen::MatrixXd V = B * M * B;
  return 0.5 * (V + V.transpose());
}

// Integer time value of every estimation row.
std::vector<std::int64_t> time_values(const est::FitResult& fit, const data::Dataset& ds,
                                      const std::string& var) {
  if (!ds.has(var)) throw invalid_argument("time variable '" + var + "' is not in the data");
  const auto* col = std::get_if<data::NumericColumn>(&ds.column(var));
  if (!col) throw data_error("time variable '" + var + "' must be numeric");
  std::vector<std::int64_t> t(fit.rows.size());
  for (std::size_t i = 0; i < fit.rows.size(); ++i) {
    const auto r = fit.rows[i];
    if (col->missing[r]) throw data_error("missing value in time variable '" + var + "'");
    const double v = col->values[r];
    if (v != std::nearbyint(v)) throw data_error("time variable '" + var + "' must be integer-valued");
    t[i] = static_cast<std::int64_t>(v);
  }
  return t;
}

std::size_t n_distinct(std::vector<std::int64_t> t) {
  std::sort(t.begin(), t.end());
  return static_cast<std::size_t>(std::unique(t.begin(), t.end()) - t.begin());
}

double bartlett(std::size_t l, std::size_t L) {
  return 1.0 - static_cast<double>(l) / static_cast<double>(L + 1);
}

Eigen::MatrixXd newey_west_meat(const Eigen::MatrixXd& S, const std::vector<std::uint32_t>& unit,
                                const std::vector<std::int64_t>& time, std::size_t L,
                                const std::string& unit_name) {
  struct Key {
    std::uint32_t u;
    std::int64_t t;
    bool operator==(const Key&) const = default;
  };
  struct Hash {
    std::size_t operator()(const Key& k) const noexcept {
      return std::hash<std::int64_t>()(k.t * 1000003 + static_cast<std::int64_t>(k.u));
    }
  };
  std::unordered_map<Key, std::size_t, Hash> cell;
  cell.reserve(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i)
    if (!cell.emplace(Key{unit[i], time[i]}, i).second)
      throw data_error("duplicate (unit, time) pair in Newey-West panel '" + unit_name + "'");
  Eigen::MatrixXd M = S.transpose() * S;
  for (std::size_t l = 1; l <= L; ++l) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(S.cols(), S.cols());
    for (std::size_t i = 0; i < unit.size(); ++i) {
      const auto it = cell.find(Key{unit[i], time[i] - static_cast<std::int64_t>(l)});
      if (it == cell.end()) continue;
      G.noalias() += S.row(static_cast<Eigen::Index>(i)).transpose() * S.row(static_cast<Eigen::Index>(it->second));
    }
    M += bartlett(l, L) * (G + G.transpose());
  }
  return M;
}

Eigen::MatrixXd driscoll_kraay_meat(const Eigen::MatrixXd& S, const std::vector<std::int64_t>& time,
                                    std::size_t L) {
  std::map<std::int64_t, Eigen::VectorXd> sums;
  for (std::size_t i = 0; i < time.size(); ++i) {
    auto [it, fresh] = sums.try_emplace(time[i], Eigen::VectorXd::Zero(S.cols()));
    it->second += S.row(static_cast<Eigen::Index>(i)).transpose();
  }
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(S.cols(), S.cols());
  for (const auto& [t, s] : sums) M.noalias() += s * s.transpose();
  for (std::size_t l = 1; l <= L; ++l) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(S.cols(), S.cols());
    for (const auto& [t, s] : sums) {
      const auto it = sums.find(t - static_cast<std::int64_t>(l));
      if (it != sums.end()) G.noalias() += s * it->second.transpose();
    }
    M += bartlett(l, L) * (G + G.transpose());
  }
  return M;
}

double cluster_ssc(std::size_t G, std::size_t n, std::size_t K) {
  const double g = static_cast<double>(G), nn = static_cast<double>(n), k = static_cast<double>(K);
  return g / (g - 1.0) * (nn - 1.0) / (nn - k);
}

}  // namespace

VcovSpec parse_vcov(std::string_view text) {
  const std::string s = trim(text);
  VcovSpec v;
  const auto eq = s.find('=');
  const std::string key = trim(std::string_view(s).substr(0, eq));
  const std::string arg = eq == std::string::npos ? "" : trim(std::string_view(s).substr(eq + 1));
  auto bad = [&](const std::string& why) {
    return invalid_argument("invalid --vcov '" + s + "': " + why);
  };
  if (key == "iid" || key == "hc1") {
    if (eq != std::string::npos) throw bad("'" + key + "' takes no argument");
    v.kind = key == "iid" ? VcovKind::Iid : VcovKind::Hc1;
    return v;
  }
  if (key == "cluster") {
    v.kind = VcovKind::Cluster;
    if (eq == std::string::npos) {
      v.first_fe = true;
      return v;
    }
    if (arg.empty() || arg.find(',') != std::string::npos) throw bad("expected cluster=col");
    v.vars = {arg};
    return v;
  }
  const auto parts = eq == std::string::npos ? std::vector<std::string>{} : split_list(arg);
  for (const auto& p : parts)
    if (p.empty()) throw bad("empty variable name");
  if (key == "twoway") {
    if (parts.size() != 2) throw bad("expected twoway=col1,col2");
    v.kind = VcovKind::Twoway;
    v.vars = parts;
    return v;
  }
  if (key == "nw" || key == "dk") {
    const std::size_t need = key == "nw" ? 2 : 1;
    if (parts.size() != need && parts.size() != need + 1)
      throw bad(key == "nw" ? "expected nw=unit,time[,lag]" : "expected dk=time[,lag]");
    v.kind = key == "nw" ? VcovKind::NeweyWest : VcovKind::DriscollKraay;
    v.vars.assign(parts.begin(), parts.begin() + static_cast<std::ptrdiff_t>(need));
    if (parts.size() > need) {
      std::size_t lag = 0;
      if (!parse_lag(parts.back(), lag)) throw bad("lag must be a nonnegative integer");
      v.lag = lag;
    }
    return v;
  }
  throw bad("expected iid, hc1, cluster, cluster=col, twoway=a,b, nw=unit,time[,lag] or dk=time[,lag]");
}

std::string to_string(const VcovSpec& v) {
  switch (v.kind) {
    case VcovKind::Iid: return "iid";
    case VcovKind::Hc1: return "hc1";
    case VcovKind::Cluster: return v.first_fe ? "cluster" : "cluster=" + v.vars.at(0);
    case VcovKind::Twoway: return "twoway=" + join(v.vars, ",");
    case VcovKind::NeweyWest:
    case VcovKind::DriscollKraay: {
      std::string s = (v.kind == VcovKind::NeweyWest ? "nw=" : "dk=") + join(v.vars, ",");
      if (v.lag) s += "," + std::to_string(*v.lag);
      return s;
    }
  }
  return "iid";
}

std::size_t default_lag(VcovKind kind, std::size_t n_periods) {
  const double T = static_cast<double>(n_periods);
  const double raw = kind == VcovKind::DriscollKraay ? std::sqrt(std::sqrt(T)) : 0.75 * std::cbrt(T);
  return static_cast<std::size_t>(std::floor(raw + 1e-9));
}

VcovMatrix compute_vcov(const est::FitResult& fit, const VcovSpec& spec, const data::Dataset& ds,
                        Ssc ssc) {
  const std::size_t n = fit.dof.n;
  const std::size_t K = fit.dof.k_total();
  const bool adj = ssc == Ssc::Default;
  const Eigen::MatrixXd& B = fit.bread;
  const Eigen::MatrixXd& S = fit.scores;
  if (B.rows() != fit.coef.size())
    throw invalid_argument("the fit does not retain its bread matrix (only-coef fit)");
  VcovMatrix out;
  if (spec.kind == VcovKind::Iid) {
    const bool linear = fit.family == est::Family::Ols || fit.family == est::Family::Gaussian;
    double s2 = fit.dispersion;
    double factor = 1.0;
    if (linear) {
      factor = static_cast<double>(n) / static_cast<double>(fit.dof.df_resid);
      s2 = adj ? fit.ssr / static_cast<double>(fit.dof.df_resid) : fit.ssr / static_cast<double>(n);
    }
    out.matrix = s2 * B;
    out.ssc = {adj ? factor : 1.0};
    out.label = "IID";
    return out;
  }
  if (S.rows() != static_cast<Eigen::Index>(n) || S.cols() != fit.coef.size())
    throw invalid_argument("the fit does not retain its score rows (only-coef fit)");
  const auto mask = mask_of(fit, ds.n_rows());

  switch (spec.kind) {
    case VcovKind::Hc1: {
      const double c = adj ? static_cast<double>(n) / static_cast<double>(n - K) : 1.0;
      out.matrix = c * sandwich(B, S.transpose() * S);
      out.ssc = {c};
      out.label = "Heteroskedasticity-robust";
      return out;
    }
    case VcovKind::Cluster: {
      std::string var;
      if (spec.first_fe) {
        if (fit.model.fe.empty())
          throw invalid_argument("vcov 'cluster' without a variable needs a fixed effect to cluster on");
        var = join(fit.model.fe.front().factors, "^");
      } else {
        var = spec.vars.at(0);
      }
      std::uint32_t G = 0;
      const auto id = cluster_ids(ds, mask, var, G);
      if (G < 2) throw estimation_error("cannot cluster on '" + var + "': it has a single cluster");
      const double c = adj ? cluster_ssc(G, n, K) : 1.0;
      out.matrix = c * sandwich(B, cluster_meat(S, id, G));
      out.ssc = {c};
      out.n_clusters = {G};
      out.label = "by: " + var;
      return out;
    }
    case VcovKind::Twoway: {
      const auto& a = spec.vars.at(0);
      const auto& b = spec.vars.at(1);
      std::uint32_t Ga = 0, Gb = 0, Gab = 0;
      const auto ia = cluster_ids(ds, mask, a, Ga);
      const auto ib = cluster_ids(ds, mask, b, Gb);
      const auto iab = cluster_ids(ds, mask, a + "^" + b, Gab);
      if (Ga < 2) throw estimation_error("cannot cluster on '" + a + "': it has a single cluster");
      if (Gb < 2) throw estimation_error("cannot cluster on '" + b + "': it has a single cluster");
      const double ca = adj ? cluster_ssc(Ga, n, K) : 1.0;
      const double cb = adj ? cluster_ssc(Gb, n, K) : 1.0;
      const double cab = adj && Gab > 1 ? cluster_ssc(Gab, n, K) : 1.0;
      const Eigen::MatrixXd M =
          ca * cluster_meat(S, ia, Ga) + cb * cluster_meat(S, ib, Gb) - cab * cluster_meat(S, iab, Gab);
      out.matrix = sandwich(B, M);
      out.ssc = {ca, cb, cab};
      out.n_clusters = {Ga, Gb, Gab};
      out.label = "by: " + a + " & " + b;
      if ((out.matrix.diagonal().array() < 0.0).any()) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.matrix);
        const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
        out.matrix = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        out.clamped = true;
      }
      return out;
    }
    case VcovKind::NeweyWest: {
      const auto& unit = spec.vars.at(0);
      const auto& tvar = spec.vars.at(1);
      std::uint32_t G = 0;
      const auto uid = cluster_ids(ds, mask, unit, G);
      const auto t = time_values(fit, ds, tvar);
      const std::size_t L = spec.lag.value_or(default_lag(VcovKind::NeweyWest, n_distinct(t)));
      const double c = adj ? static_cast<double>(n) / static_cast<double>(n - K) : 1.0;
      out.matrix = c * sandwich(B, newey_west_meat(S, uid, t, L, unit));
      out.ssc = {c};
      out.lag = L;
      out.label = "Newey-West (L=" + std::to_string(L) + ")";
      return out;
    }
    case VcovKind::DriscollKraay: {
      const auto& tvar = spec.vars.at(0);
      const auto t = time_values(fit, ds, tvar);
      const std::size_t T = n_distinct(t);
      if (T < 2) throw estimation_error("Driscoll-Kraay needs at least two time periods");
      const std::size_t L = spec.lag.value_or(default_lag(VcovKind::DriscollKraay, T));
      const double c = adj ? cluster_ssc(T, n, K) : 1.0;
      out.matrix = c * sandwich(B, driscoll_kraay_meat(S, t, L));
      out.ssc = {c};
      out.n_clusters = {static_cast<std::uint32_t>(T)};
      out.lag = L;
      out.label = "Driscoll-Kraay (L=" + std::to_string(L) + ")";
      return out;
    }
    case VcovKind::Iid: break;
  }
  return out;
}

}  // namespace fehd::inf
