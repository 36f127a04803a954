#include <algorithm>
#include <cmath>
#include <numeric>

#include "fehd/error.hpp"
#include "fehd/estimators.hpp"

namespace fehd::est {

LsSolution weighted_ls(const Eigen::MatrixXd& X, Eigen::Ref<const Eigen::VectorXd> y, const double* w,
                       const Eigen::VectorXd& scale, double tol) {
  const Eigen::Index n = X.rows();
  const Eigen::Index K = X.cols();
  LsSolution sol;
  Eigen::MatrixXd A(K, K);
  Eigen::VectorXd b(K);
  if (w) {
    const Eigen::Map<const Eigen::VectorXd> wv(w, n);
    const Eigen::MatrixXd WX = X.array().colwise() * wv.array();
    A.noalias() = X.transpose() * WX;
    b.noalias() = WX.transpose() * y;
  } else {
    A.noalias() = X.transpose() * X;
    b.noalias() = X.transpose() * y;
  }

  // Left-looking Cholesky over retained columns only.
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index j = 0; j < K; ++j) {
    double d = A(j, j);
    for (std::size_t l : sol.kept) d -= L(j, static_cast<Eigen::Index>(l)) * L(j, static_cast<Eigen::Index>(l));
    if (!(scale(j) > 0.0) || !(d > tol * scale(j))) {
      sol.dropped.push_back(static_cast<std::size_t>(j));
      continue;
    }
    L(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < K; ++i) {
      double s = A(i, j);
      for (std::size_t l : sol.kept)
        s -= L(i, static_cast<Eigen::Index>(l)) * L(j, static_cast<Eigen::Index>(l));
      L(i, j) = s / L(j, j);
    }
    sol.kept.push_back(static_cast<std::size_t>(j));
  }

  const Eigen::Index m = static_cast<Eigen::Index>(sol.kept.size());
  Eigen::MatrixXd Akk(m, m);
  Eigen::VectorXd bk(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    bk(a) = b(static_cast<Eigen::Index>(sol.kept[a]));
    for (Eigen::Index c = 0; c < m; ++c)
      Akk(a, c) = A(static_cast<Eigen::Index>(sol.kept[a]), static_cast<Eigen::Index>(sol.kept[c]));
  }
  if (m == 0) {
    sol.coef.resize(0);
    sol.bread.resize(0, 0);
    return sol;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(Akk);
  if (llt.info() == Eigen::Success) {
    sol.coef = llt.solve(bk);
    sol.bread = llt.solve(Eigen::MatrixXd::Identity(m, m));
  }
  if (llt.info() != Eigen::Success || !sol.coef.allFinite()) {
    Eigen::MatrixXd Xk(n, m);
    for (Eigen::Index a = 0; a < m; ++a) Xk.col(a) = X.col(static_cast<Eigen::Index>(sol.kept[a]));
    Eigen::VectorXd yw = y;
    if (w) {
      const Eigen::Map<const Eigen::VectorXd> wv(w, n);
      const Eigen::VectorXd sw = wv.array().sqrt();
      Xk = Xk.array().colwise() * sw.array();
      yw = y.array() * sw.array();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xk);
    sol.coef = qr.solve(yw);
    sol.bread = (Xk.transpose() * Xk).inverse();
  }
  return sol;
}

namespace {

Eigen::MatrixXd matrix_of(const DemeanCache& cache, const std::vector<std::string>& names,
                          std::size_t n) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto& v = cache.columns.at(names[j]);
    M.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(n));
  }
  return M;
}

Eigen::VectorXd vector_of(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd raw_scale(const Prepared& p, const std::vector<std::string>& names) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto& v = raw_column(p, names[j]);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += (p.weights.empty() ? 1.0 : p.weights[i]) * v[i] * v[i];
    s(static_cast<Eigen::Index>(j)) = acc;
  }
  return s;
}

Eigen::MatrixXd select_cols(const Eigen::MatrixXd& X, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t a = 0; a < cols.size(); ++a) out.col(static_cast<Eigen::Index>(a)) = X.col(static_cast<Eigen::Index>(cols[a]));
  return out;
}

// Free FE parameters; intercept-only dimensions need no group solver.
std::size_t fe_parameters(const Prepared& p) {
  if (p.fe.empty()) return 0;
  const bool simple = std::all_of(p.fe.begin(), p.fe.end(),
                                  [](const demean::FeDimension& d) { return d.intercept && d.slopes.empty(); });
  if (!simple) return demean::FeStructure(p.fe, p.weights).n_parameters();
  std::size_t total = 0;
  for (const auto& d : p.fe) total += d.n_groups;
  return total - (p.fe.size() - 1);
}

double wsum_sq(Eigen::Ref<const Eigen::VectorXd> r, const std::vector<double>& w) {
  if (w.empty()) return r.squaredNorm();
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) s += w[static_cast<std::size_t>(i)] * r(i) * r(i);
  return s;
}

double weighted_mean(const std::vector<double>& y, const std::vector<double>& w) {
  double sw = 0.0, s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    sw += wi;
    s += wi * y[i];
  }
  return s / sw;
}

void fill_common(FitResult& f, const Prepared& p, const FitOptions& opt) {
  f.model = p.model;
  f.depvar = p.y_name;
  f.sample_label = p.sample_label;
  f.family = opt.family;
  f.y = p.y;
  f.weights = p.weights;
  f.rows = p.rows;
  f.removed = p.mask.reason_counts;
  f.has_intercept = !p.x_names.empty() && p.x_names.front() == "(Intercept)";
  for (const auto& d : p.fe) {
    f.fe_names.push_back(d.name);
    f.fe_sizes.push_back(d.n_groups);
  }
  f.y_mean = weighted_mean(p.y, p.weights);
  double tss = 0.0;
  for (std::size_t i = 0; i < p.y.size(); ++i) {
    const double d = p.y[i] - f.y_mean;
    tss += (p.weights.empty() ? 1.0 : p.weights[i]) * d * d;
  }
  f.tss = tss;
}

void set_dof(FitResult& f, std::size_t n, std::size_t k_vars, std::size_t k_fe) {
  f.dof.n = n;
  f.dof.k_vars = k_vars;
  f.dof.k_fe = k_fe;
  if (n <= k_vars + k_fe)
    throw estimation_error("not enough observations: " + std::to_string(n) + " rows for " +
                           std::to_string(k_vars + k_fe) + " parameters");
  f.dof.df_resid = n - k_vars - k_fe;
}

Eigen::MatrixXd score_rows(const Eigen::MatrixXd& X, Eigen::Ref<const Eigen::VectorXd> r,
                           const std::vector<double>& w) {
  Eigen::VectorXd wr = r;
  if (!w.empty())
    for (Eigen::Index i = 0; i < r.size(); ++i) wr(i) *= w[static_cast<std::size_t>(i)];
  return X.array().colwise() * wr.array();
}

// Gaussian log-likelihood at the ML variance.
double gaussian_ll(double ssr, std::size_t n) {
  const double nn = static_cast<double>(n);
  return -0.5 * nn * (std::log(2.0 * M_PI) + std::log(ssr / nn) + 1.0);
}

std::vector<std::string> fe_coef_labels(const demean::FeDimension& d) {
  std::vector<std::string> out;
  if (d.intercept) out.push_back("(Intercept)");
  // Slope names are not stored on the dimension; the caller overrides.
  for (std::size_t l = 0; l < d.slopes.size(); ++l) out.push_back("slope" + std::to_string(l + 1));
  return out;
}

Fixef make_fixef(const Prepared& p, const demean::FeStructure& fs, const demean::FeCoefs& coef,
                 const data::Dataset* ds) {
  Fixef fx;
  fx.report = demean::recover_fixef(fs, coef);
  for (std::size_t q = 0; q < p.fe.size(); ++q) {
    fx.names.push_back(p.fe[q].name);
    auto labels = fe_coef_labels(p.fe[q]);
    const auto& term = p.model.fe[q];
    for (std::size_t l = 0; l < term.slopes.size(); ++l)
      labels[l + (term.intercept ? 1 : 0)] = term.slopes[l];
    fx.coef_labels.push_back(std::move(labels));
    std::vector<std::string> groups(p.fe[q].n_groups);
    if (ds) {
      auto idx = data::make_factor_index(*ds, p.mask, p.fe_factors[q]);
      for (std::uint32_t g = 0; g < idx.n_groups; ++g)
        groups[g] = data::group_label(*ds, p.rows, idx, p.fe_factors[q], g);
    } else {
      for (std::uint32_t g = 0; g < p.fe[q].n_groups; ++g) groups[g] = std::to_string(g + 1);
    }
    fx.group_labels.push_back(std::move(groups));
  }
  return fx;
}

// FE coefficients of y - X b, by demeaning with coefficients retained.
demean::FeCoefs fe_of_residual(const Prepared& p, const demean::FeStructure& fs,
                               const std::vector<std::string>& names, const std::vector<std::size_t>& kept,
                               const Eigen::VectorXd& coef, const demean::Options& opt,
                               const std::vector<double>& target) {
  std::vector<double> u = target;
  for (std::size_t a = 0; a < kept.size(); ++a) {
    const auto& x = raw_column(p, names[kept[a]]);
    const double b = coef(static_cast<Eigen::Index>(a));
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= b * x[i];
  }
  demean::Options o = opt;
  o.threads = 1;
  auto res = demean::demean(fs, std::vector<std::vector<double>>{u}, o, true);
  return res.fe_coef[0];
}

}  // namespace

FitResult fit_ols(const Prepared& p, const FitOptions& opt, const DemeanCache* cache) {
  DemeanCache local;
  if (!cache) {
    local = demean_columns(p, linear_targets(p), opt.demean);
    cache = &local;
  }
  FitResult f;
  fill_common(f, p, opt);
  const std::size_t n = p.y.size();
  const Eigen::MatrixXd X = matrix_of(*cache, p.x_names, n);
  const auto& yv = cache->columns.at(p.y_name);
  const Eigen::Map<const Eigen::VectorXd> yt(yv.data(), static_cast<Eigen::Index>(n));
  const auto sol = weighted_ls(X, yt, p.weights.empty() ? nullptr : p.weights.data(),
                               raw_scale(p, p.x_names), opt.collin_tol);
  if (sol.kept.empty() && !p.x_names.empty() && p.fe.empty())
    throw estimation_error("all regressors are collinear");
  for (auto j : sol.dropped) f.dropped_collinear.push_back(p.x_names[j]);
  for (auto j : sol.kept) f.coef_names.push_back(p.x_names[j]);
  f.coef = sol.coef;

  Eigen::MatrixXd Xsel;
  if (!sol.dropped.empty()) Xsel = select_cols(X, sol.kept);
  const Eigen::MatrixXd& Xk = sol.dropped.empty() ? X : Xsel;
  set_dof(f, n, sol.kept.size(), fe_parameters(p));

  f.residuals.resize(n);
  Eigen::Map<Eigen::VectorXd> r(f.residuals.data(), static_cast<Eigen::Index>(n));
  if (Xk.cols()) r.noalias() = yt - Xk * sol.coef;
  else r = yt;
  f.fitted.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.fitted[i] = p.y[i] - f.residuals[i];
  f.ssr = wsum_sq(r, p.weights);
  f.tss_within = wsum_sq(yt, p.weights);
  f.dispersion = f.ssr / static_cast<double>(f.dof.df_resid);
  f.deviance = f.ssr;
  f.null_deviance = f.tss;
  f.loglik = gaussian_ll(f.ssr, n);
  f.null_loglik = gaussian_ll(f.tss, n);
  summarize(*cache, linear_targets(p), f.demean_iterations, f.demean_sweeps, f.demean_converged);
  f.converged = f.demean_converged;
  if (!opt.only_coef) {
    f.bread = sol.bread;
    f.scores = score_rows(Xk, r, p.weights);
  }
  if (opt.keep_fixef && !p.fe.empty()) {
    const demean::FeStructure fs(p.fe, p.weights);
    const auto coef = fe_of_residual(p, fs, p.x_names, sol.kept, sol.coef, opt.demean, p.y);
    f.fixef = make_fixef(p, fs, coef, p.dataset);
  }
  return f;
}

FitResult fit_2sls(const Prepared& p, const FitOptions& opt, const DemeanCache* cache) {
  DemeanCache local;
  if (!cache) {
    local = demean_columns(p, linear_targets(p), opt.demean);
    cache = &local;
  }
  FitResult f;
  fill_common(f, p, opt);
  const std::size_t n = p.y.size();
  const double* w = p.weights.empty() ? nullptr : p.weights.data();
  const Eigen::MatrixXd Xe = matrix_of(*cache, p.x_names, n);
  const Eigen::MatrixXd E = matrix_of(*cache, p.endo_names, n);
  const Eigen::MatrixXd Z = matrix_of(*cache, p.inst_names, n);
  const Eigen::VectorXd yt = vector_of(cache->columns.at(p.y_name));
  std::size_t k_fe = 0;
  std::optional<demean::FeStructure> fs;
  if (!p.fe.empty()) {
    fs.emplace(p.fe, p.weights);
    k_fe = fs->n_parameters();
  }
  if (p.inst_names.size() < p.endo_names.size())
    throw estimation_error("under-identified: " + std::to_string(p.endo_names.size()) +
                           " endogenous variables but only " + std::to_string(p.inst_names.size()) +
                           " instruments");

  // First stages on [exogenous, instruments].
  std::vector<std::string> first_names = p.x_names;
  first_names.insert(first_names.end(), p.inst_names.begin(), p.inst_names.end());
  Eigen::MatrixXd F1(static_cast<Eigen::Index>(n), Xe.cols() + Z.cols());
  F1 << Xe, Z;
  const Eigen::VectorXd scale1 = raw_scale(p, first_names);
  const Eigen::VectorXd scale_x = raw_scale(p, p.x_names);
  IvDiag diag;
  diag.endo = p.endo_names;
  diag.instruments = p.inst_names;
  Eigen::MatrixXd Ehat(static_cast<Eigen::Index>(n), E.cols());
  for (Eigen::Index j = 0; j < E.cols(); ++j) {
    const Eigen::VectorXd e = E.col(j);
    const auto s1 = weighted_ls(F1, e, w, scale1, opt.collin_tol);
    std::size_t n_inst_kept = 0;
    for (auto c : s1.kept) n_inst_kept += c >= p.x_names.size();
    if (n_inst_kept < p.endo_names.size())
      throw estimation_error("instruments are collinear: the model is under-identified");
    const Eigen::MatrixXd F1k = select_cols(F1, s1.kept);
    Ehat.col(j) = F1k * s1.coef;
    const Eigen::VectorXd u = e - Ehat.col(j);
    FirstStage fsr;
    fsr.endo = p.endo_names[static_cast<std::size_t>(j)];
    for (auto c : s1.kept) fsr.coef_names.push_back(first_names[c]);
    fsr.coef = s1.coef;
    // Classical F-test of the instruments.
    const auto s0 = weighted_ls(Xe, e, w, scale_x, opt.collin_tol);
    const Eigen::MatrixXd X0 = select_cols(Xe, s0.kept);
    const Eigen::VectorXd u0 = X0.cols() ? Eigen::VectorXd(e - X0 * s0.coef) : e;
    const double ssr_u = wsum_sq(u, p.weights);
    const double ssr_r = wsum_sq(u0, p.weights);
    fsr.df1 = s1.kept.size() - s0.kept.size();
    fsr.df2 = n - k_fe - s1.kept.size();
    fsr.f_stat = ((ssr_r - ssr_u) / static_cast<double>(fsr.df1)) /
                 (ssr_u / static_cast<double>(fsr.df2));
    diag.first_stages.push_back(std::move(fsr));
  }

  // Second stage on [fitted endogenous, exogenous].
  std::vector<std::string> names2;
  for (const auto& e : p.endo_names) names2.push_back("fit_" + e);
  names2.insert(names2.end(), p.x_names.begin(), p.x_names.end());
  Eigen::MatrixXd X2(static_cast<Eigen::Index>(n), E.cols() + Xe.cols());
  X2 << Ehat, Xe;
  Eigen::MatrixXd Xorig(static_cast<Eigen::Index>(n), E.cols() + Xe.cols());
  Xorig << E, Xe;
  std::vector<std::string> raw_names2 = p.endo_names;
  raw_names2.insert(raw_names2.end(), p.x_names.begin(), p.x_names.end());
  const auto sol = weighted_ls(X2, yt, w, raw_scale(p, raw_names2), opt.collin_tol);
  for (auto j : sol.dropped) f.dropped_collinear.push_back(names2[j]);
  for (auto j : sol.kept) f.coef_names.push_back(names2[j]);
  f.coef = sol.coef;
  const Eigen::MatrixXd X2k = select_cols(X2, sol.kept);
  const Eigen::MatrixXd Xok = select_cols(Xorig, sol.kept);
  const Eigen::VectorXd r = yt - Xok * sol.coef;
  set_dof(f, n, sol.kept.size(), k_fe);

  // Wu-Hausman: first-stage residuals added to the structural OLS.
  {
    const Eigen::MatrixXd V = E - Ehat;
    Eigen::MatrixXd Xr(static_cast<Eigen::Index>(n), Xe.cols() + E.cols());
    Xr << Xe, E;
    Eigen::MatrixXd Xu(static_cast<Eigen::Index>(n), Xr.cols() + V.cols());
    Xu << Xr, V;
    std::vector<std::string> rn = p.x_names;
    rn.insert(rn.end(), p.endo_names.begin(), p.endo_names.end());
    Eigen::VectorXd sr = raw_scale(p, rn);
    Eigen::VectorXd su(Xu.cols());
    su << sr, sr.tail(E.cols());
    const auto fr = weighted_ls(Xr, yt, w, sr, opt.collin_tol);
    const auto fu = weighted_ls(Xu, yt, w, su, opt.collin_tol);
    const Eigen::MatrixXd Xrk = select_cols(Xr, fr.kept);
    const Eigen::MatrixXd Xuk = select_cols(Xu, fu.kept);
    const double ssr_r = wsum_sq(Xrk.cols() ? Eigen::VectorXd(yt - Xrk * fr.coef) : yt, p.weights);
    const double ssr_u = wsum_sq(Xuk.cols() ? Eigen::VectorXd(yt - Xuk * fu.coef) : yt, p.weights);
    diag.wh_df1 = fu.kept.size() - fr.kept.size();
    diag.wh_df2 = n - k_fe - fu.kept.size();
    diag.wh_stat = diag.wh_df1 == 0 ? 0.0
                                    : ((ssr_r - ssr_u) / static_cast<double>(diag.wh_df1)) /
                                          (ssr_u / static_cast<double>(diag.wh_df2));
  }
  f.iv = std::move(diag);

  f.residuals.assign(r.data(), r.data() + r.size());
  f.fitted.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.fitted[i] = p.y[i] - f.residuals[i];
  f.ssr = wsum_sq(r, p.weights);
  f.tss_within = wsum_sq(yt, p.weights);
  f.dispersion = f.ssr / static_cast<double>(f.dof.df_resid);
  f.deviance = f.ssr;
  f.null_deviance = f.tss;
  f.loglik = gaussian_ll(f.ssr, n);
  f.null_loglik = gaussian_ll(f.tss, n);
  summarize(*cache, linear_targets(p), f.demean_iterations, f.demean_sweeps, f.demean_converged);
  f.converged = f.demean_converged;
  if (!opt.only_coef) {
    f.bread = sol.bread;
    f.scores = score_rows(X2k, r, p.weights);
  }
  if (opt.keep_fixef && fs) {
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = p.y[i];
    // Structural residual uses the original endogenous values.
    for (std::size_t a = 0; a < sol.kept.size(); ++a) {
      const auto& x = raw_column(p, raw_names2[sol.kept[a]]);
      for (std::size_t i = 0; i < n; ++i) u[i] -= sol.coef(static_cast<Eigen::Index>(a)) * x[i];
    }
    demean::Options o = opt.demean;
    o.threads = 1;
    auto res = demean::demean(*fs, std::vector<std::vector<double>>{u}, o, true);
    f.fixef = make_fixef(p, *fs, res.fe_coef[0], p.dataset);
  }
  return f;
}

// ---------------------------------------------------------------------------
// GLM

namespace {

struct GlmFamily {
  Family f;

  double linkinv(double eta) const {
    switch (f) {
      case Family::Poisson: return std::exp(eta);
      case Family::Logit: return 1.0 / (1.0 + std::exp(-eta));
      default: return eta;
    }
  }
  double mu_eta(double mu) const {
    switch (f) {
      case Family::Poisson: return mu;
      case Family::Logit: return mu * (1.0 - mu);
      default: return 1.0;
    }
  }
  double variance(double mu) const { return mu_eta(mu); }
  double start(double y) const {
    switch (f) {
      case Family::Poisson: return std::log(y + 0.1);
      case Family::Logit: {
        const double m = (y + 0.5) / 2.0;
        return std::log(m / (1.0 - m));
      }
      default: return y;
    }
  }
  double unit_deviance(double y, double mu) const {
    switch (f) {
      case Family::Poisson: return 2.0 * ((y > 0.0 ? y * std::log(y / mu) : 0.0) - (y - mu));
      case Family::Logit:
        return -2.0 * (y > 0.5 ? std::log(mu) : std::log1p(-mu));
      default: return (y - mu) * (y - mu);
    }
  }
  double unit_loglik(double y, double mu) const {
    switch (f) {
      case Family::Poisson: return (y > 0.0 ? y * std::log(mu) : 0.0) - mu - std::lgamma(y + 1.0);
      case Family::Logit: return y > 0.5 ? std::log(mu) : std::log1p(-mu);
      default: return 0.0;
    }
  }
  double eta_bound() const { return f == Family::Logit ? 30.0 : 700.0; }
};

}  // namespace

FitResult fit_glm(const Prepared& p, const FitOptions& opt) {
  if (p.model.iv) throw invalid_argument("IV estimation is only available for OLS");
  const GlmFamily fam{opt.family};
  FitResult f;
  fill_common(f, p, opt);
  const std::size_t n = p.y.size();
  const std::size_t K = p.x_names.size();
  auto prior = [&](std::size_t i) { return p.weights.empty() ? 1.0 : p.weights[i]; };
  auto off = [&](std::size_t i) { return p.offset.empty() ? 0.0 : p.offset[i]; };

  std::vector<double> eta(n), mu(n), w(n), z(n);
  for (std::size_t i = 0; i < n; ++i) eta[i] = fam.start(p.y[i]) + off(i);
  auto deviance_of = [&](const std::vector<double>& e) {
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) d += prior(i) * fam.unit_deviance(p.y[i], fam.linkinv(e[i]));
    return d;
  };
  double dev = deviance_of(eta);

  Eigen::VectorXd scale(static_cast<Eigen::Index>(K));
  std::vector<demean::FeCoefs> warm;
  LsSolution sol;
  Eigen::MatrixXd Xt;
  demean::DemeanResult last;
  std::optional<demean::FeStructure> fs;
  bool converged = false;
  std::size_t it = 0;
  std::size_t dm_iter = 0, dm_sweeps = 0;
  bool dm_conv = true;

  while (it < opt.irls_max_iter) {
    ++it;
    for (std::size_t i = 0; i < n; ++i) {
      mu[i] = fam.linkinv(eta[i]);
      const double me = fam.mu_eta(mu[i]);
      w[i] = prior(i) * me * me / fam.variance(mu[i]);
      z[i] = eta[i] - off(i) + (p.y[i] - mu[i]) / me;
      if (!(w[i] > 0.0) || !std::isfinite(z[i]))
        throw estimation_error("IRLS weights degenerate: fitted probabilities or rates reached 0; "
                               "this usually indicates separation");
    }
    for (std::size_t j = 0; j < K; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += w[i] * p.x[j][i] * p.x[j][i];
      scale(static_cast<Eigen::Index>(j)) = s;
    }
    std::vector<std::vector<double>> targets;
    targets.push_back(z);
    for (const auto& x : p.x) targets.push_back(x);
    if (!p.fe.empty()) {
      fs.emplace(p.fe, w);
      last = demean::demean(*fs, targets, opt.demean, true, warm.empty() ? nullptr : &warm);
      warm = last.fe_coef;
      dm_iter += last.max_iterations();
      dm_sweeps += last.max_sweeps();
      dm_conv = dm_conv && last.all_converged();
    } else {
      last.residuals = targets;
    }
    const Eigen::VectorXd zt = vector_of(last.residuals[0]);
    Xt.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
    for (std::size_t j = 0; j < K; ++j)
      Xt.col(static_cast<Eigen::Index>(j)) = vector_of(last.residuals[j + 1]);
    sol = weighted_ls(Xt, zt, w.data(), scale, opt.collin_tol);
    const Eigen::MatrixXd Xk = select_cols(Xt, sol.kept);
    const Eigen::VectorXd r = Xk.cols() ? Eigen::VectorXd(zt - Xk * sol.coef) : zt;

    std::vector<double> eta_new(n);
    for (std::size_t i = 0; i < n; ++i) eta_new[i] = off(i) + z[i] - r(static_cast<Eigen::Index>(i));
    double dev_new = deviance_of(eta_new);
    for (int half = 0; half < 30 && (!std::isfinite(dev_new) || (it > 1 && dev_new > dev * (1.0 + 1e-10) + 1e-10)); ++half) {
      for (std::size_t i = 0; i < n; ++i) eta_new[i] = 0.5 * (eta_new[i] + eta[i]);
      dev_new = deviance_of(eta_new);
    }
    if (!std::isfinite(dev_new)) throw estimation_error("IRLS diverged: deviance is not finite");
    double eta_max = 0.0;
    for (double e : eta_new) eta_max = std::max(eta_max, std::fabs(e));
    if (eta_max > fam.eta_bound())
      throw estimation_error("IRLS diverged: linear predictor is unbounded, which indicates separation");
    const double change = std::fabs(dev_new - dev) / (0.1 + std::fabs(dev_new));
    eta = std::move(eta_new);
    dev = dev_new;
    if (change <= opt.glm_tol) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw estimation_error("IRLS did not converge in " + std::to_string(opt.irls_max_iter) + " iterations");

  for (auto j : sol.dropped) f.dropped_collinear.push_back(p.x_names[j]);
  for (auto j : sol.kept) f.coef_names.push_back(p.x_names[j]);
  f.coef = sol.coef;
  set_dof(f, n, sol.kept.size(), fs ? fs->n_parameters() : 0);

  f.fitted.resize(n);
  f.residuals.resize(n);
  Eigen::VectorXd resp(static_cast<Eigen::Index>(n));
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu[i] = fam.linkinv(eta[i]);
    f.fitted[i] = mu[i];
    f.residuals[i] = p.y[i] - mu[i];
    resp(static_cast<Eigen::Index>(i)) = p.y[i] - mu[i];
    ll += prior(i) * fam.unit_loglik(p.y[i], mu[i]);
  }
  f.working_weights = w;
  f.deviance = dev;
  f.ssr = wsum_sq(resp, p.weights);
  f.tss_within = NAN;
  double null_dev = 0.0, null_ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    null_dev += prior(i) * fam.unit_deviance(p.y[i], f.y_mean);
    null_ll += prior(i) * fam.unit_loglik(p.y[i], f.y_mean);
  }
  f.null_deviance = null_dev;
  if (opt.family == Family::Gaussian) {
    f.loglik = gaussian_ll(f.ssr, n);
    f.null_loglik = gaussian_ll(f.tss, n);
    f.dispersion = f.ssr / static_cast<double>(f.dof.df_resid);
  } else {
    f.loglik = ll;
    f.null_loglik = null_ll;
    f.dispersion = 1.0;
  }
  f.irls_iterations = it;
  f.demean_iterations = dm_iter;
  f.demean_sweeps = dm_sweeps;
  f.demean_converged = dm_conv;
  f.converged = converged && dm_conv;
  const Eigen::MatrixXd Xk = select_cols(Xt, sol.kept);
  if (!opt.only_coef) {
    f.bread = sol.bread;
    // Canonical links: score = x * prior weight * (y - mu).
    f.scores = score_rows(Xk, resp, p.weights);
  }
  if (opt.keep_fixef && fs) {
    demean::FeCoefs coef = last.fe_coef[0];
    for (std::size_t a = 0; a < sol.kept.size(); ++a) {
      const auto& cx = last.fe_coef[sol.kept[a] + 1];
      const double b = sol.coef(static_cast<Eigen::Index>(a));
      for (std::size_t q = 0; q < coef.size(); ++q)
        for (std::size_t s = 0; s < coef[q].size(); ++s) coef[q][s] -= b * cx[q][s];
    }
    f.fixef = make_fixef(p, *fs, coef, p.dataset);
  }
  return f;
}

FitResult fit_prepared(const Prepared& p, const FitOptions& opt, const DemeanCache* cache) {
  if (opt.family == Family::Ols) return p.model.iv ? fit_2sls(p, opt, cache) : fit_ols(p, opt, cache);
  return fit_glm(p, opt);
}

FitResult fit(const data::Dataset& ds, const formula::ModelSpec& model, const FitOptions& opt) {
  return fit_prepared(prepare(ds, model, opt), opt, nullptr);
}

}  // namespace fehd::est
