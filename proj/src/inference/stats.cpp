#include <algorithm>
#include <cmath>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "fehd/error.hpp"
#include "fehd/inference.hpp"

namespace fehd::inf {

namespace {

double two_sided_p(double stat, bool t, double df) {
  if (std::isnan(stat)) return NAN;
  if (std::isinf(stat)) return 0.0;
  const double a = std::fabs(stat);
  if (t) return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), a));
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), a));
}

double f_pvalue(double f, double df1, double df2) {
  if (!std::isfinite(f) || f < 0.0 || df1 <= 0.0 || df2 <= 0.0) return NAN;
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f(df1, df2), f));
}

Stat f_stat(double value, std::size_t df1, std::size_t df2) {
  Stat s;
  s.value = value;
  s.p = f_pvalue(value, static_cast<double>(df1), static_cast<double>(df2));
  s.df = std::make_pair(static_cast<double>(df1), static_cast<double>(df2));
  return s;
}

Stat plain(double v) {
  Stat s;
  s.value = v;
  return s;
}

bool has_constant(const est::FitResult& f) { return f.has_intercept || !f.fe_names.empty(); }

}  // namespace

bool uses_t(const est::FitResult& fit) {
  return fit.family == est::Family::Ols || fit.family == est::Family::Gaussian;
}

std::vector<CoefRow> coef_table(const est::FitResult& fit, const VcovMatrix& v) {
  std::vector<CoefRow> rows;
  const bool t = uses_t(fit);
  for (Eigen::Index j = 0; j < fit.coef.size(); ++j) {
    CoefRow r;
    r.name = fit.coef_names[static_cast<std::size_t>(j)];
    r.estimate = fit.coef(j);
    r.se = std::sqrt(std::max(v.matrix(j, j), 0.0));
    r.stat = r.estimate / r.se;
    r.p = two_sided_p(r.stat, t, static_cast<double>(fit.dof.df_resid));
    rows.push_back(std::move(r));
  }
  return rows;
}

bool is_fit_stat(std::string_view name) {
  return std::any_of(std::begin(kFitStatNames), std::end(kFitStatNames),
                     [&](const char* s) { return name == s; });
}

std::vector<std::string> default_fit_stats(est::Family family) {
  if (family == est::Family::Ols) return {"n", "r2", "wr2"};
  return {"n", "ll", "bic", "apr2", "sq.cor"};
}

std::vector<std::pair<std::string, Stat>> fit_stats(const est::FitResult& fit, const VcovMatrix& v,
                                                    const std::vector<std::string>& names) {
  std::vector<std::pair<std::string, Stat>> out;
  const double n = static_cast<double>(fit.dof.n);
  const double k = static_cast<double>(fit.dof.k_total());
  const double r2 = 1.0 - fit.ssr / fit.tss;
  for (const auto& name : names) {
    if (name == "n") {
      out.emplace_back(name, plain(n));
    } else if (name == "r2") {
      out.emplace_back(name, plain(r2));
    } else if (name == "ar2") {
      const double base = has_constant(fit) ? n - 1.0 : n;
      out.emplace_back(name, plain(1.0 - (1.0 - r2) * base / (n - k)));
    } else if (name == "wr2") {
      const bool defined = !fit.fe_names.empty() && std::isfinite(fit.tss_within);
      out.emplace_back(name, plain(defined ? 1.0 - fit.ssr / fit.tss_within : NAN));
    } else if (name == "pr2") {
      out.emplace_back(name, plain(1.0 - fit.loglik / fit.null_loglik));
    } else if (name == "apr2") {
      out.emplace_back(name, plain(1.0 - (fit.loglik - k) / fit.null_loglik));
    } else if (name == "rmse") {
      out.emplace_back(name, plain(std::sqrt(fit.ssr / n)));
    } else if (name == "ll") {
      out.emplace_back(name, plain(fit.loglik));
    } else if (name == "bic") {
      out.emplace_back(name, plain(-2.0 * fit.loglik + k * std::log(n)));
    } else if (name == "sq.cor") {
      double my = 0.0, mf = 0.0;
      for (std::size_t i = 0; i < fit.y.size(); ++i) {
        my += fit.y[i];
        mf += fit.fitted[i];
      }
      my /= n;
      mf /= n;
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (std::size_t i = 0; i < fit.y.size(); ++i) {
        const double a = fit.y[i] - my, b = fit.fitted[i] - mf;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
      }
      out.emplace_back(name, plain(sxy * sxy / (sxx * syy)));
    } else if (name == "my") {
      out.emplace_back(name, plain(fit.y_mean));
    } else if (name == "wald") {
      std::vector<Eigen::Index> idx;
      for (std::size_t j = 0; j < fit.coef_names.size(); ++j)
        if (fit.coef_names[j] != "(Intercept)") idx.push_back(static_cast<Eigen::Index>(j));
      if (idx.empty()) {
        out.emplace_back(name, plain(NAN));
        continue;
      }
      const auto q = static_cast<Eigen::Index>(idx.size());
      Eigen::VectorXd b(q);
      Eigen::MatrixXd V(q, q);
      for (Eigen::Index a = 0; a < q; ++a) {
        b(a) = fit.coef(idx[static_cast<std::size_t>(a)]);
        for (Eigen::Index c = 0; c < q; ++c)
          V(a, c) = v.matrix(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(c)]);
      }
      const double w = b.dot(V.ldlt().solve(b)) / static_cast<double>(q);
      out.emplace_back(name, f_stat(w, static_cast<std::size_t>(q), fit.dof.df_resid));
    } else if (name == "ivf") {
      if (!fit.iv) {
        out.emplace_back(name, plain(NAN));
        continue;
      }
      const bool many = fit.iv->first_stages.size() > 1;
      for (const auto& fs : fit.iv->first_stages)
        out.emplace_back(many ? "ivf::" + fs.endo : "ivf", f_stat(fs.f_stat, fs.df1, fs.df2));
    } else if (name == "wh") {
      if (!fit.iv) {
        out.emplace_back(name, plain(NAN));
        continue;
      }
      out.emplace_back(name, f_stat(fit.iv->wh_stat, fit.iv->wh_df1, fit.iv->wh_df2));
    } else {
      throw invalid_argument("unknown fit statistic '" + name +
                             "' (known: n, r2, ar2, wr2, pr2, rmse, ll, bic, apr2, sq.cor, wald, ivf, wh, my)");
    }
  }
  return out;
}

double t_quantile(double p, double df) {
  return boost::math::quantile(boost::math::students_t(df), p);
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

}  // namespace fehd::inf
