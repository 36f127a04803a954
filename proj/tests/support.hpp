#pragma once

// Shared fixtures: dataset builders, random instances and dense oracles that
// share no code with the engine beyond Eigen.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fehd/data.hpp"
#include "fehd/estimators.hpp"
#include "fehd/formula.hpp"

namespace fehd::testing {

inline data::NumericColumn numeric(std::vector<double> v) {
  data::NumericColumn c;
  c.missing.assign(v.size(), 0);
  c.values = std::move(v);
  return c;
}

inline data::Dataset make_dataset(const std::vector<std::pair<std::string, std::vector<double>>>& cols) {
  data::Dataset ds;
  for (const auto& [name, v] : cols) ds.add_column(name, numeric(v));
  return ds;
}

inline double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Normwise relative gap: max |a - b| / max(1, max |b|).
inline double rel_gap(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return INFINITY;
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, max_abs(b));
}

inline double rel_gap(const std::vector<double>& a, const std::vector<double>& b) {
  return rel_gap(Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size())),
                 Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
}

inline double rel_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

// One fixed-effect dimension of a random instance.
struct FeDim {
  std::string factor;               // column holding the group id
  std::string slope;                // varying-slope column, "" for none
  std::vector<int> group;           // 0-based group of each row
  int n_groups = 0;
};

struct Instance {
  data::Dataset ds;
  std::string formula;
  std::vector<std::string> x_names;
  std::vector<double> y;
  std::vector<std::vector<double>> x;
  std::vector<FeDim> fe;
  std::map<std::string, std::vector<double>> slope_values;
  std::vector<double> weights;  // empty: unweighted
};

struct InstanceShape {
  std::size_t n_min = 80, n_max = 500;
  int fe_min = 1, fe_max = 3;
  int slopes_min = 0, slopes_max = 2;
  bool allow_weights = true;
  int k_x = 2;
};

// Groups are drawn densely (at least ~8 rows per group) so that the fixed
// effects form one connected design.
inline Instance random_instance(std::mt19937_64& rng, const InstanceShape& shape = {}) {
  std::uniform_int_distribution<std::size_t> dn(shape.n_min, shape.n_max);
  const std::size_t n = dn(rng);
  std::uniform_int_distribution<int> dq(shape.fe_min, shape.fe_max);
  const int Q = dq(rng);
  std::uniform_int_distribution<int> ds_(std::min(shape.slopes_min, Q), std::min(shape.slopes_max, Q));
  const int n_slopes = ds_(rng);
  std::normal_distribution<double> N01(0.0, 1.0);
  Instance ins;
  std::vector<std::pair<std::string, std::vector<double>>> cols;

  for (int q = 0; q < Q; ++q) {
    FeDim d;
    d.factor = "f" + std::to_string(q + 1);
    std::uniform_int_distribution<int> dg(2, std::max<int>(3, static_cast<int>(n / 12)));
    d.n_groups = dg(rng);
    std::uniform_int_distribution<int> pick(0, d.n_groups - 1);
    d.group.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.group[i] = i < static_cast<std::size_t>(d.n_groups) ? static_cast<int>(i) : pick(rng);
    std::shuffle(d.group.begin(), d.group.end(), rng);
    std::vector<double> gv(n);
    for (std::size_t i = 0; i < n; ++i) gv[i] = d.group[i] + 1;
    cols.emplace_back(d.factor, gv);
    if (q < n_slopes) {
      d.slope = "z" + std::to_string(q + 1);
      std::vector<double> z(n);
      for (auto& v : z) v = N01(rng);
      ins.slope_values[d.slope] = z;
      cols.emplace_back(d.slope, z);
    }
    ins.fe.push_back(std::move(d));
  }
  std::vector<std::vector<double>> fe_effect(Q);
  for (int q = 0; q < Q; ++q) {
    fe_effect[q].resize(ins.fe[q].n_groups * 2);
    for (auto& v : fe_effect[q]) v = N01(rng);
  }
  ins.x.assign(shape.k_x, std::vector<double>(n));
  for (int j = 0; j < shape.k_x; ++j) {
    ins.x_names.push_back("x" + std::to_string(j + 1));
    for (std::size_t i = 0; i < n; ++i)
      ins.x[j][i] = N01(rng) + 0.5 * fe_effect[0][ins.fe[0].group[i]];
    cols.emplace_back(ins.x_names.back(), ins.x[j]);
  }
  ins.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = N01(rng);
    for (int j = 0; j < shape.k_x; ++j) v += (j + 1) * 0.5 * ins.x[j][i];
    for (int q = 0; q < Q; ++q) {
      const auto& d = ins.fe[q];
      const int g = d.group[i];
      v += fe_effect[q][2 * g];
      if (!d.slope.empty()) v += fe_effect[q][2 * g + 1] * ins.slope_values[d.slope][i];
    }
    ins.y[i] = v;
  }
  cols.emplace_back("y", ins.y);
  std::bernoulli_distribution use_w(shape.allow_weights ? 0.5 : 0.0);
  if (use_w(rng)) {
    std::uniform_real_distribution<double> dw(0.2, 3.0);
    ins.weights.resize(n);
    for (auto& w : ins.weights) w = dw(rng);
    cols.emplace_back("w", ins.weights);
  }
  ins.ds = make_dataset(cols);

  ins.formula = "y ~ ";
  for (int j = 0; j < shape.k_x; ++j) ins.formula += (j ? " + " : "") + ins.x_names[j];
  ins.formula += " | ";
  for (int q = 0; q < Q; ++q) {
    ins.formula += (q ? " + " : "") + ins.fe[q].factor;
    if (!ins.fe[q].slope.empty()) ins.formula += "[" + ins.fe[q].slope + "]";
  }
  return ins;
}

// Dense design [X | FE dummies (and dummy x slope columns)].
inline Eigen::MatrixXd dummy_design(const Instance& ins, bool with_x = true) {
  const std::size_t n = ins.y.size();
  std::size_t cols = with_x ? ins.x.size() : 0;
  for (const auto& d : ins.fe) cols += d.n_groups * (d.slope.empty() ? 1 : 2);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
  Eigen::Index c = 0;
  if (with_x)
    for (const auto& xj : ins.x) {
      for (std::size_t i = 0; i < n; ++i) D(i, c) = xj[i];
      ++c;
    }
  for (const auto& d : ins.fe) {
    const int L = d.slope.empty() ? 1 : 2;
    for (std::size_t i = 0; i < n; ++i) {
      D(i, c + d.group[i] * L) = 1.0;
      if (L == 2) D(i, c + d.group[i] * L + 1) = ins.slope_values.at(d.slope)[i];
    }
    c += d.n_groups * L;
  }
  return D;
}

struct DenseOls {
  Eigen::VectorXd coef;       // all columns of the design
  Eigen::VectorXd residuals;  // y - D coef
  Eigen::Index rank = 0;
};

inline DenseOls dense_ols(const Eigen::MatrixXd& D, const Eigen::VectorXd& y, const std::vector<double>& w) {
  Eigen::VectorXd sw = Eigen::VectorXd::Ones(D.rows());
  for (std::size_t i = 0; i < w.size(); ++i) sw(static_cast<Eigen::Index>(i)) = std::sqrt(w[i]);
  const Eigen::MatrixXd A = sw.asDiagonal() * D;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(1e-10);  // must precede compute(): it fixes the rank
  cod.compute(A);
  DenseOls out;
  out.coef = cod.solve(sw.asDiagonal() * y);
  out.residuals = y - D * out.coef;
  out.rank = cod.rank();
  return out;
}

// Weighted residualization of the columns of X on D.
inline Eigen::MatrixXd dense_residualize(const Eigen::MatrixXd& D, const Eigen::MatrixXd& X,
                                         const std::vector<double>& w) {
  Eigen::VectorXd sw = Eigen::VectorXd::Ones(D.rows());
  for (std::size_t i = 0; i < w.size(); ++i) sw(static_cast<Eigen::Index>(i)) = std::sqrt(w[i]);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(1e-10);
  cod.compute(sw.asDiagonal() * D);
  const Eigen::MatrixXd B = cod.solve(sw.asDiagonal() * X);
  return X - D * B;
}

struct DenseGlm {
  Eigen::VectorXd coef;
  Eigen::VectorXd mu;
  int iterations = 0;
};

// Poisson IRLS with log link on a dense design; deviance change below 1e-14
// relative ends the loop.
inline DenseGlm dense_poisson(const Eigen::MatrixXd& D, const Eigen::VectorXd& y) {
  const Eigen::Index n = D.rows();
  Eigen::VectorXd mu = (y.array() + y.mean()) / 2.0;
  Eigen::VectorXd eta = mu.array().log();
  Eigen::VectorXd beta;
  double dev_old = INFINITY;
  DenseGlm out;
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd z = eta.array() + (y - mu).array() / mu.array();
    const Eigen::VectorXd sw = mu.array().sqrt();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(1e-12);
    cod.compute(sw.asDiagonal() * D);
    beta = cod.solve(sw.asDiagonal() * z);
    eta = D * beta;
    mu = eta.array().exp();
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      dev += 2.0 * ((y(i) > 0 ? y(i) * std::log(y(i) / mu(i)) : 0.0) - (y(i) - mu(i)));
    out.iterations = it + 1;
    if (std::fabs(dev - dev_old) <= 1e-14 * (std::fabs(dev) + 0.1)) break;
    dev_old = dev;
  }
  out.coef = beta;
  out.mu = mu;
  return out;
}

inline std::vector<formula::ModelSpec> models_of(const std::string& f) {
  return formula::expand_models(formula::parse_formula(f));
}

inline est::FitResult fit_formula(const data::Dataset& ds, const std::string& f, est::FitOptions opt = {}) {
  return est::fit(ds, models_of(f).front(), opt);
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace fehd::testing
