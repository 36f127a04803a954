#include "fehd/demean.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "fehd/error.hpp"

namespace fehd::demean {

// ---------------------------------------------------------------------------
// FeStructure

FeStructure::FeStructure(std::vector<FeDimension> dims, std::vector<double> weights)
    : dims_(std::move(dims)), w_(std::move(weights)) {
  n_ = dims_.empty() ? w_.size() : dims_[0].group.size();
  if (w_.empty()) w_.assign(n_, 1.0);
  if (w_.size() != n_) throw invalid_argument("weights length does not match the fixed effects");
  for (double w : w_)
    if (!(w > 0.0) || !std::isfinite(w)) throw invalid_argument("weights must be strictly positive");

  solvers_.resize(dims_.size());
  for (std::size_t q = 0; q < dims_.size(); ++q) {
    const auto& d = dims_[q];
    if (d.group.size() != n_) throw invalid_argument("fixed-effect dimensions differ in length");
    for (const auto& s : d.slopes)
      if (s.size() != n_) throw invalid_argument("slope variable length mismatch");
    if (d.n_coef() == 0) throw invalid_argument("fixed-effect dimension with no coefficient");
    Solver& sv = solvers_[q];
    sv.L = d.n_coef();
    sv.simple = d.intercept && d.slopes.empty();
    const std::size_t G = d.n_groups;
    if (sv.simple) {
      sv.wsum.assign(G, 0.0);
      for (std::size_t i = 0; i < n_; ++i) sv.wsum[d.group[i]] += w_[i];
      continue;
    }
    const std::size_t L = sv.L;
    std::vector<double> gram(G * L * L, 0.0);
    std::vector<double> zi(L);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t l = 0; l < L; ++l) zi[l] = z(q, i, l);
      double* m = gram.data() + static_cast<std::size_t>(d.group[i]) * L * L;
      for (std::size_t a = 0; a < L; ++a)
        for (std::size_t b = 0; b < L; ++b) m[a * L + b] += w_[i] * zi[a] * zi[b];
    }
    sv.lu.assign(G * L * L, 0.0);
    sv.piv.assign(G * L, 0);
    sv.kept.assign(G * L, -1);
    sv.n_kept.assign(G, 0);
    std::vector<double> a(L * L);
    for (std::size_t g = 0; g < G; ++g) {
      const double* m = gram.data() + g * L * L;
      double maxdiag = 0.0;
      for (std::size_t l = 0; l < L; ++l) maxdiag = std::max(maxdiag, std::fabs(m[l * L + l]));
      // Sequential Schur complements decide which coefficients are identified.
      std::copy(m, m + L * L, a.begin());
      std::vector<std::size_t> kept;
      for (std::size_t l = 0; l < L; ++l) {
        const double piv = a[l * L + l];
        if (maxdiag == 0.0 || piv <= 1e-12 * maxdiag) continue;
        kept.push_back(l);
        for (std::size_t r = l + 1; r < L; ++r) {
          const double f = a[r * L + l] / piv;
          for (std::size_t s = l; s < L; ++s) a[r * L + s] -= f * a[l * L + s];
        }
      }
      sv.n_dropped += L - kept.size();
      const std::size_t mk = kept.size();
      sv.n_kept[g] = static_cast<std::uint8_t>(mk);
      double* lu = sv.lu.data() + g * L * L;
      std::int32_t* piv = sv.piv.data() + g * L;
      for (std::size_t r = 0; r < mk; ++r) {
        sv.kept[g * L + r] = static_cast<std::int32_t>(kept[r]);
        for (std::size_t c = 0; c < mk; ++c) lu[r * mk + c] = m[kept[r] * L + kept[c]];
      }
      // LU with partial pivoting of the reduced system.
      for (std::size_t c = 0; c < mk; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < mk; ++r)
          if (std::fabs(lu[r * mk + c]) > std::fabs(lu[p * mk + c])) p = r;
        piv[c] = static_cast<std::int32_t>(p);
        if (p != c)
          for (std::size_t s = 0; s < mk; ++s) std::swap(lu[c * mk + s], lu[p * mk + s]);
        for (std::size_t r = c + 1; r < mk; ++r) {
          lu[r * mk + c] /= lu[c * mk + c];
          for (std::size_t s = c + 1; s < mk; ++s) lu[r * mk + s] -= lu[r * mk + c] * lu[c * mk + s];
        }
      }
    }
  }
}

bool FeStructure::coef_dropped(std::size_t q, std::uint32_t g, std::size_t l) const {
  const Solver& sv = solvers_[q];
  if (sv.simple) return false;
  for (std::size_t r = 0; r < sv.n_kept[g]; ++r)
    if (sv.kept[g * sv.L + r] == static_cast<std::int32_t>(l)) return false;
  return true;
}

std::size_t FeStructure::n_parameters() const {
  std::size_t total = 0;
  std::size_t n_int = 0;
  for (std::size_t q = 0; q < dims_.size(); ++q) {
    total += dims_[q].n_groups * dims_[q].n_coef() - solvers_[q].n_dropped;
    if (dims_[q].intercept) ++n_int;
  }
  return n_int > 1 ? total - (n_int - 1) : total;
}

void FeStructure::solve_group(std::size_t q, std::uint32_t g, double* rhs) const {
  const Solver& sv = solvers_[q];
  if (sv.simple) {
    rhs[0] /= sv.wsum[g];
    return;
  }
  const std::size_t L = sv.L;
  const std::size_t mk = sv.n_kept[g];
  double b[16];
  double* bp = L <= 16 ? b : nullptr;
  std::vector<double> heap;
  if (!bp) {
    heap.resize(L);
    bp = heap.data();
  }
  for (std::size_t r = 0; r < mk; ++r) bp[r] = rhs[sv.kept[g * L + r]];
  const double* lu = sv.lu.data() + g * L * L;
  const std::int32_t* piv = sv.piv.data() + g * L;
  for (std::size_t c = 0; c < mk; ++c) {
    std::swap(bp[c], bp[piv[c]]);
    for (std::size_t r = c + 1; r < mk; ++r) bp[r] -= lu[r * mk + c] * bp[c];
  }
  for (std::size_t c = mk; c-- > 0;) {
    for (std::size_t s = c + 1; s < mk; ++s) bp[c] -= lu[c * mk + s] * bp[s];
    bp[c] /= lu[c * mk + c];
  }
  for (std::size_t l = 0; l < L; ++l) rhs[l] = 0.0;
  for (std::size_t r = 0; r < mk; ++r) rhs[sv.kept[g * L + r]] = bp[r];
}

// ---------------------------------------------------------------------------
// Blocked solver: k columns advance in lockstep; coefficient arrays are laid
// out as [(g * L + l) * k + c].

namespace {

class Block {
 public:
  Block(const FeStructure& fs, std::size_t k) : fs_(fs), k_(k) {
    const std::size_t Q = fs.n_dims();
    size_.resize(Q);
    offset_.resize(Q, 0);
    std::size_t off = 0;
    for (std::size_t q = 0; q < Q; ++q) {
      size_[q] = fs.dim(q).n_groups * fs.dim(q).n_coef();
      if (q >= 1) {
        offset_[q] = off;
        off += size_[q];
      }
    }
    state_size_ = off;
    all_simple_ = true;
    for (std::size_t q = 0; q < Q; ++q)
      all_simple_ = all_simple_ && fs.dim(q).intercept && fs.dim(q).slopes.empty();
    const auto& w = fs.weights();
    unit_weights_ = std::all_of(w.begin(), w.end(), [](double v) { return v == 1.0; });
  }

  std::size_t state_size() const { return state_size_; }
  std::size_t k() const { return k_; }
  void set_k(std::size_t k) { k_ = k; }

  // Part of a state vector holding dimension q >= 1.
  std::size_t offset(std::size_t q) const { return offset_[q] * k_; }
  std::size_t dim_size(std::size_t q) const { return size_[q]; }

  // sy[q] = per-group weighted cross-products z'y.
  std::vector<std::vector<double>> cross_products(
      std::span<const std::span<const double>> cols) const {
    const std::size_t Q = fs_.n_dims();
    const auto& w = fs_.weights();
    std::vector<std::vector<double>> sy(Q);
    for (std::size_t q = 0; q < Q; ++q) {
      const auto& d = fs_.dim(q);
      const std::size_t L = d.n_coef();
      sy[q].assign(size_[q] * k_, 0.0);
      double* out = sy[q].data();
      if (d.intercept && d.slopes.empty()) {
        for (std::size_t i = 0; i < fs_.n_obs(); ++i) {
          double* o = out + static_cast<std::size_t>(d.group[i]) * k_;
          for (std::size_t c = 0; c < k_; ++c) o[c] += w[i] * cols[c][i];
        }
        continue;
      }
      for (std::size_t c = 0; c < k_; ++c) {
        const double* y = cols[c].data();
        for (std::size_t i = 0; i < fs_.n_obs(); ++i) {
          const std::size_t g = d.group[i];
          const double wy = w[i] * y[i];
          for (std::size_t l = 0; l < L; ++l)
            out[(g * L + l) * k_ + c] += (l == 0 && d.intercept ? 1.0 : fs_.z(q, i, l)) * wy;
        }
      }
    }
    return sy;
  }

  // New coefficients of dimension q given the others.
  void update(std::size_t q, const std::vector<const double*>& coef, const double* sy,
              double* out) {
    const auto& dq = fs_.dim(q);
    const std::size_t Lq = dq.n_coef();
    const std::size_t Q = fs_.n_dims();
    const std::size_t k = k_;
    const auto& w = fs_.weights();
    acc_.assign(size_[q] * k, 0.0);
    if (all_simple_) {
      update_simple(q, coef, sy, out);
      return;
    }
    other_.assign(k, 0.0);
    double* acc = acc_.data();
    double* other = other_.data();
    const bool q_simple = dq.intercept && dq.slopes.empty();
    for (std::size_t i = 0; i < fs_.n_obs(); ++i) {
      std::fill(other, other + k, 0.0);
      for (std::size_t p = 0; p < Q; ++p) {
        if (p == q) continue;
        const auto& dp = fs_.dim(p);
        const std::size_t Lp = dp.n_coef();
        const double* base = coef[p] + static_cast<std::size_t>(dp.group[i]) * Lp * k;
        if (dp.intercept && dp.slopes.empty()) {
          for (std::size_t c = 0; c < k; ++c) other[c] += base[c];
        } else {
          for (std::size_t l = 0; l < Lp; ++l) {
            const double zl = fs_.z(p, i, l);
            for (std::size_t c = 0; c < k; ++c) other[c] += zl * base[l * k + c];
          }
        }
      }
      const std::size_t g = dq.group[i];
      if (q_simple) {
        double* a = acc + g * k;
        const double wi = w[i];
        for (std::size_t c = 0; c < k; ++c) a[c] += wi * other[c];
      } else {
        for (std::size_t l = 0; l < Lq; ++l) {
          const double wz = w[i] * fs_.z(q, i, l);
          double* a = acc + (g * Lq + l) * k;
          for (std::size_t c = 0; c < k; ++c) a[c] += wz * other[c];
        }
      }
    }
    rhs_.resize(Lq);
    for (std::uint32_t g = 0; g < dq.n_groups; ++g) {
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t l = 0; l < Lq; ++l) {
          const std::size_t at = (g * Lq + l) * k + c;
          rhs_[l] = sy[at] - acc[at];
        }
        fs_.solve_group(q, g, rhs_.data());
        for (std::size_t l = 0; l < Lq; ++l) out[(g * Lq + l) * k + c] = rhs_[l];
      }
    }
  }

  // Intercept-only dimensions: the hot path, with no per-row slope lookups.
  void update_simple(std::size_t q, const std::vector<const double*>& coef, const double* sy,
                     double* out) {
    const std::size_t Q = fs_.n_dims();
    const std::size_t k = k_;
    const std::size_t n = fs_.n_obs();
    const double* w = fs_.weights().data();
    const std::uint32_t* gq = fs_.dim(q).group.data();
    double* acc = acc_.data();
    for (std::size_t p = 0; p < Q; ++p) {
      if (p == q) continue;
      const std::uint32_t* gp = fs_.dim(p).group.data();
      const double* cp = coef[p];
      if (unit_weights_) {
        for (std::size_t i = 0; i < n; ++i) {
          double* a = acc + static_cast<std::size_t>(gq[i]) * k;
          const double* b = cp + static_cast<std::size_t>(gp[i]) * k;
          for (std::size_t c = 0; c < k; ++c) a[c] += b[c];
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          double* a = acc + static_cast<std::size_t>(gq[i]) * k;
          const double* b = cp + static_cast<std::size_t>(gp[i]) * k;
          const double wi = w[i];
          for (std::size_t c = 0; c < k; ++c) a[c] += wi * b[c];
        }
      }
    }
    const std::uint32_t G = fs_.dim(q).n_groups;
    for (std::uint32_t g = 0; g < G; ++g) {
      const double wg = fs_.group_weight(q, g);
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t at = g * k + c;
        out[at] = (sy[at] - acc[at]) / wg;
      }
    }
  }

  // One Gauss-Seidel sweep: state (dims 2..Q) -> new state; dim 1 to alpha1.
  void sweep(const std::vector<std::vector<double>>& sy, const double* in, double* out,
             double* alpha1) {
    const std::size_t Q = fs_.n_dims();
    std::vector<const double*> coef(Q);
    coef[0] = alpha1;
    for (std::size_t p = 1; p < Q; ++p) coef[p] = in + offset(p);
    update(0, coef, sy[0].data(), alpha1);
    for (std::size_t q = 1; q < Q; ++q) {
      update(q, coef, sy[q].data(), out + offset(q));
      coef[q] = out + offset(q);
    }
  }

 private:
  const FeStructure& fs_;
  std::size_t k_;
  std::vector<std::size_t> size_;
  std::vector<std::size_t> offset_;
  std::size_t state_size_ = 0;
  bool all_simple_ = false;
  bool unit_weights_ = false;
  std::vector<double> acc_, other_, rhs_;
};

// Keeps columns flagged in `keep` of a [s * k + c] array.
void compact(std::vector<double>& v, std::size_t k, const std::vector<std::uint8_t>& keep,
             std::size_t k_new) {
  const std::size_t s_count = k == 0 ? 0 : v.size() / k;
  std::vector<double> out(s_count * k_new);
  for (std::size_t s = 0; s < s_count; ++s) {
    std::size_t cn = 0;
    for (std::size_t c = 0; c < k; ++c)
      if (keep[c]) out[s * k_new + cn++] = v[s * k + c];
  }
  v = std::move(out);
}

void extract(const std::vector<double>& v, std::size_t k, std::size_t c, std::vector<double>& out) {
  const std::size_t s_count = v.size() / k;
  out.resize(s_count);
  for (std::size_t s = 0; s < s_count; ++s) out[s] = v[s * k + c];
}

void run_chunk(const FeStructure& fs, std::span<const std::span<const double>> targets,
               std::size_t begin, std::size_t end, const Options& opt, bool keep_coef,
               const std::vector<FeCoefs>* warm, DemeanResult& res) {
  const std::size_t k0 = end - begin;
  const std::size_t Q = fs.n_dims();
  const std::size_t n = fs.n_obs();
  if (k0 == 0) return;
  auto cols = targets.subspan(begin, k0);

  if (Q == 0) {
    for (std::size_t c = 0; c < k0; ++c) {
      res.residuals[begin + c].assign(cols[c].begin(), cols[c].end());
      res.info[begin + c] = ColumnInfo{};
      if (keep_coef) res.fe_coef[begin + c] = {};
    }
    return;
  }

  Block blk(fs, k0);
  const auto sy_all = blk.cross_products(cols);
  const std::size_t S = blk.state_size();

  // Final dims 2..Q state of every column, column-major.
  std::vector<std::vector<double>> final_state(k0, std::vector<double>(S, 0.0));

  if (Q >= 2) {
    std::vector<double> X(S * k0, 0.0);
    if (warm) {
      for (std::size_t c = 0; c < k0; ++c) {
        const FeCoefs& wc = (*warm)[begin + c];
        if (wc.size() != Q) continue;
        for (std::size_t q = 1; q < Q; ++q)
          for (std::size_t s = 0; s < blk.dim_size(q); ++s)
            X[blk.offset(q) + s * k0 + c] = wc[q][s];
      }
    }
    auto sy = sy_all;
    std::vector<std::size_t> active(k0);
    for (std::size_t c = 0; c < k0; ++c) active[c] = c;
    std::vector<double> GX(S * k0), GGX(S * k0), alpha1;
    std::size_t iter = 0;
    std::size_t sweeps = 0;

    auto finish = [&](const std::vector<double>& from, const std::vector<std::uint8_t>& done,
                      bool converged, bool timed_out) {
      const std::size_t k = active.size();
      std::vector<std::uint8_t> keep(k, 1);
      std::size_t k_new = k;
      for (std::size_t c = 0; c < k; ++c) {
        if (!done[c]) continue;
        const std::size_t col = active[c];
        extract(from, k, c, final_state[col]);
        auto& info = res.info[begin + col];
        info.iterations = opt.accelerate ? iter : sweeps;
        info.sweeps = sweeps;
        info.converged = converged;
        info.timed_out = timed_out;
        keep[c] = 0;
        --k_new;
      }
      if (k_new == k) return;
      compact(X, k, keep, k_new);
      for (auto& v : sy) compact(v, k, keep, k_new);
      std::vector<std::size_t> next;
      for (std::size_t c = 0; c < k; ++c)
        if (keep[c]) next.push_back(active[c]);
      active = std::move(next);
      blk.set_k(k_new);
    };

    auto sup_diff = [&](const std::vector<double>& a, const std::vector<double>& b,
                        std::vector<std::uint8_t>& done) {
      const std::size_t k = active.size();
      std::vector<double> m(k, 0.0);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t c = 0; c < k; ++c)
          m[c] = std::max(m[c], std::fabs(a[s * k + c] - b[s * k + c]));
      done.assign(k, 0);
      bool any = false;
      for (std::size_t c = 0; c < k; ++c) {
        done[c] = m[c] <= opt.tol;
        any = any || done[c];
      }
      return any;
    };

    std::vector<std::uint8_t> done;
    while (!active.empty()) {
      const std::size_t k = active.size();
      alpha1.assign(blk.dim_size(0) * k, 0.0);
      GX.assign(S * k, 0.0);
      blk.sweep(sy, X.data(), GX.data(), alpha1.data());
      ++sweeps;
      if (sup_diff(GX, X, done)) {
        // Converged columns take GX as final; others keep iterating from X.
        std::vector<double> GXc = GX;
        finish(GX, done, true, false);
        std::vector<std::uint8_t> keep(done.size());
        for (std::size_t c = 0; c < done.size(); ++c) keep[c] = !done[c];
        compact(GXc, done.size(), keep, active.size());
        GX = std::move(GXc);
        if (active.empty()) break;
      }
      const std::size_t kk = active.size();
      const bool timeout = opt.deadline && std::chrono::steady_clock::now() > *opt.deadline;
      const bool capped = opt.accelerate ? iter >= opt.max_iter : sweeps >= opt.max_iter;
      if (timeout || capped) {
        finish(GX, std::vector<std::uint8_t>(kk, 1), false, timeout);
        break;
      }
      if (!opt.accelerate) {
        X = GX;
        continue;
      }
      GGX.assign(S * kk, 0.0);
      alpha1.assign(blk.dim_size(0) * kk, 0.0);
      blk.sweep(sy, GX.data(), GGX.data(), alpha1.data());
      ++sweeps;
      ++iter;
      // Irons-Tuck extrapolation per column.
      std::vector<double> vprod(kk, 0.0), ssq(kk, 0.0), dfsq(kk, 0.0), sup(kk, 0.0);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t c = 0; c < kk; ++c) {
          const std::size_t at = s * kk + c;
          const double dF = GGX[at] - GX[at];
          const double d2 = dF - (GX[at] - X[at]);
          vprod[c] += dF * d2;
          ssq[c] += d2 * d2;
          dfsq[c] += dF * dF;
          sup[c] = std::max(sup[c], std::fabs(dF));
        }
      for (std::size_t c = 0; c < kk; ++c) {
        const bool guard = ssq[c] < 1e-14 * (1.0 + dfsq[c]);
        const double coef = guard ? 0.0 : vprod[c] / ssq[c];
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t at = s * kk + c;
          X[at] = guard ? GGX[at] : GGX[at] - coef * (GGX[at] - GX[at]);
        }
      }
      done.assign(kk, 0);
      bool any = false;
      for (std::size_t c = 0; c < kk; ++c) {
        done[c] = sup[c] <= opt.tol;
        any = any || done[c];
      }
      if (any) finish(GGX, done, true, false);
    }
  } else {
    for (std::size_t c = 0; c < k0; ++c) res.info[begin + c] = ColumnInfo{};
  }

  // Final pass over all columns: dimension 1 in closed form, then residuals.
  blk.set_k(k0);
  std::vector<double> state(S * k0);
  for (std::size_t c = 0; c < k0; ++c)
    for (std::size_t s = 0; s < S; ++s) state[s * k0 + c] = final_state[c][s];
  std::vector<const double*> coef(Q);
  std::vector<double> alpha1(blk.dim_size(0) * k0, 0.0);
  coef[0] = alpha1.data();
  for (std::size_t p = 1; p < Q; ++p) coef[p] = state.data() + blk.offset(p);
  blk.update(0, coef, sy_all[0].data(), alpha1.data());

  std::vector<double*> rp(k0);
  for (std::size_t c = 0; c < k0; ++c) {
    auto& r = res.residuals[begin + c];
    r.assign(cols[c].begin(), cols[c].end());
    rp[c] = r.data();
  }
  for (std::size_t q = 0; q < Q; ++q) {
    const auto& d = fs.dim(q);
    const std::size_t L = d.n_coef();
    const double* a = coef[q];
    if (d.intercept && d.slopes.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* b = a + static_cast<std::size_t>(d.group[i]) * k0;
        for (std::size_t c = 0; c < k0; ++c) rp[c][i] -= b[c];
      }
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double* b = a + static_cast<std::size_t>(d.group[i]) * L * k0;
      for (std::size_t c = 0; c < k0; ++c) {
        double f = 0.0;
        for (std::size_t l = 0; l < L; ++l) f += fs.z(q, i, l) * b[l * k0 + c];
        rp[c][i] -= f;
      }
    }
  }
  for (std::size_t c = 0; c < k0; ++c) {
    if (keep_coef) {
      FeCoefs fc(Q);
      for (std::size_t q = 0; q < Q; ++q) {
        const std::size_t sz = blk.dim_size(q);
        fc[q].resize(sz);
        for (std::size_t s = 0; s < sz; ++s) fc[q][s] = coef[q][s * k0 + c];
      }
      res.fe_coef[begin + c] = std::move(fc);
    }
  }
}

}  // namespace

std::size_t DemeanResult::max_iterations() const {
  std::size_t m = 0;
  for (const auto& i : info) m = std::max(m, i.iterations);
  return m;
}

std::size_t DemeanResult::max_sweeps() const {
  std::size_t m = 0;
  for (const auto& i : info) m = std::max(m, i.sweeps);
  return m;
}

bool DemeanResult::all_converged() const {
  return std::all_of(info.begin(), info.end(), [](const ColumnInfo& i) { return i.converged; });
}

DemeanResult demean(const FeStructure& fs, std::span<const std::span<const double>> targets,
                    const Options& opt, bool keep_coef, const std::vector<FeCoefs>* warm_start) {
  if (!(opt.tol > 0.0)) throw invalid_argument("demeaning tolerance must be positive");
  for (const auto& t : targets)
    if (t.size() != fs.n_obs()) throw invalid_argument("target column length mismatch");
  if (warm_start && warm_start->size() != targets.size())
    throw invalid_argument("warm start must cover every target");
  const std::size_t k = targets.size();
  DemeanResult res;
  res.residuals.resize(k);
  res.info.resize(k);
  if (keep_coef) res.fe_coef.resize(k);

  const unsigned T = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(k)));
  if (T <= 1) {
    run_chunk(fs, targets, 0, k, opt, keep_coef, warm_start, res);
    return res;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(T);
  for (unsigned t = 0; t < T; ++t) {
    const std::size_t b = k * t / T;
    const std::size_t e = k * (t + 1) / T;
    workers.emplace_back([&, t, b, e] {
      try {
        run_chunk(fs, targets, b, e, opt, keep_coef, warm_start, res);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return res;
}

DemeanResult demean(const FeStructure& fs, const std::vector<std::vector<double>>& targets,
                    const Options& opt, bool keep_coef, const std::vector<FeCoefs>* warm_start) {
  std::vector<std::span<const double>> spans(targets.begin(), targets.end());
  return demean(fs, std::span<const std::span<const double>>(spans), opt, keep_coef, warm_start);
}

std::vector<double> irons_tuck_step(std::span<const double> x, std::span<const double> gx,
                                    std::span<const double> ggx) {
  double vprod = 0.0, ssq = 0.0, dfsq = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double dF = ggx[j] - gx[j];
    const double d2 = dF - (gx[j] - x[j]);
    vprod += dF * d2;
    ssq += d2 * d2;
    dfsq += dF * dF;
  }
  std::vector<double> out(ggx.begin(), ggx.end());
  if (ssq < 1e-14 * (1.0 + dfsq)) return out;
  const double coef = vprod / ssq;
  for (std::size_t j = 0; j < x.size(); ++j) out[j] -= coef * (ggx[j] - gx[j]);
  return out;
}

FixefReport recover_fixef(const FeStructure& fs, const FeCoefs& coef) {
  FixefReport rep;
  rep.coef = coef;
  const std::size_t Q = fs.n_dims();
  rep.dropped.resize(Q);
  for (std::size_t q = 0; q < Q; ++q) {
    const auto& d = fs.dim(q);
    const std::size_t L = d.n_coef();
    rep.dropped[q].assign(d.n_groups * L, 0);
    for (std::uint32_t g = 0; g < d.n_groups; ++g)
      for (std::size_t l = 0; l < L; ++l)
        if (fs.coef_dropped(q, g, l)) rep.dropped[q][g * L + l] = 1;
  }
  std::size_t ref = Q;
  for (std::size_t q = 0; q < Q; ++q)
    if (fs.dim(q).intercept) {
      ref = q;
      break;
    }
  rep.reference_dim = ref == Q ? 0 : ref;
  if (ref == Q) return rep;
  const std::size_t Lr = fs.dim(ref).n_coef();
  for (std::size_t q = ref + 1; q < Q; ++q) {
    const auto& d = fs.dim(q);
    if (!d.intercept || d.n_groups == 0) continue;
    const std::size_t L = d.n_coef();
    const double shift = rep.coef[q][0];
    for (std::uint32_t g = 0; g < d.n_groups; ++g) rep.coef[q][g * L] -= shift;
    for (std::uint32_t g = 0; g < fs.dim(ref).n_groups; ++g) rep.coef[ref][g * Lr] += shift;
    ++rep.n_normalized;
  }
  return rep;
}

std::vector<double> fe_fitted(const FeStructure& fs, const FeCoefs& coef) {
  std::vector<double> f(fs.n_obs(), 0.0);
  for (std::size_t q = 0; q < fs.n_dims(); ++q) {
    const auto& d = fs.dim(q);
    const std::size_t L = d.n_coef();
    for (std::size_t i = 0; i < fs.n_obs(); ++i)
      for (std::size_t l = 0; l < L; ++l)
        f[i] += fs.z(q, i, l) * coef[q][d.group[i] * L + l];
  }
  return f;
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FEHD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return std::max(1u, hw / 2);
}

}  // namespace fehd::demean
