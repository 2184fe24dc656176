#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "panelpost/errors.hpp"
#include "panelpost/panel.hpp"
#include "panelpost/rng.hpp"

namespace panelpost {

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

// Per-coordinate multipliers on the l1 penalty. For the main regression:
// 1 on the x/lambda block, 1/sqrt(N) on the alpha block, 1/sqrt(M) on the
// gamma block.
struct PenaltyWeights {
  std::vector<double> w;

  static PenaltyWeights for_design(const DesignSystem& sys) {
    PenaltyWeights pw;
    const int p = sys.layout.p();
    pw.w.resize(p);
    for (int c = 0; c < p; ++c) pw.w[c] = sys.penalty_weight(c);
    return pw;
  }
};

struct SolverOptions {
  double tol = 1e-7;        // sup-norm coefficient change, relative
  int max_sweeps = 10000;
  double kkt_rel = 5e-7;    // post-convergence stationarity polish target
  bool newton_polish = true;  // exact active-set solve when sweeps stall
  bool track_objective = false;
};

struct LassoFit {
  std::vector<double> eta;
  std::vector<double> residuals;
  std::vector<int> active_set;  // sorted indices with eta != 0
  double mu = 0.0;
  double objective_value = 0.0;
  int sweeps = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // per sweep, when tracked
};

// A penalized regression instance: response y against sparse columns with
// per-column penalty weights. Columns are referenced, not owned.
struct LassoData {
  int n = 0;
  std::vector<const Column*> cols;
  std::vector<double> col_sq;
  std::vector<double> weights;
  std::vector<double> y;
  double kkt_scale = 0.0;  // cached 1 + ||Z'y||_inf; 0 means compute lazily

  int p() const { return static_cast<int>(cols.size()); }
};

inline LassoData make_main_problem(const DesignSystem& sys) {
  LassoData d;
  d.n = sys.n;
  const int p = sys.layout.p();
  d.cols.resize(p);
  for (int c = 0; c < p; ++c) d.cols[c] = &sys.cols[c];
  d.col_sq = sys.col_sq_norm;
  d.weights = PenaltyWeights::for_design(sys).w;
  d.y = sys.Y;
  return d;
}

namespace detail {

inline double objective(const LassoData& d, const std::vector<double>& eta,
                        const std::vector<double>& r, double mu) {
  double rss = 0.0;
  for (double v : r) rss += v * v;
  double pen = 0.0;
  for (int c = 0; c < d.p(); ++c) pen += d.weights[c] * std::fabs(eta[c]);
  return 0.5 * rss + mu * pen;
}

// One pass of cyclic coordinate descent over `order`; returns the largest
// coefficient change.
inline double cd_sweep(const LassoData& d, double mu, std::vector<double>& eta,
                       std::vector<double>& r, const std::vector<int>& order) {
  double max_step = 0.0;
  for (int c : order) {
    const double c2 = d.col_sq[c];
    if (c2 <= 0.0) {
      eta[c] = 0.0;
      continue;
    }
    const Column& col = *d.cols[c];
    double g = 0.0;
    for (std::size_t e = 0; e < col.rows.size(); ++e) {
      g += col.vals[e] * r[static_cast<std::size_t>(col.rows[e])];
    }
    const double z = g + c2 * eta[c];
    const double next = soft_threshold(z, mu * d.weights[c]) / c2;
    const double step = next - eta[c];
    if (step != 0.0) {
      for (std::size_t e = 0; e < col.rows.size(); ++e) {
        r[static_cast<std::size_t>(col.rows[e])] -= step * col.vals[e];
      }
      eta[c] = next;
      max_step = std::max(max_step, std::fabs(step));
    }
  }
  return max_step;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

inline void refresh_residuals(const LassoData& d, std::vector<double>& eta,
                              std::vector<double>& r) {
  r = d.y;
  for (int c = 0; c < d.p(); ++c) {
    const double v = eta[c];
    if (v == 0.0) continue;
    const Column& col = *d.cols[c];
    for (std::size_t e = 0; e < col.rows.size(); ++e) {
      r[static_cast<std::size_t>(col.rows[e])] -= v * col.vals[e];
    }
  }
}

// Exact stationarity solve on the current support: with the sign pattern s
// fixed, an interior optimum satisfies Z_A' Z_A b = Z_A' y - mu (w s)_A.
// Collinear dummy columns can make this system inconsistent or flip signs:
// the optimum then lies at a kink with a smaller support, so the smallest
// (crawling) coordinate is dropped and the solve repeated.
inline bool newton_polish_step(const LassoData& d, double mu,
                               std::vector<double>& eta,
                               std::vector<double>& r) {
  std::vector<int> active;
  for (int c = 0; c < d.p(); ++c) {
    if (eta[c] != 0.0) active.push_back(c);
  }
  const int max_drops = 16;
  for (int round = 0; round <= max_drops && !active.empty(); ++round) {
    const int a = static_cast<int>(active.size());
    Eigen::MatrixXd gram(a, a);
    Eigen::VectorXd rhs(a);
    for (int i = 0; i < a; ++i) {
      for (int j = i; j < a; ++j) {
        const double v = column_dot(*d.cols[active[i]], *d.cols[active[j]]);
        gram(i, j) = v;
        gram(j, i) = v;
      }
      const double s = eta[active[i]] > 0.0 ? 1.0 : -1.0;
      rhs(i) = column_dot_dense(*d.cols[active[i]], d.y) -
               mu * d.weights[active[i]] * s;
    }
    const Eigen::VectorXd b =
        gram.completeOrthogonalDecomposition().solve(rhs);
    const double resid_inf = (gram * b - rhs).lpNorm<Eigen::Infinity>();
    const double rhs_scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    bool sign_ok = true;
    for (int i = 0; i < a; ++i) {
      const double s = eta[active[i]] > 0.0 ? 1.0 : -1.0;
      if (b(i) * s < 0.0) sign_ok = false;
    }
    if (sign_ok && resid_inf <= 1e-10 * rhs_scale) {
      for (int i = 0; i < a; ++i) eta[active[i]] = b(i);
      refresh_residuals(d, eta, r);
      return true;
    }
    // drop the coordinate closest to the kink and retry
    int drop = 0;
    for (int i = 1; i < a; ++i) {
      if (std::fabs(eta[active[i]]) < std::fabs(eta[active[drop]])) drop = i;
    }
    eta[active[drop]] = 0.0;
    active.erase(active.begin() + drop);
  }
  refresh_residuals(d, eta, r);
  return false;
}

}  // namespace detail

struct KktReport {
  double max_inactive_violation = 0.0;  // (|Z_l'r| - mu*w_l)+ over inactive
  double max_active_violation = 0.0;    // |Z_l'r - mu*w_l*sign(eta_l)| over active
  double scale = 1.0;                   // 1 + ||Z'y||_inf

  double worst() const {
    return std::max(max_inactive_violation, max_active_violation);
  }
  bool pass(double rel_tol) const { return worst() <= rel_tol * scale; }
};

inline KktReport kkt_check(const LassoData& d, const LassoFit& fit) {
  KktReport rep;
  if (d.kkt_scale > 0.0) {
    rep.scale = d.kkt_scale;
  } else {
    double zty = 0.0;
    for (int c = 0; c < d.p(); ++c) {
      zty = std::max(zty, std::fabs(column_dot_dense(*d.cols[c], d.y)));
    }
    rep.scale = 1.0 + zty;
  }
  for (int c = 0; c < d.p(); ++c) {
    const double g = column_dot_dense(*d.cols[c], fit.residuals);
    const double bound = fit.mu * d.weights[c];
    if (fit.eta[c] != 0.0) {
      const double s = fit.eta[c] > 0.0 ? 1.0 : -1.0;
      rep.max_active_violation =
          std::max(rep.max_active_violation, std::fabs(g - bound * s));
    } else {
      rep.max_inactive_violation =
          std::max(rep.max_inactive_violation, std::fabs(g) - bound);
    }
  }
  rep.max_inactive_violation = std::max(rep.max_inactive_violation, 0.0);
  return rep;
}

// Minimizes 0.5*||y - Z eta||^2 + mu * sum_l w_l |eta_l| by cyclic
// coordinate descent with an active-set strategy. The half factor makes the
// stationarity condition Z_l'(y - Z eta) = mu w_l sign(eta_l) hold with no
// stray constants, which downstream identities rely on.
inline LassoFit fit_weighted_lasso(const LassoData& d, double mu,
                                   const SolverOptions& opts = {},
                                   const std::vector<double>* warm_eta = nullptr) {
  if (mu < 0.0) throw ArgError("fit_weighted_lasso: mu must be nonnegative");
  const int p = d.p();
  LassoFit fit;
  fit.mu = mu;
  fit.eta.assign(p, 0.0);
  if (warm_eta) {
    if (static_cast<int>(warm_eta->size()) != p) {
      throw ArgError("fit_weighted_lasso: warm start has wrong length");
    }
    fit.eta = *warm_eta;
  }
  fit.residuals = d.y;
  for (int c = 0; c < p; ++c) {
    const double v = fit.eta[c];
    if (v == 0.0) continue;
    const Column& col = *d.cols[c];
    for (std::size_t e = 0; e < col.rows.size(); ++e) {
      fit.residuals[static_cast<std::size_t>(col.rows[e])] -= v * col.vals[e];
    }
  }

  std::vector<int> all(p);
  for (int c = 0; c < p; ++c) all[c] = c;
  std::vector<int> active;

  const auto tol_at = [&] {
    return opts.tol * (1.0 + detail::max_abs(fit.eta));
  };
  const auto trace = [&] {
    if (opts.track_objective) {
      fit.objective_trace.push_back(
          detail::objective(d, fit.eta, fit.residuals, mu));
    }
  };

  bool coef_converged = false;
  int polish_at = 400;  // degenerate supports stall the sweeps; solve exactly
  while (fit.sweeps < opts.max_sweeps) {
    const double full_step = detail::cd_sweep(d, mu, fit.eta, fit.residuals, all);
    ++fit.sweeps;
    trace();
    if (full_step < tol_at()) {
      coef_converged = true;
      break;
    }
    active.clear();
    for (int c = 0; c < p; ++c) {
      if (fit.eta[c] != 0.0) active.push_back(c);
    }
    while (fit.sweeps < opts.max_sweeps) {
      const double step =
          detail::cd_sweep(d, mu, fit.eta, fit.residuals, active);
      ++fit.sweeps;
      trace();
      if (step < tol_at()) break;
    }
    if (opts.newton_polish && mu > 0.0 && fit.sweeps >= polish_at) {
      detail::refresh_residuals(d, fit.eta, fit.residuals);
      if (detail::newton_polish_step(d, mu, fit.eta, fit.residuals)) {
        const double step =
            detail::cd_sweep(d, mu, fit.eta, fit.residuals, all);
        ++fit.sweeps;
        trace();
        if (step < tol_at()) {
          coef_converged = true;
          break;
        }
      }
      polish_at = fit.sweeps + 800;
    }
  }

  // refresh residuals so they are exactly y - Z eta up to one accumulation
  detail::refresh_residuals(d, fit.eta, fit.residuals);

  // The sweeps above can stall on exactly collinear dummy columns (the flat
  // directions of the design). An exact solve on the settled support lands
  // machine-precision stationarity; a failed sign pattern falls back to
  // plain extra sweeps.
  bool kkt_ok = kkt_check(d, fit).pass(opts.kkt_rel);
  if (!kkt_ok && opts.newton_polish && mu > 0.0) {
    for (int round = 0; round < 6 && !kkt_ok; ++round) {
      detail::newton_polish_step(d, mu, fit.eta, fit.residuals);
      // settle coordinates the exact solve may have pushed across the dual
      // boundary, then recheck
      detail::cd_sweep(d, mu, fit.eta, fit.residuals, all);
      ++fit.sweeps;
      trace();
      kkt_ok = kkt_check(d, fit).pass(opts.kkt_rel);
    }
  }
  while (!kkt_ok && fit.sweeps < opts.max_sweeps) {
    detail::cd_sweep(d, mu, fit.eta, fit.residuals, all);
    ++fit.sweeps;
    trace();
    kkt_ok = kkt_check(d, fit).pass(opts.kkt_rel);
  }

  // final exactness pass: downstream stationarity identities (tau_sq, the
  // debias forms) want active-coordinate gradients at machine precision,
  // which one exact solve on the settled support delivers; kept only if it
  // improves the certificate
  if (kkt_ok && opts.newton_polish && mu > 0.0) {
    const KktReport before = kkt_check(d, fit);
    if (before.worst() > 1e-12 * before.scale) {
      std::vector<double> eta_backup = fit.eta;
      std::vector<double> resid_backup = fit.residuals;
      bool keep = detail::newton_polish_step(d, mu, fit.eta, fit.residuals);
      if (keep) keep = kkt_check(d, fit).worst() <= before.worst();
      if (!keep) {
        fit.eta = std::move(eta_backup);
        fit.residuals = std::move(resid_backup);
      }
    }
  }

  fit.converged = coef_converged && kkt_ok;
  fit.active_set.clear();
  for (int c = 0; c < p; ++c) {
    if (fit.eta[c] != 0.0) fit.active_set.push_back(c);
  }
  fit.objective_value = detail::objective(d, fit.eta, fit.residuals, mu);
  return fit;
}

// Largest penalty level with a nonzero solution: max_l |Z_l'y| / w_l.
inline double mu_max(const LassoData& d) {
  double m = 0.0;
  for (int c = 0; c < d.p(); ++c) {
    if (d.weights[c] <= 0.0 || d.cols[c]->nnz() == 0) continue;
    m = std::max(m, std::fabs(column_dot_dense(*d.cols[c], d.y)) / d.weights[c]);
  }
  return m;
}

// Log-spaced descending grid from mu_max down to ratio*mu_max.
inline std::vector<double> make_mu_grid(const LassoData& d, int size = 50,
                                        double ratio = 1e-4) {
  if (size < 1) throw ArgError("make_mu_grid: size must be >= 1");
  const double top = mu_max(d);
  if (top <= 0.0) return {0.0};
  std::vector<double> grid(size);
  if (size == 1) {
    grid[0] = top;
    return grid;
  }
  const double log_top = std::log(top);
  const double log_bot = std::log(top * ratio);
  for (int i = 0; i < size; ++i) {
    grid[i] = std::exp(log_top + (log_bot - log_top) * i / (size - 1));
  }
  return grid;
}

namespace detail {

// Unbiased bounded draw, written out so fold assignment does not depend on
// the standard library's std::shuffle implementation.
inline std::uint64_t bounded_u64(std::mt19937_64& g, std::uint64_t bound) {
  const std::uint64_t threshold = (0ULL - bound) % bound;
  for (;;) {
    const std::uint64_t r = g();
    if (r >= threshold) return r % bound;
  }
}

inline std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 g(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(bounded_u64(g, static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

// Rows of one cluster-CV fold removed from a LassoData problem, with enough
// bookkeeping to predict on the held-out rows.
struct FoldProblem {
  std::vector<Column> col_storage;
  LassoData data;
  std::vector<int> test_rows;  // original row indices

  FoldProblem(const LassoData& full, const std::vector<char>& in_test) {
    const int p = full.p();
    std::vector<int> row_map(full.n, -1);
    int n_train = 0;
    for (int r = 0; r < full.n; ++r) {
      if (!in_test[r]) {
        row_map[r] = n_train++;
      } else {
        test_rows.push_back(r);
      }
    }
    data.n = n_train;
    data.y.reserve(n_train);
    for (int r = 0; r < full.n; ++r) {
      if (!in_test[r]) data.y.push_back(full.y[r]);
    }
    col_storage.resize(p);
    data.cols.resize(p);
    data.col_sq.assign(p, 0.0);
    data.weights = full.weights;
    for (int c = 0; c < p; ++c) {
      const Column& src = *full.cols[c];
      Column& dst = col_storage[c];
      double sq = 0.0;
      for (std::size_t e = 0; e < src.rows.size(); ++e) {
        const int nr = row_map[src.rows[e]];
        if (nr >= 0) {
          dst.rows.push_back(nr);
          dst.vals.push_back(src.vals[e]);
          sq += src.vals[e] * src.vals[e];
        }
      }
      data.col_sq[c] = sq;
      data.cols[c] = &dst;
    }
    double zty = 0.0;
    for (int c = 0; c < p; ++c) {
      zty = std::max(zty, std::fabs(column_dot_dense(*data.cols[c], data.y)));
    }
    data.kkt_scale = 1.0 + zty;
  }

  FoldProblem(const FoldProblem&) = delete;
  FoldProblem& operator=(const FoldProblem&) = delete;
};

}  // namespace detail

// How a penalty is picked off the CV curve: the pooled-MSE minimizer, or
// the largest penalty whose error is within one standard error of it.
enum class CvRule { Min, OneSe };

struct CvResult {
  double mu = 0.0;      // pooled-MSE minimizer (ties to the larger mu)
  int best_index = 0;
  std::vector<double> grid;
  std::vector<double> cv_mse;  // pooled held-out MSE per grid point
  std::vector<double> cv_se;   // standard error of the CV estimate per point
  int folds = 0;

  // largest mu with cv_mse within one SE of the minimum
  double mu_one_se() const { return grid[one_se_index()]; }
  int one_se_index() const {
    const double cut = cv_mse[best_index] + cv_se[best_index];
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (cv_mse[g] <= cut) return static_cast<int>(g);
    }
    return best_index;
  }
  double mu_for(CvRule rule) const {
    return rule == CvRule::OneSe ? mu_one_se() : mu;
  }
};

// K-fold cross validation where folds partition (i,j) clusters, never rows.
// Fits a warm-started path down the grid on each training split and selects
// the grid value with the smallest pooled held-out squared error; ties go to
// the larger mu.
inline CvResult cv_select_mu(const LassoData& d,
                             const std::vector<int>& cluster_of_row,
                             int n_clusters, const std::vector<double>& grid,
                             int folds, std::uint64_t seed,
                             const SolverOptions& opts = {}) {
  if (grid.empty()) throw ArgError("cv_select_mu: empty mu grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) throw ArgError("cv_select_mu: grid values must be positive");
    if (i > 0 && !(grid[i] < grid[i - 1])) {
      throw ArgError("cv_select_mu: grid must be strictly descending");
    }
  }
  if (folds < 2) throw ArgError("cv_select_mu: need at least 2 folds");
  if (folds > n_clusters) {
    throw ArgError("cv_select_mu: more folds (" + std::to_string(folds) +
                   ") than clusters (" + std::to_string(n_clusters) + ")");
  }
  if (static_cast<int>(cluster_of_row.size()) != d.n) {
    throw ArgError("cv_select_mu: cluster map has wrong length");
  }

  std::vector<int> fold_of_cluster(n_clusters);
  const std::vector<int> perm = detail::shuffled_indices(n_clusters, seed);
  for (int pos = 0; pos < n_clusters; ++pos) {
    fold_of_cluster[perm[pos]] = pos % folds;
  }

  CvResult res;
  res.grid = grid;
  res.folds = folds;
  res.cv_mse.assign(grid.size(), 0.0);
  res.cv_se.assign(grid.size(), 0.0);

  std::vector<double> sse(grid.size(), 0.0);
  std::vector<std::vector<double>> fold_mse(
      grid.size(), std::vector<double>(folds, 0.0));
  std::vector<double> yhat;
  for (int f = 0; f < folds; ++f) {
    std::vector<char> in_test(d.n, 0);
    for (int r = 0; r < d.n; ++r) {
      in_test[r] = fold_of_cluster[cluster_of_row[r]] == f ? 1 : 0;
    }
    detail::FoldProblem fold(d, in_test);
    std::vector<int> test_pos(d.n, -1);
    for (std::size_t s = 0; s < fold.test_rows.size(); ++s) {
      test_pos[fold.test_rows[s]] = static_cast<int>(s);
    }
    // held-out prediction error is insensitive to the last digits of the
    // path fits; run them at a slightly relaxed tolerance
    SolverOptions path_opts = opts;
    path_opts.tol = std::max(opts.tol, 1e-6);
    path_opts.kkt_rel = std::max(opts.kkt_rel, 2e-5);
    path_opts.newton_polish = false;
    std::vector<double> warm(d.p(), 0.0);
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      const LassoFit fit =
          fit_weighted_lasso(fold.data, grid[gi], path_opts, &warm);
      warm = fit.eta;
      yhat.assign(fold.test_rows.size(), 0.0);
      for (int c : fit.active_set) {
        const Column& col = *d.cols[c];
        const double v = fit.eta[c];
        for (std::size_t e = 0; e < col.rows.size(); ++e) {
          const int tp = test_pos[col.rows[e]];
          if (tp >= 0) yhat[tp] += v * col.vals[e];
        }
      }
      double fold_sse = 0.0;
      for (std::size_t s = 0; s < fold.test_rows.size(); ++s) {
        const double err = d.y[fold.test_rows[s]] - yhat[s];
        fold_sse += err * err;
      }
      sse[gi] += fold_sse;
      fold_mse[gi][f] =
          fold.test_rows.empty() ? 0.0 : fold_sse / fold.test_rows.size();
    }
  }

  int best = 0;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    res.cv_mse[gi] = sse[gi] / d.n;
    if (res.cv_mse[gi] < res.cv_mse[best]) best = static_cast<int>(gi);
    double mean = 0.0;
    for (int f = 0; f < folds; ++f) mean += fold_mse[gi][f];
    mean /= folds;
    double var = 0.0;
    for (int f = 0; f < folds; ++f) {
      const double dlt = fold_mse[gi][f] - mean;
      var += dlt * dlt;
    }
    res.cv_se[gi] = std::sqrt(var / (folds - 1)) / std::sqrt(double(folds));
  }
  res.best_index = best;
  res.mu = grid[best];
  return res;
}

}  // namespace panelpost
