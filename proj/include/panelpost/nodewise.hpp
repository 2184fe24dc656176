#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "panelpost/errors.hpp"
#include "panelpost/lasso.hpp"
#include "panelpost/panel.hpp"
#include "panelpost/parallel.hpp"
#include "panelpost/rng.hpp"

namespace panelpost {

// One row of the approximate inverse Gram matrix: 1/tau_sq at position ell
// and -phi_hat_j/tau_sq on the other coordinates.
struct PrecisionRow {
  int ell = 0;
  std::vector<double> phi_hat;  // length p-1, coordinates of Z_{-ell}
  double tau_sq = 0.0;
  double mu_node = 0.0;
  std::vector<int> theta_idx;   // ascending column indices in [0,p)
  std::vector<double> theta_val;

  std::size_t nnz() const { return theta_idx.size(); }

  void densify(std::vector<double>& out, int p) const {
    out.assign(p, 0.0);
    for (std::size_t e = 0; e < theta_idx.size(); ++e) {
      out[theta_idx[e]] = theta_val[e];
    }
  }
};

// The regression of column ell on all the other columns, with the same
// block penalty weights as the main problem (position ell removed).
inline LassoData make_nodewise_problem(const DesignSystem& sys, int ell) {
  const int p = sys.layout.p();
  if (ell < 0 || ell >= p) {
    throw ArgError("nodewise: column " + std::to_string(ell) +
                   " out of range [0," + std::to_string(p) + ")");
  }
  if (sys.col_sq_norm[ell] <= 0.0) {
    throw NumericError("nodewise: degenerate (all-zero) target column " +
                       sys.layout.name_of(ell));
  }
  LassoData d;
  d.n = sys.n;
  d.y.assign(sys.n, 0.0);
  const Column& target = sys.cols[ell];
  for (std::size_t e = 0; e < target.rows.size(); ++e) {
    d.y[static_cast<std::size_t>(target.rows[e])] = target.vals[e];
  }
  d.cols.reserve(p - 1);
  d.col_sq.reserve(p - 1);
  d.weights.reserve(p - 1);
  for (int c = 0; c < p; ++c) {
    if (c == ell) continue;
    d.cols.push_back(&sys.cols[c]);
    d.col_sq.push_back(sys.col_sq_norm[c]);
    d.weights.push_back(sys.penalty_weight(c));
  }
  return d;
}

inline LassoFit fit_nodewise(const DesignSystem& sys, int ell, double mu_node,
                             const SolverOptions& opts = {},
                             const std::vector<double>* warm = nullptr) {
  const LassoData d = make_nodewise_problem(sys, ell);
  return fit_weighted_lasso(d, mu_node, opts, warm);
}

// tau_sq in its defining (penalized-norm) form:
//   (1/NM) ||Z_l - Z_{-l} phi||^2 + (mu_node/NM) sum_j w_j |phi_j|.
inline double tau_sq(const DesignSystem& sys, int ell, const LassoFit& node_fit,
                     double mu_node) {
  double rss = 0.0;
  for (double v : node_fit.residuals) rss += v * v;
  double pen = 0.0;
  const int p = sys.layout.p();
  for (int m = 0; m < p - 1; ++m) {
    if (node_fit.eta[m] == 0.0) continue;
    const int orig = m < ell ? m : m + 1;
    pen += sys.penalty_weight(orig) * std::fabs(node_fit.eta[m]);
  }
  const double val = (rss + mu_node * pen) / sys.nm();
  if (!(val > 0.0)) {
    throw NumericError("nodewise: tau_sq is not positive for column " +
                       sys.layout.name_of(ell) +
                       " (column numerically in the span of the others)");
  }
  return val;
}

// The same quantity through the stationarity identity
// (Z_l - Z_{-l} phi)' Z_l / NM; equals tau_sq exactly at a solution.
inline double tau_sq_inner_product(const DesignSystem& sys, int ell,
                                   const LassoFit& node_fit) {
  const Column& target = sys.cols[ell];
  double dot = 0.0;
  for (std::size_t e = 0; e < target.rows.size(); ++e) {
    dot += target.vals[e] *
           node_fit.residuals[static_cast<std::size_t>(target.rows[e])];
  }
  return dot / sys.nm();
}

inline PrecisionRow build_theta_row(const DesignSystem& sys, int ell,
                                    const LassoFit& node_fit, double tau_sq_val,
                                    double mu_node) {
  if (!(tau_sq_val > 0.0)) {
    throw NumericError("nodewise: tau_sq must be positive for column " +
                       sys.layout.name_of(ell));
  }
  const int p = sys.layout.p();
  PrecisionRow row;
  row.ell = ell;
  row.tau_sq = tau_sq_val;
  row.mu_node = mu_node;
  row.phi_hat = node_fit.eta;
  const double inv_tau = 1.0 / tau_sq_val;
  bool placed_ell = false;
  for (int m = 0; m < p - 1; ++m) {
    const int orig = m < ell ? m : m + 1;
    if (!placed_ell && orig > ell) {
      row.theta_idx.push_back(ell);
      row.theta_val.push_back(inv_tau);
      placed_ell = true;
    }
    if (node_fit.eta[m] != 0.0) {
      row.theta_idx.push_back(orig);
      row.theta_val.push_back(-node_fit.eta[m] * inv_tau);
    }
  }
  if (!placed_ell) {
    row.theta_idx.push_back(ell);
    row.theta_val.push_back(inv_tau);
  }
  return row;
}

inline CvResult select_mu_node(const DesignSystem& sys, int ell,
                               const std::vector<double>& grid, int folds,
                               std::uint64_t seed,
                               const SolverOptions& opts = {}) {
  const LassoData d = make_nodewise_problem(sys, ell);
  std::vector<int> cluster_of_row(sys.n);
  for (int r = 0; r < sys.n; ++r) cluster_of_row[r] = sys.cluster_of_row(r);
  return cv_select_mu(d, cluster_of_row, sys.num_clusters(), grid, folds, seed,
                      opts);
}

struct NodewiseConfig {
  std::optional<double> mu_node;      // fixed value; skips CV
  std::vector<double> mu_node_grid;   // explicit CV grid, else constructed
  int grid_size = 50;
  double grid_ratio = 1e-4;
  int folds = 5;
  CvRule cv_rule = CvRule::Min;
  bool shared_mu = false;  // CV once on the first target, reuse for the rest
  std::uint64_t seed = 0;
  unsigned workers = 1;
  SolverOptions solver;
};

// Rows for the requested target columns. Problems for distinct targets are
// independent; they run in parallel and land in per-target slots.
inline std::vector<PrecisionRow> compute_precision_rows(
    const DesignSystem& sys, const std::vector<int>& targets,
    const NodewiseConfig& cfg = {}) {
  std::vector<PrecisionRow> rows(targets.size());
  if (targets.empty()) return rows;

  std::optional<double> shared_mu;
  if (!cfg.mu_node && cfg.shared_mu) {
    const int ell0 = targets.front();
    const std::vector<double> grid =
        cfg.mu_node_grid.empty()
            ? make_mu_grid(make_nodewise_problem(sys, ell0), cfg.grid_size,
                           cfg.grid_ratio)
            : cfg.mu_node_grid;
    shared_mu = select_mu_node(sys, ell0, grid, cfg.folds,
                               derive_seed(cfg.seed, 0x6e6f6465, ell0),
                               cfg.solver)
                    .mu_for(cfg.cv_rule);
  }

  parallel_for(targets.size(), cfg.workers, [&](std::size_t ti) {
    const int ell = targets[ti];
    double mu;
    if (cfg.mu_node) {
      mu = *cfg.mu_node;
    } else if (shared_mu) {
      mu = *shared_mu;
    } else {
      const std::vector<double> grid =
          cfg.mu_node_grid.empty()
              ? make_mu_grid(make_nodewise_problem(sys, ell), cfg.grid_size,
                             cfg.grid_ratio)
              : cfg.mu_node_grid;
      mu = select_mu_node(sys, ell, grid, cfg.folds,
                          derive_seed(cfg.seed, 0x6e6f6465, ell), cfg.solver)
               .mu_for(cfg.cv_rule);
    }
    const LassoFit fit = fit_nodewise(sys, ell, mu, cfg.solver);
    const double tau = tau_sq(sys, ell, fit, mu);
    rows[ti] = build_theta_row(sys, ell, fit, tau, mu);
  });
  return rows;
}

}  // namespace panelpost
