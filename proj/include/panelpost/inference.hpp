#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "panelpost/errors.hpp"
#include "panelpost/lasso.hpp"
#include "panelpost/nodewise.hpp"
#include "panelpost/panel.hpp"
#include "panelpost/rng.hpp"

namespace panelpost {

// Cluster scores g_ij = sum_t Z_ijt e_ijt, kept in factored form. The
// cluster-robust matrix Omega = (1/NM) sum_ij g_ij g_ij' is only ever
// applied as a quadratic form unless explicitly materialized.
struct ClusterScores {
  int n_clusters = 0;
  int p = 0;
  double nm = 0.0;
  // per cluster: (column, score) pairs with ascending column index
  std::vector<std::vector<std::pair<int, double>>> scores;

  // xi' Omega xi = (1/NM) sum_ij (xi' g_ij)^2
  double quadratic_form(const std::vector<double>& xi_dense) const {
    double acc = 0.0;
    for (const auto& g : scores) {
      double dot = 0.0;
      for (const auto& [c, v] : g) dot += xi_dense[c] * v;
      acc += dot * dot;
    }
    return acc / nm;
  }
};

inline ClusterScores cluster_robust_omega(const DesignSystem& sys,
                                          const std::vector<double>& residuals) {
  if (static_cast<int>(residuals.size()) != sys.n) {
    throw ArgError("cluster_robust_omega: residual length " +
                   std::to_string(residuals.size()) + " != rows " +
                   std::to_string(sys.n));
  }
  ClusterScores out;
  out.n_clusters = sys.num_clusters();
  out.p = sys.layout.p();
  out.nm = sys.nm();
  out.scores.resize(out.n_clusters);
  const int T = sys.layout.T;
  for (int c = 0; c < out.p; ++c) {
    const Column& col = sys.cols[c];
    std::size_t e = 0;
    while (e < col.rows.size()) {
      const int cl = col.rows[e] / T;
      double sum = 0.0;
      while (e < col.rows.size() && col.rows[e] / T == cl) {
        sum += col.vals[e] * residuals[static_cast<std::size_t>(col.rows[e])];
        ++e;
      }
      if (sum != 0.0) out.scores[cl].emplace_back(c, sum);
    }
  }
  return out;
}

// Dense Omega for diagnostics and small-p checks.
inline Eigen::MatrixXd dense_omega(const ClusterScores& scores, int max_p = 5000) {
  if (scores.p > max_p) {
    throw ArgError("dense_omega: p=" + std::to_string(scores.p) +
                   " exceeds dense guard " + std::to_string(max_p));
  }
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(scores.p, scores.p);
  for (const auto& g : scores.scores) {
    for (const auto& [ca, va] : g) {
      for (const auto& [cb, vb] : g) omega(ca, cb) += va * vb;
    }
  }
  omega /= scores.nm;
  return omega;
}

// One-step bias correction: eta_tilde_l = eta_hat_l + Theta_l' Z'r / NM.
inline std::vector<double> debias(const DesignSystem& sys, const LassoFit& fit,
                                  const std::vector<PrecisionRow>& rows) {
  if (static_cast<int>(fit.eta.size()) != sys.layout.p()) {
    throw ArgError("debias: fit dimension mismatch");
  }
  const int p = sys.layout.p();
  std::vector<double> ztr(p);
  for (int c = 0; c < p; ++c) {
    ztr[c] = column_dot_dense(sys.cols[c], fit.residuals);
  }
  std::vector<double> out(rows.size());
  const double nm = sys.nm();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const PrecisionRow& row = rows[i];
    double corr = 0.0;
    for (std::size_t e = 0; e < row.theta_idx.size(); ++e) {
      corr += row.theta_val[e] * ztr[row.theta_idx[e]];
    }
    out[i] = fit.eta[row.ell] + corr / nm;
  }
  return out;
}

inline double variance_vll(const PrecisionRow& row, const ClusterScores& omega) {
  std::vector<double> theta_dense;
  row.densify(theta_dense, omega.p);
  const double v = omega.quadratic_form(theta_dense);
  if (!(v > 0.0)) {
    throw NumericError(
        "variance_vll: nonpositive variance for target column " +
        std::to_string(row.ell) + " (all cluster scores orthogonal)");
  }
  return v;
}

inline std::pair<double, double> confidence_interval(double eta_tilde,
                                                     double v_hat, double nm,
                                                     double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw ArgError("confidence_interval: level must lie in (0,1)");
  }
  if (!(v_hat > 0.0)) {
    throw ArgError("confidence_interval: variance must be positive");
  }
  if (!(nm > 0.0)) {
    throw ArgError("confidence_interval: NM must be positive");
  }
  const double half = normal_critical_value(level) * std::sqrt(v_hat / nm);
  return {eta_tilde - half, eta_tilde + half};
}

struct CoordinateInference {
  int column = 0;
  std::string name;
  double estimate_lasso = 0.0;
  double estimate_debiased = 0.0;
  double v_hat = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double mu_node = 0.0;
};

struct InferenceReport {
  std::vector<CoordinateInference> coordinates;
  double level = 0.95;
  double mu = 0.0;
  int active_set_size = 0;
  int cv_folds = 0;
  std::uint64_t seed = 0;
  DesignLayout layout;
  int n = 0;
  bool lasso_converged = true;
};

struct PostConfig {
  double level = 0.95;
  std::optional<double> mu;         // fixed penalty, skips CV
  std::vector<double> mu_grid;      // explicit CV grid, else constructed
  int grid_size = 50;
  double grid_ratio = 1e-4;
  int cv_folds = 5;
  CvRule cv_rule = CvRule::OneSe;          // main lasso
  CvRule nodewise_cv_rule = CvRule::Min;   // nodewise regressions
  std::uint64_t seed = 0;
  std::vector<int> targets;         // empty => all k0 coordinates
  std::optional<double> mu_node;
  std::vector<double> mu_node_grid;
  bool shared_mu_node = false;
  unsigned workers = 1;
  SolverOptions solver;
};

namespace detail {

template <typename Fn>
auto with_step(const char* label, Fn&& fn) {
  try {
    return fn();
  } catch (const DataError& e) {
    throw DataError(std::string(label) + ": " + e.what());
  } catch (const ArgError& e) {
    throw ArgError(std::string(label) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(label) + ": " + e.what());
  }
}

}  // namespace detail

// The full post-selection pipeline: design, penalty tuning, lasso, nodewise
// rows, debiasing, cluster-robust variance, confidence intervals.
inline InferenceReport run_post_inference(const DesignSystem& sys,
                                          const PostConfig& cfg) {
  InferenceReport report;
  report.level = cfg.level;
  report.seed = cfg.seed;
  report.cv_folds = cfg.cv_folds;
  report.layout = sys.layout;
  report.n = sys.n;
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) {
    throw ArgError("run_post_inference: level must lie in (0,1)");
  }

  std::vector<int> targets = cfg.targets;
  if (targets.empty()) {
    targets.resize(sys.layout.k0());
    for (int c = 0; c < sys.layout.k0(); ++c) targets[c] = c;
  }
  for (int t : targets) {
    if (t < 0 || t >= sys.layout.p()) {
      throw ArgError("run_post_inference: target column " + std::to_string(t) +
                     " out of range");
    }
  }

  const LassoData main = make_main_problem(sys);

  double mu;
  if (cfg.mu) {
    mu = *cfg.mu;
    if (mu < 0.0) throw ArgError("step lasso-tuning: mu must be nonnegative");
  } else {
    mu = detail::with_step("step lasso-tuning", [&] {
      const std::vector<double> grid =
          cfg.mu_grid.empty() ? make_mu_grid(main, cfg.grid_size, cfg.grid_ratio)
                              : cfg.mu_grid;
      std::vector<int> cluster_of_row(sys.n);
      for (int r = 0; r < sys.n; ++r) cluster_of_row[r] = sys.cluster_of_row(r);
      return cv_select_mu(main, cluster_of_row, sys.num_clusters(), grid,
                          cfg.cv_folds, derive_seed(cfg.seed, 0x6d61696e, 0),
                          cfg.solver)
          .mu_for(cfg.cv_rule);
    });
  }
  report.mu = mu;

  const LassoFit fit = detail::with_step("step lasso", [&] {
    return fit_weighted_lasso(main, mu, cfg.solver);
  });
  report.active_set_size = static_cast<int>(fit.active_set.size());
  report.lasso_converged = fit.converged;

  NodewiseConfig ncfg;
  ncfg.mu_node = cfg.mu_node;
  ncfg.mu_node_grid = cfg.mu_node_grid;
  ncfg.grid_size = cfg.grid_size;
  ncfg.grid_ratio = cfg.grid_ratio;
  ncfg.folds = cfg.cv_folds;
  ncfg.cv_rule = cfg.nodewise_cv_rule;
  ncfg.shared_mu = cfg.shared_mu_node;
  ncfg.seed = cfg.seed;
  ncfg.workers = cfg.workers;
  ncfg.solver = cfg.solver;
  const std::vector<PrecisionRow> rows = detail::with_step(
      "step nodewise", [&] { return compute_precision_rows(sys, targets, ncfg); });

  const std::vector<double> debiased =
      detail::with_step("step debias", [&] { return debias(sys, fit, rows); });

  const ClusterScores omega = detail::with_step("step variance", [&] {
    return cluster_robust_omega(sys, fit.residuals);
  });

  report.coordinates.resize(targets.size());
  detail::with_step("step variance", [&] {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      CoordinateInference& ci = report.coordinates[i];
      ci.column = targets[i];
      ci.name = sys.layout.name_of(targets[i]);
      ci.estimate_lasso = fit.eta[targets[i]];
      ci.estimate_debiased = debiased[i];
      ci.v_hat = variance_vll(rows[i], omega);
      ci.std_error = std::sqrt(ci.v_hat / sys.nm());
      const auto [lo, hi] =
          confidence_interval(debiased[i], ci.v_hat, sys.nm(), cfg.level);
      ci.ci_low = lo;
      ci.ci_high = hi;
      ci.mu_node = rows[i].mu_node;
    }
    return 0;
  });
  return report;
}

inline InferenceReport run_post_inference(const PanelDataset& data,
                                          const PostConfig& cfg) {
  const DesignSystem sys = detail::with_step("step design", [&] {
    return build_design(data);
  });
  return run_post_inference(sys, cfg);
}

}  // namespace panelpost
