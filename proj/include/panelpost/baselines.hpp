#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "panelpost/errors.hpp"
#include "panelpost/panel.hpp"
#include "panelpost/rng.hpp"

namespace panelpost {

// Dummy sets of the conventional fixed-effect estimators. None is pooled
// OLS of y on x alone, with no constant and no dummies.
enum class FeVariant { None, Fe1, Fe2, Fe3 };

inline std::string fe_variant_name(FeVariant v) {
  switch (v) {
    case FeVariant::None: return "ols";
    case FeVariant::Fe1: return "fe1";
    case FeVariant::Fe2: return "fe2";
    case FeVariant::Fe3: return "fe3";
  }
  return "?";
}

struct FeFitResult {
  std::vector<double> beta;
  std::vector<double> se;  // clustered at (i,j)
  double rss = 0.0;
  int projection_cycles = 0;
};

namespace detail {

// Subtracts group means from each column of `vals` for one grouping; returns
// the largest mean removed.
inline double demean_pass(const std::vector<int>& group_of_row, int n_groups,
                          std::vector<std::vector<double>*>& vals,
                          std::vector<double>& mean_buf,
                          const std::vector<double>& group_size) {
  double max_adjust = 0.0;
  for (auto* col : vals) {
    mean_buf.assign(n_groups, 0.0);
    std::vector<double>& v = *col;
    for (std::size_t r = 0; r < v.size(); ++r) mean_buf[group_of_row[r]] += v[r];
    for (int g = 0; g < n_groups; ++g) mean_buf[g] /= group_size[g];
    for (std::size_t r = 0; r < v.size(); ++r) v[r] -= mean_buf[group_of_row[r]];
    for (int g = 0; g < n_groups; ++g) {
      max_adjust = std::max(max_adjust, std::fabs(mean_buf[g]));
    }
  }
  return max_adjust;
}

}  // namespace detail

// Within estimator: residualize y and x on the variant's dummy set by
// alternating group demeaning, then solve the small dense normal equations.
// Standard errors are clustered at (i,j).
inline FeFitResult fe_fit(const PanelDataset& data, FeVariant variant,
                          double tol = 1e-10, int max_cycles = 10000) {
  data.validate();
  const int n = data.N * data.M * data.T;
  const int k = data.k;

  std::vector<double> y(n);
  std::vector<std::vector<double>> x(k, std::vector<double>(n));
  std::vector<int> cluster(n);
  // row order follows the observation list; only groupings matter here
  std::vector<int> gi(n), gj(n), gt(n), git(n), gjt(n);
  for (int r = 0; r < n; ++r) {
    const PanelObservation& o = data.observations[r];
    y[r] = o.y;
    for (int l = 0; l < k; ++l) x[l][r] = o.x[l];
    cluster[r] = (o.i - 1) * data.M + (o.j - 1);
    gi[r] = o.i - 1;
    gj[r] = o.j - 1;
    gt[r] = o.t - 1;
    git[r] = (o.i - 1) * data.T + (o.t - 1);
    gjt[r] = (o.j - 1) * data.T + (o.t - 1);
  }

  struct Grouping {
    const std::vector<int>* group_of_row;
    int n_groups;
  };
  std::vector<Grouping> groupings;
  switch (variant) {
    case FeVariant::None:
      break;  // nothing to partial out
    case FeVariant::Fe1:
      groupings.push_back({&gi, data.N});
      groupings.push_back({&gj, data.M});
      break;
    case FeVariant::Fe2:
      groupings.push_back({&gi, data.N});
      groupings.push_back({&gj, data.M});
      groupings.push_back({&gt, data.T});
      break;
    case FeVariant::Fe3:
      groupings.push_back({&git, data.N * data.T});
      groupings.push_back({&gjt, data.M * data.T});
      break;
  }

  std::vector<std::vector<double>*> work;
  work.push_back(&y);
  for (int l = 0; l < k; ++l) work.push_back(&x[l]);

  std::vector<std::vector<double>> sizes;
  for (const auto& g : groupings) {
    std::vector<double> sz(g.n_groups, 0.0);
    for (int r = 0; r < n; ++r) sz[(*g.group_of_row)[r]] += 1.0;
    sizes.push_back(std::move(sz));
  }

  double scale = 1.0;
  for (auto* col : work) {
    for (double v : *col) scale = std::max(scale, std::fabs(v));
  }

  FeFitResult out;
  std::vector<double> mean_buf;
  for (int cycle = 0; !groupings.empty() && cycle < max_cycles; ++cycle) {
    double max_adjust = 0.0;
    for (std::size_t gix = 0; gix < groupings.size(); ++gix) {
      max_adjust = std::max(
          max_adjust, detail::demean_pass(*groupings[gix].group_of_row,
                                          groupings[gix].n_groups, work,
                                          mean_buf, sizes[gix]));
    }
    out.projection_cycles = cycle + 1;
    if (max_adjust < tol * scale) break;
    if (groupings.size() == 1) break;  // a single grouping projects exactly
  }

  // scale of the regressors before partialling; the identification check
  // below needs it because a fully absorbed x leaves a tiny but positive
  // within sum of squares
  double x_scale = 0.0;
  for (int l = 0; l < k; ++l) {
    double s = 0.0;
    for (const auto& o : data.observations) s += o.x[l] * o.x[l];
    x_scale = std::max(x_scale, s);
  }

  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(k);
  for (int a = 0; a < k; ++a) {
    for (int b = a; b < k; ++b) {
      double s = 0.0;
      for (int r = 0; r < n; ++r) s += x[a][r] * x[b][r];
      xtx(a, b) = s;
      xtx(b, a) = s;
    }
    double s = 0.0;
    for (int r = 0; r < n; ++r) s += x[a][r] * y[r];
    xty(a) = s;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xtx);
  if (eig.eigenvalues().minCoeff() <= 1e-8 * std::max(x_scale, 1e-300)) {
    throw NumericError("fe_fit(" + fe_variant_name(variant) +
                       "): regressors are collinear after partialling out the "
                       "fixed effects (not identified)");
  }
  const Eigen::VectorXd beta = xtx.ldlt().solve(xty);

  std::vector<double> u(n);
  out.rss = 0.0;
  for (int r = 0; r < n; ++r) {
    double fitv = 0.0;
    for (int l = 0; l < k; ++l) fitv += x[l][r] * beta(l);
    u[r] = y[r] - fitv;
    out.rss += u[r] * u[r];
  }

  const int n_clusters = data.N * data.M;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  {
    Eigen::MatrixXd cluster_sums = Eigen::MatrixXd::Zero(n_clusters, k);
    for (int r = 0; r < n; ++r) {
      for (int l = 0; l < k; ++l) cluster_sums(cluster[r], l) += x[l][r] * u[r];
    }
    meat = cluster_sums.transpose() * cluster_sums;
  }
  const Eigen::MatrixXd bread = xtx.inverse();
  const Eigen::MatrixXd vcov = bread * meat * bread;

  out.beta.resize(k);
  out.se.resize(k);
  for (int l = 0; l < k; ++l) {
    out.beta[l] = beta(l);
    out.se[l] = std::sqrt(std::max(vcov(l, l), 0.0));
  }
  return out;
}

inline std::pair<double, double> baseline_ci(double beta_hat, double se,
                                             double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw ArgError("baseline_ci: level must lie in (0,1)");
  }
  if (se < 0.0) throw ArgError("baseline_ci: negative standard error");
  const double half = normal_critical_value(level) * se;
  return {beta_hat - half, beta_hat + half};
}

}  // namespace panelpost
