// Test-only oracles, kept independent of the implementation paths they
// check: dense linear algebra through Eigen and a proximal-gradient lasso
// solver instead of coordinate descent.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "panelpost/inference.hpp"
#include "panelpost/lasso.hpp"
#include "panelpost/nodewise.hpp"
#include "panelpost/panel.hpp"

namespace oracles {

inline Eigen::MatrixXd dense_design(const panelpost::DesignSystem& sys) {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(sys.n, sys.layout.p());
  for (int c = 0; c < sys.layout.p(); ++c) {
    const panelpost::Column& col = sys.cols[c];
    for (std::size_t e = 0; e < col.rows.size(); ++e) {
      Z(col.rows[e], c) = col.vals[e];
    }
  }
  return Z;
}

inline Eigen::MatrixXd dense_from_problem(const panelpost::LassoData& d) {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(d.n, d.p());
  for (int c = 0; c < d.p(); ++c) {
    const panelpost::Column& col = *d.cols[c];
    for (std::size_t e = 0; e < col.rows.size(); ++e) {
      Z(col.rows[e], c) = col.vals[e];
    }
  }
  return Z;
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

// Minimum-norm least squares solution.
inline Eigen::VectorXd min_norm_least_squares(const Eigen::MatrixXd& Z,
                                              const Eigen::VectorXd& y) {
  return Z.completeOrthogonalDecomposition().solve(y);
}

// Proximal-gradient (FISTA) minimizer of 0.5||y - Z b||^2 + mu sum w_j |b_j|.
// A different first-order algorithm than the production solver.
inline Eigen::VectorXd fista_lasso(const Eigen::MatrixXd& Z,
                                   const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& w, double mu,
                                   int iters = 200000, double tol = 1e-13) {
  const int p = static_cast<int>(Z.cols());
  const Eigen::MatrixXd G = Z.transpose() * Z;
  const Eigen::VectorXd zty = Z.transpose() * y;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  const double L = std::max(eig.eigenvalues().maxCoeff(), 1e-12);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd z = b;
  double tk = 1.0;
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd grad = G * z - zty;
    Eigen::VectorXd next(p);
    for (int c = 0; c < p; ++c) {
      const double u = z(c) - grad(c) / L;
      const double thr = mu * w(c) / L;
      next(c) = u > thr ? u - thr : (u < -thr ? u + thr : 0.0);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    z = next + ((tk - 1.0) / t_next) * (next - b);
    const double step = (next - b).lpNorm<Eigen::Infinity>();
    b = next;
    tk = t_next;
    if (step < tol) break;
  }
  return b;
}

// Small owned problem for randomized solver batteries.
struct ToyProblem {
  std::vector<panelpost::Column> storage;
  panelpost::LassoData data;

  ToyProblem(const ToyProblem&) = delete;
  ToyProblem& operator=(const ToyProblem&) = delete;
  ToyProblem(ToyProblem&&) = delete;

  explicit ToyProblem(unsigned seed, int n = 0, int p = 0) {
    std::mt19937_64 g(seed);
    std::uniform_int_distribution<int> nd(8, 40), pd(2, 9);
    std::normal_distribution<double> val(0.0, 1.0);
    std::uniform_real_distribution<double> wdist(0.3, 2.0);
    std::uniform_real_distribution<double> density(0.4, 1.0);
    if (n <= 0) n = nd(g);
    if (p <= 0) p = pd(g);
    data.n = n;
    storage.resize(p);
    for (int c = 0; c < p; ++c) {
      const double keep = density(g);
      for (int r = 0; r < n; ++r) {
        if (std::uniform_real_distribution<double>(0.0, 1.0)(g) <= keep) {
          storage[c].rows.push_back(r);
          storage[c].vals.push_back(val(g));
        }
      }
      if (storage[c].rows.empty()) {
        storage[c].rows.push_back(c % n);
        storage[c].vals.push_back(1.0);
      }
    }
    data.y.resize(n);
    for (int r = 0; r < n; ++r) data.y[r] = 3.0 * val(g);
    for (int c = 0; c < p; ++c) {
      data.cols.push_back(&storage[c]);
      double sq = 0.0;
      for (double v : storage[c].vals) sq += v * v;
      data.col_sq.push_back(sq);
      data.weights.push_back(wdist(g));
    }
  }
};

// Small random balanced panels for pipeline-level checks.
inline panelpost::PanelDataset random_panel(unsigned seed, int N, int M, int T,
                                            int k = 1) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  panelpost::PanelDataset ds;
  ds.N = N;
  ds.M = M;
  ds.T = T;
  ds.k = k;
  std::vector<double> ai(N), gj(M);
  for (auto& v : ai) v = nd(g);
  for (auto& v : gj) v = nd(g);
  for (int i = 1; i <= N; ++i) {
    for (int j = 1; j <= M; ++j) {
      for (int t = 1; t <= T; ++t) {
        panelpost::PanelObservation o;
        o.i = i;
        o.j = j;
        o.t = t;
        o.x.resize(k);
        double xb = 0.0;
        for (int l = 0; l < k; ++l) {
          o.x[l] = nd(g) + 0.3 * (ai[i - 1] + gj[j - 1]);
          xb += o.x[l] * (l + 1);
        }
        o.y = xb + ai[i - 1] + gj[j - 1] + 0.5 * nd(g);
        ds.observations.push_back(std::move(o));
      }
    }
  }
  return ds;
}

// The subgradient form of the bias correction. With the half-squared
// objective, stationarity reads Z'r = mu * P'(eta_hat) for the standard
// subgradient P'(eta)_j = w_j sign(eta_j) on the active set and
// clip(Z_j'r/mu, +-w_j) off it, so the equivalent correction is
//   eta_tilde_l = eta_hat_l + (mu/NM) Theta_l' P'(eta_hat).
// The forms can differ only through the active-set stationarity gap, which
// the KKT certificate bounds.
inline std::vector<double> debias_subgradient_form(
    const panelpost::DesignSystem& sys, const panelpost::LassoFit& fit,
    const std::vector<panelpost::PrecisionRow>& rows) {
  const int p = sys.layout.p();
  std::vector<double> subgrad(p, 0.0);
  for (int c = 0; c < p; ++c) {
    const double w = sys.penalty_weight(c);
    if (fit.eta[c] != 0.0) {
      subgrad[c] = w * (fit.eta[c] > 0.0 ? 1.0 : -1.0);
    } else if (fit.mu > 0.0) {
      const double g =
          panelpost::column_dot_dense(sys.cols[c], fit.residuals) / fit.mu;
      subgrad[c] = std::max(-w, std::min(w, g));
    }
  }
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double dot = 0.0;
    for (std::size_t e = 0; e < rows[i].theta_idx.size(); ++e) {
      dot += rows[i].theta_val[e] * subgrad[rows[i].theta_idx[e]];
    }
    out[i] = fit.eta[rows[i].ell] + fit.mu * dot / sys.nm();
  }
  return out;
}

}  // namespace oracles
