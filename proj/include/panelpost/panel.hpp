#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "panelpost/errors.hpp"

namespace panelpost {

// One observation of a three-dimensional panel. Indices are 1-based:
// i in 1..N (origin unit), j in 1..M (destination unit), t in 1..T (period).
struct PanelObservation {
  int i = 0;
  int j = 0;
  int t = 0;
  double y = 0.0;
  std::vector<double> x;
};

struct PanelDataset {
  int N = 0;
  int M = 0;
  int T = 0;
  int k = 0;
  std::vector<PanelObservation> observations;

  // Validates the balanced-panel invariants. Throws DataError with the
  // offending (i,j,t) triple on the first violation found.
  void validate() const;
};

enum class EffectKind { X, Lambda, Alpha, AlphaT, Gamma, GammaT };

// Identity of one design column: a regressor x(l), a period dummy
// lambda(t), or a fixed-effect dummy alpha(i), alpha(i,t), gamma(j),
// gamma(j,t). All indices 1-based.
struct Effect {
  EffectKind kind = EffectKind::X;
  int a = 0;  // l, t, i, or j depending on kind
  int b = 0;  // t for the interaction kinds

  static Effect x(int l) { return {EffectKind::X, l, 0}; }
  static Effect lambda(int t) { return {EffectKind::Lambda, t, 0}; }
  static Effect alpha(int i) { return {EffectKind::Alpha, i, 0}; }
  static Effect alpha_t(int i, int t) { return {EffectKind::AlphaT, i, t}; }
  static Effect gamma(int j) { return {EffectKind::Gamma, j, 0}; }
  static Effect gamma_t(int j, int t) { return {EffectKind::GammaT, j, t}; }

  bool operator==(const Effect& o) const {
    return kind == o.kind && a == o.a && b == o.b;
  }
};

// Deterministic mapping between effects and column indices of Z.
// Column blocks, in order:
//   [ x (k) | lambda (T) | alpha (N) | alpha_t (N*T) | gamma (M) | gamma_t (M*T) ]
// Interaction blocks are unit-major: alpha_t(i,t) sits at (i-1)*T + (t-1)
// within its block.
struct DesignLayout {
  int N = 0;
  int M = 0;
  int T = 0;
  int k = 0;

  int k0() const { return k + T; }
  int N0() const { return N + N * T; }
  int M0() const { return M + M * T; }
  int p() const { return k0() + N0() + M0(); }
  int rows() const { return N * M * T; }

  int offset_x() const { return 0; }
  int offset_lambda() const { return k; }
  int offset_alpha() const { return k + T; }
  int offset_alpha_t() const { return k + T + N; }
  int offset_gamma() const { return k + T + N + N * T; }
  int offset_gamma_t() const { return k + T + N + N * T + M; }

  int column_index(const Effect& e) const {
    switch (e.kind) {
      case EffectKind::X:
        check(e.a >= 1 && e.a <= k, "x", e);
        return offset_x() + (e.a - 1);
      case EffectKind::Lambda:
        check(e.a >= 1 && e.a <= T, "lambda", e);
        return offset_lambda() + (e.a - 1);
      case EffectKind::Alpha:
        check(e.a >= 1 && e.a <= N, "alpha", e);
        return offset_alpha() + (e.a - 1);
      case EffectKind::AlphaT:
        check(e.a >= 1 && e.a <= N && e.b >= 1 && e.b <= T, "alpha_t", e);
        return offset_alpha_t() + (e.a - 1) * T + (e.b - 1);
      case EffectKind::Gamma:
        check(e.a >= 1 && e.a <= M, "gamma", e);
        return offset_gamma() + (e.a - 1);
      case EffectKind::GammaT:
        check(e.a >= 1 && e.a <= M && e.b >= 1 && e.b <= T, "gamma_t", e);
        return offset_gamma_t() + (e.a - 1) * T + (e.b - 1);
    }
    throw ArgError("column_index: unknown effect kind");
  }

  // Inverse lookup: which effect owns column `col`.
  Effect effect_at(int col) const {
    if (col < 0 || col >= p()) {
      throw ArgError("effect_at: column index " + std::to_string(col) +
                     " out of range [0," + std::to_string(p()) + ")");
    }
    if (col < offset_lambda()) return Effect::x(col + 1);
    if (col < offset_alpha()) return Effect::lambda(col - offset_lambda() + 1);
    if (col < offset_alpha_t()) return Effect::alpha(col - offset_alpha() + 1);
    if (col < offset_gamma()) {
      const int r = col - offset_alpha_t();
      return Effect::alpha_t(r / T + 1, r % T + 1);
    }
    if (col < offset_gamma_t()) return Effect::gamma(col - offset_gamma() + 1);
    const int r = col - offset_gamma_t();
    return Effect::gamma_t(r / T + 1, r % T + 1);
  }

  std::string name_of(int col) const {
    const Effect e = effect_at(col);
    switch (e.kind) {
      case EffectKind::X:
        return "beta_" + std::to_string(e.a);
      case EffectKind::Lambda:
        return "lambda_" + std::to_string(e.a);
      case EffectKind::Alpha:
        return "alpha_" + std::to_string(e.a);
      case EffectKind::AlphaT:
        return "alpha_" + std::to_string(e.a) + "_t" + std::to_string(e.b);
      case EffectKind::Gamma:
        return "gamma_" + std::to_string(e.a);
      case EffectKind::GammaT:
        return "gamma_" + std::to_string(e.a) + "_t" + std::to_string(e.b);
    }
    return "?";
  }

 private:
  static void check(bool ok, const char* what, const Effect& e) {
    if (!ok) {
      throw ArgError(std::string("column_index: ") + what + "(" +
                     std::to_string(e.a) +
                     (e.b ? "," + std::to_string(e.b) : "") +
                     ") out of bounds");
    }
  }
};

// One column of Z in sparse form; `rows` ascending.
struct Column {
  std::vector<std::int32_t> rows;
  std::vector<double> vals;

  std::size_t nnz() const { return rows.size(); }
};

// The stacked system Y = Z eta + noise, with rows ordered lexicographically
// in (i,j,t). Consecutive T rows form one (i,j) cluster. Immutable after
// construction.
struct DesignSystem {
  DesignLayout layout;
  int n = 0;  // N*M*T
  std::vector<double> Y;
  std::vector<Column> cols;
  std::vector<double> S_diag;      // sqrt(NM) | sqrt(M) | sqrt(N) by block
  std::vector<double> col_sq_norm; // ||Z_l||^2

  double nm() const {
    return static_cast<double>(layout.N) * static_cast<double>(layout.M);
  }
  int num_clusters() const { return layout.N * layout.M; }
  int cluster_of_row(int row) const { return row / layout.T; }

  // Penalty weight of column l: S_ll / sqrt(NM), i.e. 1 on the x/lambda
  // block, 1/sqrt(N) on the alpha block, 1/sqrt(M) on the gamma block.
  double penalty_weight(int col) const {
    return S_diag[static_cast<std::size_t>(col)] / std::sqrt(nm());
  }
};

inline void PanelDataset::validate() const {
  if (N < 2 || M < 2 || T < 1 || k < 1) {
    throw DataError("panel dimensions require N>=2, M>=2, T>=1, k>=1 (got N=" +
                    std::to_string(N) + ", M=" + std::to_string(M) +
                    ", T=" + std::to_string(T) + ", k=" + std::to_string(k) +
                    ")");
  }
  const std::size_t expected = static_cast<std::size_t>(N) * M * T;
  std::vector<std::uint8_t> seen(expected, 0);
  for (const auto& o : observations) {
    if (o.i < 1 || o.i > N || o.j < 1 || o.j > M || o.t < 1 || o.t > T) {
      throw DataError("index out of bounds at (" + std::to_string(o.i) + "," +
                      std::to_string(o.j) + "," + std::to_string(o.t) + ")");
    }
    if (o.x.size() != static_cast<std::size_t>(k)) {
      throw DataError("observation (" + std::to_string(o.i) + "," +
                      std::to_string(o.j) + "," + std::to_string(o.t) +
                      ") has " + std::to_string(o.x.size()) +
                      " regressors, expected " + std::to_string(k));
    }
    bool finite = std::isfinite(o.y);
    for (double v : o.x) finite = finite && std::isfinite(v);
    if (!finite) {
      throw DataError("invalid datum at (" + std::to_string(o.i) + "," +
                      std::to_string(o.j) + "," + std::to_string(o.t) + ")");
    }
    const std::size_t cell =
        (static_cast<std::size_t>(o.i - 1) * M + (o.j - 1)) * T + (o.t - 1);
    if (seen[cell]) {
      throw DataError("duplicate observation (" + std::to_string(o.i) + "," +
                      std::to_string(o.j) + "," + std::to_string(o.t) + ")");
    }
    seen[cell] = 1;
  }
  for (std::size_t cell = 0; cell < expected; ++cell) {
    if (!seen[cell]) {
      const int i = static_cast<int>(cell / (static_cast<std::size_t>(M) * T));
      const int j = static_cast<int>((cell / T) % M);
      const int t = static_cast<int>(cell % T);
      throw DataError("missing cell (" + std::to_string(i + 1) + "," +
                      std::to_string(j + 1) + "," + std::to_string(t + 1) +
                      ")");
    }
  }
}

// Builds the sparse design system. Every row carries its k regressor values,
// one period dummy, one alpha(i), one alpha(i,t), one gamma(j) and one
// gamma(j,t) entry; all dummy entries are exactly 1.
inline DesignSystem build_design(const PanelDataset& data) {
  data.validate();
  DesignLayout layout{data.N, data.M, data.T, data.k};
  const int n = layout.rows();
  const int p = layout.p();

  DesignSystem sys;
  sys.layout = layout;
  sys.n = n;
  sys.Y.assign(n, 0.0);
  sys.cols.assign(p, Column{});

  // reserve exact structural sizes
  for (int l = 0; l < data.k; ++l) {
    sys.cols[layout.offset_x() + l].rows.reserve(n);
    sys.cols[layout.offset_x() + l].vals.reserve(n);
  }
  for (int t = 0; t < data.T; ++t) {
    sys.cols[layout.offset_lambda() + t].rows.reserve(data.N * data.M);
  }

  std::vector<const PanelObservation*> ordered(static_cast<std::size_t>(n),
                                               nullptr);
  for (const auto& o : data.observations) {
    const std::size_t cell =
        (static_cast<std::size_t>(o.i - 1) * data.M + (o.j - 1)) * data.T +
        (o.t - 1);
    ordered[cell] = &o;
  }

  for (int row = 0; row < n; ++row) {
    const PanelObservation& o = *ordered[row];
    sys.Y[row] = o.y;
    for (int l = 0; l < data.k; ++l) {
      Column& c = sys.cols[layout.offset_x() + l];
      c.rows.push_back(row);
      c.vals.push_back(o.x[l]);
    }
    const int dummy_cols[5] = {
        layout.column_index(Effect::lambda(o.t)),
        layout.column_index(Effect::alpha(o.i)),
        layout.column_index(Effect::alpha_t(o.i, o.t)),
        layout.column_index(Effect::gamma(o.j)),
        layout.column_index(Effect::gamma_t(o.j, o.t))};
    for (int col : dummy_cols) {
      sys.cols[col].rows.push_back(row);
      sys.cols[col].vals.push_back(1.0);
    }
  }

  sys.S_diag.assign(p, 0.0);
  const double s_x = std::sqrt(static_cast<double>(data.N) * data.M);
  const double s_a = std::sqrt(static_cast<double>(data.M));
  const double s_g = std::sqrt(static_cast<double>(data.N));
  for (int c = 0; c < p; ++c) {
    if (c < layout.k0()) {
      sys.S_diag[c] = s_x;
    } else if (c < layout.k0() + layout.N0()) {
      sys.S_diag[c] = s_a;
    } else {
      sys.S_diag[c] = s_g;
    }
  }

  sys.col_sq_norm.assign(p, 0.0);
  for (int c = 0; c < p; ++c) {
    double s = 0.0;
    for (double v : sys.cols[c].vals) s += v * v;
    sys.col_sq_norm[c] = s;
  }
  return sys;
}

// Dot product of two sparse columns (rows ascending).
inline double column_dot(const Column& a, const Column& b) {
  double s = 0.0;
  std::size_t ia = 0, ib = 0;
  while (ia < a.rows.size() && ib < b.rows.size()) {
    if (a.rows[ia] < b.rows[ib]) {
      ++ia;
    } else if (a.rows[ia] > b.rows[ib]) {
      ++ib;
    } else {
      s += a.vals[ia] * b.vals[ib];
      ++ia;
      ++ib;
    }
  }
  return s;
}

inline double column_dot_dense(const Column& a, const std::vector<double>& v) {
  double s = 0.0;
  for (std::size_t e = 0; e < a.rows.size(); ++e) {
    s += a.vals[e] * v[static_cast<std::size_t>(a.rows[e])];
  }
  return s;
}

// Rate-adjusted Gram matrix S^{-1} Z'Z S^{-1}. Dense and intended for
// diagnostics; refuses to materialize above `max_p` columns.
inline Eigen::MatrixXd rate_adjusted_gram(const DesignSystem& sys,
                                          int max_p = 5000) {
  const int p = sys.layout.p();
  if (p > max_p) {
    throw ArgError("rate_adjusted_gram: p=" + std::to_string(p) +
                   " exceeds dense guard " + std::to_string(max_p));
  }
  Eigen::MatrixXd psi(p, p);
  for (int a = 0; a < p; ++a) {
    for (int b = a; b < p; ++b) {
      const double v =
          column_dot(sys.cols[a], sys.cols[b]) / (sys.S_diag[a] * sys.S_diag[b]);
      psi(a, b) = v;
      psi(b, a) = v;
    }
  }
  return psi;
}

}  // namespace panelpost
