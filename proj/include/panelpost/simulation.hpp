#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "panelpost/baselines.hpp"
#include "panelpost/errors.hpp"
#include "panelpost/inference.hpp"
#include "panelpost/panel.hpp"
#include "panelpost/parallel.hpp"
#include "panelpost/rng.hpp"

namespace panelpost {

enum class TrueModel { I = 1, II = 2, III = 3 };

enum class Estimator { Ols, Fe1, Fe2, Fe3, Post };

inline const std::vector<Estimator>& all_estimators() {
  static const std::vector<Estimator> order = {
      Estimator::Ols, Estimator::Fe1, Estimator::Fe2, Estimator::Fe3,
      Estimator::Post};
  return order;
}

inline std::string estimator_key(Estimator e) {
  switch (e) {
    case Estimator::Ols: return "ols";
    case Estimator::Fe1: return "fe1";
    case Estimator::Fe2: return "fe2";
    case Estimator::Fe3: return "fe3";
    case Estimator::Post: return "post";
  }
  return "?";
}

inline std::string estimator_label(Estimator e) {
  switch (e) {
    case Estimator::Ols: return "OLS";
    case Estimator::Fe1: return "FE-I";
    case Estimator::Fe2: return "FE-II";
    case Estimator::Fe3: return "FE-III";
    case Estimator::Post: return "POST";
  }
  return "?";
}

inline Estimator parse_estimator(const std::string& s) {
  for (Estimator e : all_estimators()) {
    if (estimator_key(e) == s) return e;
  }
  throw ArgError("unknown estimator '" + s +
                 "' (expected ols, fe1, fe2, fe3 or post)");
}

struct DgpConstants {
  double m_alpha = 0.0, s_alpha = 1.0;
  double m_gamma = 0.0, s_gamma = 1.0;
  double lambda_shock = 2.0;
  int shock_period = 0;  // 0 => ceil(T/2)
  double m_x = 0.0, s_x = 2.0;
  double rho = 0.5;
  double m_eps = 0.0, s_eps = 10.0;
  double beta = 1.0;
};

struct SimulationConfig {
  TrueModel model = TrueModel::I;
  int N = 10;
  int M = 0;  // 0 => N-1
  int T = 5;
  int reps = 1000;
  std::uint64_t seed = 0;
  std::vector<Estimator> estimators = all_estimators();
  DgpConstants dgp;
  bool freeze_effects = false;
  double level = 0.95;
  int cv_folds = 5;
  CvRule cv_rule = CvRule::OneSe;          // main lasso
  CvRule nodewise_cv_rule = CvRule::Min;   // nodewise regressions
  int grid_size = 50;
  double grid_ratio = 1e-4;
  unsigned workers = 0;  // 0 => PANELPOST_WORKERS or hardware
  SolverOptions solver;
  double max_failure_fraction = 0.01;

  int resolved_M() const { return M > 0 ? M : N - 1; }
  int resolved_shock_period() const {
    return dgp.shock_period > 0 ? dgp.shock_period : (T + 1) / 2;
  }

  void validate() const {
    if (reps < 1) throw ArgError("simulation: reps must be >= 1");
    if (N < 3) throw ArgError("simulation: N must be >= 3");
    if (resolved_M() < 2) throw ArgError("simulation: M must be >= 2");
    if (T < 1) throw ArgError("simulation: T must be >= 1");
    if (!(level > 0.0 && level < 1.0)) {
      throw ArgError("simulation: level must lie in (0,1)");
    }
    if (estimators.empty()) throw ArgError("simulation: no estimators requested");
    if (resolved_shock_period() < 1 || resolved_shock_period() > T) {
      throw ArgError("simulation: shock period out of range");
    }
    if (!(dgp.rho >= 0.0 && dgp.rho <= 1.0)) {
      throw ArgError("simulation: rho must lie in [0,1]");
    }
  }
};

struct DgpDraw {
  PanelDataset data;
  double beta_true = 0.0;
  std::vector<double> fixed_part;  // NMT, lexicographic (i,j,t)
  // raw draws, exposed for moment checks
  std::vector<double> alpha_i, gamma_j, alpha_it, gamma_jt, lambda_t;
};

// Synthetic three-dimensional panel. Fixed effects have variance decaying in
// the unit index, sd(alpha_i) = s_alpha / (i^{1/4} (log(i+1))^{3/2}); the
// regressor mixes an iid normal with the standardized sum of fixed effects.
// Deterministic given (seed, rep_index): each replication owns a derived
// stream, so parallel execution cannot change the draws.
inline DgpDraw generate_dgp(const SimulationConfig& cfg, int rep_index) {
  cfg.validate();
  const int N = cfg.N, M = cfg.resolved_M(), T = cfg.T;
  const DgpConstants& c = cfg.dgp;

  const std::uint64_t fe_stream =
      cfg.freeze_effects ? derive_seed(cfg.seed, 0, 0xfe)
                         : derive_seed(cfg.seed, rep_index + 1, 0xfe);
  Rng rng_fe(fe_stream);
  Rng rng_noise(derive_seed(cfg.seed, rep_index + 1, 0x0e));

  const auto unit_sd = [](double s, int idx) {
    const double lg = std::log(static_cast<double>(idx) + 1.0);
    return s / (std::pow(static_cast<double>(idx), 0.25) * std::pow(lg, 1.5));
  };

  std::vector<double> alpha_i, gamma_j, alpha_it, gamma_jt, lambda_t(T, 0.0);
  if (cfg.model == TrueModel::I || cfg.model == TrueModel::II) {
    alpha_i.resize(N);
    for (int i = 1; i <= N; ++i) {
      alpha_i[i - 1] = rng_fe.normal(c.m_alpha, unit_sd(c.s_alpha, i));
    }
    gamma_j.resize(M);
    for (int j = 1; j <= M; ++j) {
      gamma_j[j - 1] = rng_fe.normal(c.m_gamma, unit_sd(c.s_gamma, j));
    }
    if (cfg.model == TrueModel::II) {
      lambda_t[cfg.resolved_shock_period() - 1] = c.lambda_shock;
    }
  } else {
    alpha_it.resize(static_cast<std::size_t>(N) * T);
    for (int i = 1; i <= N; ++i) {
      for (int t = 1; t <= T; ++t) {
        alpha_it[(i - 1) * T + (t - 1)] =
            rng_fe.normal(c.m_alpha, unit_sd(c.s_alpha, i));
      }
    }
    gamma_jt.resize(static_cast<std::size_t>(M) * T);
    for (int j = 1; j <= M; ++j) {
      for (int t = 1; t <= T; ++t) {
        gamma_jt[(j - 1) * T + (t - 1)] =
            rng_fe.normal(c.m_gamma, unit_sd(c.s_gamma, j));
      }
    }
  }

  const int n = N * M * T;
  std::vector<double> fixed(n, 0.0);
  double ms = 0.0;
  for (int i = 1; i <= N; ++i) {
    for (int j = 1; j <= M; ++j) {
      for (int t = 1; t <= T; ++t) {
        const int r = ((i - 1) * M + (j - 1)) * T + (t - 1);
        double f = 0.0;
        switch (cfg.model) {
          case TrueModel::I:
            f = alpha_i[i - 1] + gamma_j[j - 1];
            break;
          case TrueModel::II:
            f = alpha_i[i - 1] + gamma_j[j - 1] + lambda_t[t - 1];
            break;
          case TrueModel::III:
            f = alpha_it[(i - 1) * T + (t - 1)] + gamma_jt[(j - 1) * T + (t - 1)];
            break;
        }
        fixed[r] = f;
      }
    }
  }
  // standardization of the fixed-effect sum: over (i,j) pairs under model I
  // (no t variation), over all (i,j,t) otherwise
  if (cfg.model == TrueModel::I) {
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < M; ++j) {
        const double f = alpha_i[i] + gamma_j[j];
        ms += f * f;
      }
    }
    ms /= static_cast<double>(N) * M;
  } else {
    for (double f : fixed) ms += f * f;
    ms /= n;
  }
  const double f_scale = ms > 0.0 ? 1.0 / std::sqrt(ms) : 0.0;

  DgpDraw out;
  out.beta_true = c.beta;
  out.fixed_part = fixed;
  out.alpha_i = std::move(alpha_i);
  out.gamma_j = std::move(gamma_j);
  out.alpha_it = std::move(alpha_it);
  out.gamma_jt = std::move(gamma_jt);
  out.lambda_t = std::move(lambda_t);
  out.data.N = N;
  out.data.M = M;
  out.data.T = T;
  out.data.k = 1;
  out.data.observations.reserve(n);

  std::vector<double> x(n);
  for (int r = 0; r < n; ++r) {
    const double xt = rng_noise.normal();
    x[r] = c.m_x + c.s_x * ((1.0 - c.rho) * xt + c.rho * fixed[r] * f_scale);
  }
  for (int i = 1; i <= N; ++i) {
    for (int j = 1; j <= M; ++j) {
      for (int t = 1; t <= T; ++t) {
        const int r = ((i - 1) * M + (j - 1)) * T + (t - 1);
        const double eps = rng_noise.normal(c.m_eps, c.s_eps);
        PanelObservation o;
        o.i = i;
        o.j = j;
        o.t = t;
        o.x = {x[r]};
        o.y = x[r] * c.beta + fixed[r] + eps;
        out.data.observations.push_back(std::move(o));
      }
    }
  }
  return out;
}

struct ReplicationRecord {
  bool ok = false;
  std::string error;
  std::vector<double> estimates;  // aligned with cfg.estimators
  std::vector<char> covered;
};

inline ReplicationRecord run_replication(const SimulationConfig& cfg,
                                         int rep_index) {
  ReplicationRecord rec;
  rec.estimates.assign(cfg.estimators.size(), 0.0);
  rec.covered.assign(cfg.estimators.size(), 0);
  try {
    const DgpDraw draw = generate_dgp(cfg, rep_index);
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      const Estimator est = cfg.estimators[e];
      double estimate, lo, hi;
      if (est == Estimator::Post) {
        PostConfig pc;
        pc.level = cfg.level;
        pc.cv_folds = cfg.cv_folds;
        pc.cv_rule = cfg.cv_rule;
        pc.nodewise_cv_rule = cfg.nodewise_cv_rule;
        pc.grid_size = cfg.grid_size;
        pc.grid_ratio = cfg.grid_ratio;
        pc.solver = cfg.solver;
        pc.seed = derive_seed(cfg.seed, rep_index + 1, 0xb0);
        pc.targets = {0};  // the x coordinate is what the tables track
        pc.workers = 1;
        const InferenceReport rep = run_post_inference(draw.data, pc);
        estimate = rep.coordinates[0].estimate_debiased;
        lo = rep.coordinates[0].ci_low;
        hi = rep.coordinates[0].ci_high;
      } else {
        FeVariant v = FeVariant::None;
        if (est == Estimator::Fe1) v = FeVariant::Fe1;
        if (est == Estimator::Fe2) v = FeVariant::Fe2;
        if (est == Estimator::Fe3) v = FeVariant::Fe3;
        const FeFitResult fit = fe_fit(draw.data, v);
        estimate = fit.beta[0];
        const auto ci = baseline_ci(fit.beta[0], fit.se[0], cfg.level);
        lo = ci.first;
        hi = ci.second;
      }
      rec.estimates[e] = estimate;
      rec.covered[e] = (lo <= draw.beta_true && draw.beta_true <= hi) ? 1 : 0;
    }
    rec.ok = true;
  } catch (const std::exception& ex) {
    rec.ok = false;
    rec.error = ex.what();
  }
  return rec;
}

struct EstimatorStats {
  double average = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;
};

struct SimulationSummary {
  TrueModel model = TrueModel::I;
  int N = 0, M = 0, T = 0;
  int reps_requested = 0, reps_completed = 0, reps_failed = 0;
  std::uint64_t seed = 0;
  double level = 0.95;
  double beta_true = 1.0;
  std::vector<std::pair<Estimator, EstimatorStats>> stats;
  std::vector<std::string> failure_messages;  // first few, for diagnostics
};

// Sample moments over completed replications. SD uses the 1/R convention so
// that rmse^2 = bias^2 + sd^2 holds as an identity.
inline SimulationSummary aggregate_replications(
    const SimulationConfig& cfg, const std::vector<ReplicationRecord>& records) {
  SimulationSummary s;
  s.model = cfg.model;
  s.N = cfg.N;
  s.M = cfg.resolved_M();
  s.T = cfg.T;
  s.reps_requested = static_cast<int>(records.size());
  s.seed = cfg.seed;
  s.level = cfg.level;
  s.beta_true = cfg.dgp.beta;

  for (const auto& r : records) {
    if (r.ok) {
      ++s.reps_completed;
    } else {
      ++s.reps_failed;
      if (s.failure_messages.size() < 5) s.failure_messages.push_back(r.error);
    }
  }
  if (s.reps_completed == 0) {
    throw NumericError("simulation: every replication failed" +
                       (s.failure_messages.empty()
                            ? std::string()
                            : "; first error: " + s.failure_messages.front()));
  }
  if (s.reps_failed > cfg.max_failure_fraction * s.reps_requested) {
    throw NumericError(
        "simulation: " + std::to_string(s.reps_failed) + " of " +
        std::to_string(s.reps_requested) + " replications failed (> " +
        std::to_string(100.0 * cfg.max_failure_fraction) + "%)" +
        (s.failure_messages.empty()
             ? std::string()
             : "; first error: " + s.failure_messages.front()));
  }

  const double R = static_cast<double>(s.reps_completed);
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    EstimatorStats st;
    double sum = 0.0, cov = 0.0;
    for (const auto& r : records) {
      if (!r.ok) continue;
      sum += r.estimates[e];
      cov += r.covered[e];
    }
    st.average = sum / R;
    st.bias = st.average - cfg.dgp.beta;
    double ssd = 0.0, sse = 0.0;
    for (const auto& r : records) {
      if (!r.ok) continue;
      const double d = r.estimates[e] - st.average;
      ssd += d * d;
      const double de = r.estimates[e] - cfg.dgp.beta;
      sse += de * de;
    }
    st.sd = std::sqrt(ssd / R);
    st.rmse = std::sqrt(sse / R);
    st.coverage = cov / R;
    s.stats.emplace_back(cfg.estimators[e], st);
  }
  return s;
}

// Generation, estimation and inference for every replication. Replications
// run concurrently; records land in per-index slots and are aggregated in
// index order, so the summary is identical for any worker count. Estimators
// are reported in the canonical OLS, FE-I, FE-II, FE-III, POST order no
// matter how they were requested.
inline SimulationSummary run_monte_carlo(const SimulationConfig& cfg_in) {
  SimulationConfig cfg = cfg_in;
  std::vector<Estimator> ordered;
  for (Estimator e : all_estimators()) {
    for (Estimator want : cfg_in.estimators) {
      if (want == e) {
        ordered.push_back(e);
        break;
      }
    }
  }
  cfg.estimators = std::move(ordered);
  cfg.validate();
  const unsigned workers = worker_count_from_env(cfg.workers);
  std::vector<ReplicationRecord> records(cfg.reps);
  parallel_for(static_cast<std::size_t>(cfg.reps), workers,
               [&](std::size_t r) {
                 records[r] = run_replication(cfg, static_cast<int>(r));
               });
  return aggregate_replications(cfg, records);
}

namespace detail {

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

inline std::string coverage_row_label(double level) {
  return detail::fmt6(level * 100.0) + "% Coverage";
}

inline std::vector<std::pair<std::string, double EstimatorStats::*>>
table_rows(double level) {
  return {{"Average", &EstimatorStats::average},
          {"Bias", &EstimatorStats::bias},
          {"Standard Deviation", &EstimatorStats::sd},
          {"Root Mean Square Error", &EstimatorStats::rmse},
          {coverage_row_label(level), &EstimatorStats::coverage}};
}

inline std::string model_label(TrueModel m) {
  switch (m) {
    case TrueModel::I: return "(I)";
    case TrueModel::II: return "(II)";
    case TrueModel::III: return "(III)";
  }
  return "?";
}

// Aligned text table: statistics as rows, estimators as columns in the
// canonical OLS, FE-I, FE-II, FE-III, POST order.
inline std::string emit_table_text(const SimulationSummary& s) {
  std::ostringstream os;
  os << "True Model = " << model_label(s.model) << "  N=" << s.N
     << "  M=" << s.M << "  T=" << s.T << "  (NMT=" << s.N * s.M * s.T << ")"
     << "  reps=" << s.reps_completed;
  if (s.reps_failed > 0) os << " (+" << s.reps_failed << " failed)";
  os << "  seed=" << s.seed << "\n";

  const std::size_t label_w = 24, col_w = 13;
  const auto pad = [](std::size_t width, const std::string& v) {
    return v.size() < width ? std::string(width - v.size(), ' ') + v
                            : " " + v;
  };
  os << std::string(label_w, ' ');
  for (const auto& [est, st] : s.stats) os << pad(col_w, estimator_label(est));
  os << "\n";
  for (const auto& [row_label, member] : table_rows(s.level)) {
    os << row_label
       << std::string(label_w > row_label.size() ? label_w - row_label.size() : 1,
                      ' ');
    for (const auto& [est, st] : s.stats) {
      os << pad(col_w, detail::fmt6(st.*member));
    }
    os << "\n";
  }
  return os.str();
}

inline std::string emit_table_csv(const SimulationSummary& s) {
  std::ostringstream os;
  os << "statistic";
  for (const auto& [est, st] : s.stats) os << "," << estimator_label(est);
  os << "\n";
  for (const auto& [row_label, member] : table_rows(s.level)) {
    os << row_label;
    for (const auto& [est, st] : s.stats) os << "," << detail::fmt6(st.*member);
    os << "\n";
  }
  return os.str();
}

struct ParsedTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<double>>> rows;
};

inline ParsedTable parse_table_csv(const std::string& text) {
  ParsedTable out;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (header) {
      out.columns.assign(fields.begin() + 1, fields.end());
      header = false;
      continue;
    }
    std::vector<double> vals;
    for (std::size_t f = 1; f < fields.size(); ++f) {
      vals.push_back(std::stod(fields[f]));
    }
    out.rows.emplace_back(fields[0], std::move(vals));
  }
  return out;
}

}  // namespace panelpost
