#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "panelpost/simulation.hpp"

using namespace panelpost;

TEST_CASE("dgp dimensions and determinism") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 10;
  cfg.seed = 11;
  const DgpDraw a = generate_dgp(cfg, 3);
  CHECK(a.data.observations.size() == 450u);  // N=10, M=9, T=5
  CHECK(a.data.k == 1);
  CHECK(a.beta_true == 1.0);

  const DgpDraw b = generate_dgp(cfg, 3);
  REQUIRE(b.data.observations.size() == a.data.observations.size());
  for (std::size_t r = 0; r < a.data.observations.size(); ++r) {
    CHECK(a.data.observations[r].y == b.data.observations[r].y);
    CHECK(a.data.observations[r].x[0] == b.data.observations[r].x[0]);
  }
  const DgpDraw c = generate_dgp(cfg, 4);
  bool any_diff = false;
  for (std::size_t r = 0; r < a.data.observations.size(); ++r) {
    any_diff = any_diff || a.data.observations[r].y != c.data.observations[r].y;
  }
  CHECK(any_diff);
}

TEST_CASE("the lambda shock is a single spike of 2") {
  SimulationConfig cfg;
  cfg.model = TrueModel::II;
  cfg.N = 6;
  cfg.seed = 5;
  const DgpDraw d = generate_dgp(cfg, 0);
  // within a fixed (i,j), fixed_part(t) - fixed_part(1) = lambda_t - lambda_1
  const int T = cfg.T;
  const int shock = cfg.resolved_shock_period();
  CHECK(shock == 3);
  for (int t = 1; t <= T; ++t) {
    const double diff = d.fixed_part[t - 1] - d.fixed_part[0];
    if (t == shock) {
      CHECK(diff == Catch::Approx(2.0));
    } else {
      CHECK(diff == Catch::Approx(0.0).margin(1e-14));
    }
  }
  // no shock under model I
  SimulationConfig c1 = cfg;
  c1.model = TrueModel::I;
  const DgpDraw d1 = generate_dgp(c1, 0);
  for (int t = 1; t <= T; ++t) {
    CHECK(d1.fixed_part[t - 1] == Catch::Approx(d1.fixed_part[0]).margin(1e-14));
  }
}

TEST_CASE("noise variance moment check") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 30;  // NMT = 4350
  cfg.seed = 17;
  const DgpDraw d = generate_dgp(cfg, 0);
  double ssq = 0.0, sum = 0.0;
  const std::size_t n = d.data.observations.size();
  for (std::size_t r = 0; r < n; ++r) {
    const PanelObservation& o = d.data.observations[r];
    const double eps = o.y - o.x[0] * d.beta_true - d.fixed_part[r];
    sum += eps;
    ssq += eps * eps;
  }
  const double mean = sum / n;
  const double var = ssq / n - mean * mean;
  CHECK(var == Catch::Approx(100.0).epsilon(0.05));
}

TEST_CASE("fixed-effect scale decays with the unit index") {
  // scaled draws alpha_i * i^(1/4) (log(i+1))^(3/2) should have unit variance
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 20;
  cfg.seed = 23;
  double ssq = 0.0;
  int count = 0;
  for (int rep = 0; rep < 400; ++rep) {
    const DgpDraw d = generate_dgp(cfg, rep);
    for (int i = 1; i <= cfg.N; ++i) {
      const double scale =
          std::pow(double(i), 0.25) * std::pow(std::log(i + 1.0), 1.5);
      const double z = d.alpha_i[i - 1] * scale;
      ssq += z * z;
      ++count;
    }
  }
  CHECK(ssq / count == Catch::Approx(1.0).epsilon(0.05));
}

TEST_CASE("x couples to the fixed effects through rho") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 20;
  cfg.seed = 31;
  const auto corr_at = [&](double rho) {
    SimulationConfig c = cfg;
    c.dgp.rho = rho;
    const DgpDraw d = generate_dgp(c, 0);
    const std::size_t n = d.data.observations.size();
    double sx = 0, sf = 0, sxf = 0, sxx = 0, sff = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const double xv = d.data.observations[r].x[0];
      const double fv = d.fixed_part[r];
      sx += xv;
      sf += fv;
      sxf += xv * fv;
      sxx += xv * xv;
      sff += fv * fv;
    }
    const double cov = sxf / n - (sx / n) * (sf / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vf = sff / n - (sf / n) * (sf / n);
    return cov / std::sqrt(vx * vf);
  };
  const double c0 = corr_at(0.0);
  const double c05 = corr_at(0.5);
  const double c09 = corr_at(0.9);
  CHECK(std::fabs(c0) < 0.05);
  CHECK(c05 > c0 + 0.1);
  CHECK(c09 > c05 + 0.1);
}

TEST_CASE("single replication gives sd 0 and rmse = |bias|") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 5;
  cfg.reps = 1;
  cfg.seed = 41;
  cfg.estimators = {Estimator::Ols, Estimator::Fe1};
  const SimulationSummary s = run_monte_carlo(cfg);
  CHECK(s.reps_completed == 1);
  for (const auto& [est, st] : s.stats) {
    CHECK(st.sd == 0.0);
    CHECK(st.rmse == Catch::Approx(std::fabs(st.bias)).margin(1e-12));
  }
}

TEST_CASE("rmse^2 = bias^2 + sd^2 and aggregation is order-insensitive") {
  SimulationConfig cfg;
  cfg.model = TrueModel::II;
  cfg.N = 5;
  cfg.reps = 40;
  cfg.seed = 43;
  cfg.estimators = {Estimator::Ols, Estimator::Fe2};
  std::vector<ReplicationRecord> records(cfg.reps);
  for (int r = 0; r < cfg.reps; ++r) records[r] = run_replication(cfg, r);
  const SimulationSummary s = aggregate_replications(cfg, records);
  for (const auto& [est, st] : s.stats) {
    CHECK(st.rmse * st.rmse ==
          Catch::Approx(st.bias * st.bias + st.sd * st.sd).margin(1e-9));
    CHECK(st.coverage >= 0.0);
    CHECK(st.coverage <= 1.0);
  }
  // permuting the replication order leaves the summary unchanged
  std::vector<ReplicationRecord> shuffled = records;
  std::mt19937_64 g(7);
  std::shuffle(shuffled.begin(), shuffled.end(), g);
  const SimulationSummary s2 = aggregate_replications(cfg, shuffled);
  for (std::size_t e = 0; e < s.stats.size(); ++e) {
    CHECK(s2.stats[e].second.average ==
          Catch::Approx(s.stats[e].second.average).epsilon(1e-12));
    CHECK(s2.stats[e].second.rmse ==
          Catch::Approx(s.stats[e].second.rmse).epsilon(1e-12));
    CHECK(s2.stats[e].second.coverage == s.stats[e].second.coverage);
  }
}

TEST_CASE("failure accounting") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 5;
  cfg.reps = 300;
  cfg.seed = 47;
  cfg.estimators = {Estimator::Ols};
  std::vector<ReplicationRecord> records(5);
  for (int r = 0; r < 5; ++r) records[r] = run_replication(cfg, r);
  records.resize(300, records[0]);

  SECTION("a rare failure is excluded with a count") {
    records[7].ok = false;
    records[7].error = "synthetic failure";
    const SimulationSummary s = aggregate_replications(cfg, records);
    CHECK(s.reps_completed == 299);
    CHECK(s.reps_failed == 1);
    REQUIRE(s.failure_messages.size() == 1);
  }
  SECTION("more than 1% failures aborts") {
    for (int r = 0; r < 4; ++r) {
      records[r].ok = false;
      records[r].error = "synthetic failure";
    }
    CHECK_THROWS_AS(aggregate_replications(cfg, records), NumericError);
  }
}

TEST_CASE("monte carlo is deterministic across worker counts") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 5;
  cfg.reps = 6;
  cfg.seed = 53;
  cfg.estimators = {Estimator::Ols, Estimator::Fe1, Estimator::Post};
  cfg.grid_size = 10;
  cfg.cv_folds = 3;
  cfg.workers = 1;
  const SimulationSummary s1 = run_monte_carlo(cfg);
  cfg.workers = 4;
  const SimulationSummary s4 = run_monte_carlo(cfg);
  REQUIRE(s1.stats.size() == s4.stats.size());
  for (std::size_t e = 0; e < s1.stats.size(); ++e) {
    CHECK(s1.stats[e].second.average == s4.stats[e].second.average);  // bitwise
    CHECK(s1.stats[e].second.sd == s4.stats[e].second.sd);
    CHECK(s1.stats[e].second.rmse == s4.stats[e].second.rmse);
    CHECK(s1.stats[e].second.coverage == s4.stats[e].second.coverage);
  }
}

TEST_CASE("table emission and round trip") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 5;
  cfg.reps = 3;
  cfg.seed = 59;
  cfg.estimators = {Estimator::Ols};
  const SimulationSummary s = run_monte_carlo(cfg);

  SECTION("single estimator: 5 statistic rows, 1 column") {
    const ParsedTable t = parse_table_csv(emit_table_csv(s));
    REQUIRE(t.columns.size() == 1);
    CHECK(t.columns[0] == "OLS");
    REQUIRE(t.rows.size() == 5);
    CHECK(t.rows[0].first == "Average");
    CHECK(t.rows[4].first == "95% Coverage");
    for (const auto& [name, vals] : t.rows) REQUIRE(vals.size() == 1);
  }

  SECTION("full estimator set: canonical column order") {
    SimulationConfig full = cfg;
    full.estimators = all_estimators();
    full.reps = 2;
    full.grid_size = 8;
    full.cv_folds = 3;
    const SimulationSummary fs = run_monte_carlo(full);
    const ParsedTable t = parse_table_csv(emit_table_csv(fs));
    REQUIRE(t.columns == std::vector<std::string>{"OLS", "FE-I", "FE-II",
                                                  "FE-III", "POST"});
  }

  SECTION("request order does not change the column order") {
    SimulationConfig shuffled = cfg;
    shuffled.estimators = {Estimator::Fe3, Estimator::Ols, Estimator::Fe1};
    const SimulationSummary fs = run_monte_carlo(shuffled);
    const ParsedTable t = parse_table_csv(emit_table_csv(fs));
    REQUIRE(t.columns == std::vector<std::string>{"OLS", "FE-I", "FE-III"});
  }

  SECTION("round trip at printed precision") {
    const ParsedTable t = parse_table_csv(emit_table_csv(s));
    const EstimatorStats& st = s.stats[0].second;
    const double vals[5] = {st.average, st.bias, st.sd, st.rmse, st.coverage};
    for (int rix = 0; rix < 5; ++rix) {
      CHECK(t.rows[rix].second[0] ==
            Catch::Approx(vals[rix]).margin(1e-5 * (1 + std::fabs(vals[rix]))));
    }
  }

  SECTION("text table carries the same numbers") {
    const std::string text = emit_table_text(s);
    const ParsedTable t = parse_table_csv(emit_table_csv(s));
    for (const auto& [name, vals] : t.rows) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6g", vals[0]);
      CHECK(text.find(buf) != std::string::npos);
    }
  }
}

TEST_CASE("config validation") {
  SimulationConfig cfg;
  cfg.reps = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgError);
  cfg.reps = 1;
  cfg.N = 2;
  CHECK_THROWS_AS(cfg.validate(), ArgError);
  cfg.N = 10;
  cfg.level = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ArgError);
  cfg.level = 0.95;
  cfg.estimators.clear();
  CHECK_THROWS_AS(cfg.validate(), ArgError);
}

TEST_CASE("frozen effects are shared across replications") {
  SimulationConfig cfg;
  cfg.model = TrueModel::I;
  cfg.N = 6;
  cfg.seed = 61;
  cfg.freeze_effects = true;
  const DgpDraw a = generate_dgp(cfg, 0);
  const DgpDraw b = generate_dgp(cfg, 1);
  CHECK(a.alpha_i == b.alpha_i);
  CHECK(a.gamma_j == b.gamma_j);
  // noise still differs
  bool diff = false;
  for (std::size_t r = 0; r < a.data.observations.size(); ++r) {
    diff = diff || a.data.observations[r].y != b.data.observations[r].y;
  }
  CHECK(diff);

  cfg.freeze_effects = false;
  const DgpDraw c = generate_dgp(cfg, 0);
  const DgpDraw d = generate_dgp(cfg, 1);
  CHECK(c.alpha_i != d.alpha_i);
}
