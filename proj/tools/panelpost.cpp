// Batch front end: `fit` runs one estimator on a panel CSV, `simulate` runs
// the Monte Carlo harness, `report` re-renders tables from a JSON summary.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "panelpost/baselines.hpp"
#include "panelpost/inference.hpp"
#include "panelpost/io.hpp"
#include "panelpost/panel.hpp"
#include "panelpost/parallel.hpp"
#include "panelpost/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> parse_grid_flag(const std::string& s, const char* flag) {
  std::vector<double> grid;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      grid.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw panelpost::ArgError(std::string(flag) + ": bad value '" + item + "'");
    }
  }
  if (grid.empty()) throw panelpost::ArgError(std::string(flag) + ": empty grid");
  return grid;
}

void write_artifacts(const fs::path& out_dir, const std::string& command,
                     const json& config, const std::string& input_hash,
                     std::uint64_t seed,
                     const std::vector<std::pair<std::string, std::string>>& files) {
  fs::create_directories(out_dir);
  for (const auto& [name, content] : files) {
    panelpost::write_text_file((out_dir / name).string(), content);
  }
  const json manifest =
      panelpost::make_manifest(command, config, input_hash, seed);
  panelpost::write_text_file((out_dir / "manifest.json").string(),
                             manifest.dump(2) + "\n");
}

panelpost::CvRule parse_cv_rule(const std::string& s) {
  if (s == "min") return panelpost::CvRule::Min;
  if (s == "1se") return panelpost::CvRule::OneSe;
  throw panelpost::ArgError("--cv-rule must be 'min' or '1se'");
}

struct FitArgs {
  std::string input;
  std::string out_dir = ".";
  std::string estimator = "post";
  double level = 0.95;
  std::uint64_t seed = 0;
  std::optional<double> mu;
  std::string mu_grid;
  int cv_folds = 5;
  std::string cv_rule = "1se";
  std::string nodewise_cv_rule = "min";
  int max_sweeps = 10000;
  double tol = 1e-7;
  std::string nodewise_targets = "beta";
  std::optional<double> mu_node;
  std::string mu_node_grid;
  bool nodewise_shared_mu = false;
};

int run_fit(const FitArgs& a) {
  const std::string csv_bytes = panelpost::read_text_file(a.input);
  std::istringstream csv_in(csv_bytes);
  const panelpost::PanelDataset data = panelpost::parse_panel_csv(csv_in);

  json config{{"input", a.input},       {"estimator", a.estimator},
              {"level", a.level},       {"seed", a.seed},
              {"cv_folds", a.cv_folds}, {"cv_rule", a.cv_rule},
              {"nodewise_cv_rule", a.nodewise_cv_rule},
              {"max_sweeps", a.max_sweeps},
              {"tol", a.tol},           {"nodewise_targets", a.nodewise_targets},
              {"nodewise_shared_mu", a.nodewise_shared_mu}};
  if (a.mu) config["mu"] = *a.mu;
  if (!a.mu_grid.empty()) config["mu_grid"] = a.mu_grid;
  if (a.mu_node) config["mu_node"] = *a.mu_node;
  if (!a.mu_node_grid.empty()) config["mu_node_grid"] = a.mu_node_grid;

  std::string report_json_text, report_csv_text;
  if (a.estimator == "post") {
    panelpost::PostConfig pc;
    pc.level = a.level;
    pc.seed = a.seed;
    pc.cv_folds = a.cv_folds;
    pc.cv_rule = parse_cv_rule(a.cv_rule);
    pc.nodewise_cv_rule = parse_cv_rule(a.nodewise_cv_rule);
    pc.mu = a.mu;
    if (!a.mu_grid.empty()) pc.mu_grid = parse_grid_flag(a.mu_grid, "--mu-grid");
    pc.mu_node = a.mu_node;
    if (!a.mu_node_grid.empty()) {
      pc.mu_node_grid = parse_grid_flag(a.mu_node_grid, "--mu-node-grid");
    }
    pc.shared_mu_node = a.nodewise_shared_mu;
    pc.solver.max_sweeps = a.max_sweeps;
    pc.solver.tol = a.tol;
    pc.workers = panelpost::worker_count_from_env();
    if (a.nodewise_targets == "all") {
      const panelpost::DesignLayout L{data.N, data.M, data.T, data.k};
      pc.targets.resize(L.p());
      for (int c = 0; c < L.p(); ++c) pc.targets[c] = c;
    } else if (a.nodewise_targets != "beta") {
      throw panelpost::ArgError("--nodewise-targets must be 'beta' or 'all'");
    }
    const panelpost::InferenceReport rep = panelpost::run_post_inference(data, pc);
    report_json_text = panelpost::inference_report_json(rep).dump(2) + "\n";
    report_csv_text = panelpost::inference_report_csv(rep);
  } else {
    panelpost::FeVariant v;
    if (a.estimator == "ols") v = panelpost::FeVariant::None;
    else if (a.estimator == "fe1") v = panelpost::FeVariant::Fe1;
    else if (a.estimator == "fe2") v = panelpost::FeVariant::Fe2;
    else if (a.estimator == "fe3") v = panelpost::FeVariant::Fe3;
    else {
      throw panelpost::ArgError("--estimator must be ols, fe1, fe2, fe3 or post");
    }
    const panelpost::FeFitResult fit = panelpost::fe_fit(data, v);
    report_json_text =
        panelpost::baseline_report_json(data, v, fit, a.level).dump(2) + "\n";
    report_csv_text = panelpost::baseline_report_csv(data, fit, a.level);
  }

  write_artifacts(a.out_dir, "fit", config, panelpost::fnv1a64_hex(csv_bytes),
                  a.seed,
                  {{"report.json", report_json_text},
                   {"report.csv", report_csv_text}});
  std::cout << report_csv_text;
  return 0;
}

struct SimArgs {
  int model = 0;
  int n = 0;
  int m = 0;
  int t = 5;
  int reps = 1000;
  std::uint64_t seed = 0;
  std::string estimators = "ols,fe1,fe2,fe3,post";
  std::string out_dir = ".";
  double level = 0.95;
  int cv_folds = 5;
  std::string cv_rule = "1se";
  std::string nodewise_cv_rule = "min";
  bool freeze_effects = false;
  int shock_period = 0;
  double beta = 1.0, rho = 0.5, s_eps = 10.0, s_x = 2.0;
  double s_alpha = 1.0, s_gamma = 1.0, lambda_shock = 2.0;
};

int run_simulate(const SimArgs& a) {
  panelpost::SimulationConfig cfg;
  if (a.model < 1 || a.model > 3) {
    throw panelpost::ArgError("--model must be 1, 2 or 3");
  }
  cfg.model = static_cast<panelpost::TrueModel>(a.model);
  cfg.N = a.n;
  cfg.M = a.m;
  cfg.T = a.t;
  cfg.reps = a.reps;
  cfg.seed = a.seed;
  cfg.level = a.level;
  cfg.cv_folds = a.cv_folds;
  cfg.cv_rule = parse_cv_rule(a.cv_rule);
  cfg.nodewise_cv_rule = parse_cv_rule(a.nodewise_cv_rule);
  cfg.freeze_effects = a.freeze_effects;
  cfg.dgp.shock_period = a.shock_period;
  cfg.dgp.beta = a.beta;
  cfg.dgp.rho = a.rho;
  cfg.dgp.s_eps = a.s_eps;
  cfg.dgp.s_x = a.s_x;
  cfg.dgp.s_alpha = a.s_alpha;
  cfg.dgp.s_gamma = a.s_gamma;
  cfg.dgp.lambda_shock = a.lambda_shock;
  cfg.estimators.clear();
  std::stringstream ss(a.estimators);
  std::string item;
  while (std::getline(ss, item, ',')) {
    cfg.estimators.push_back(panelpost::parse_estimator(item));
  }
  cfg.validate();

  const panelpost::SimulationSummary summary = panelpost::run_monte_carlo(cfg);
  const std::string table_text = panelpost::emit_table_text(summary);
  const std::string table_csv = panelpost::emit_table_csv(summary);
  const json summary_j = panelpost::summary_json(summary);

  json config{{"model", a.model},
              {"n", a.n},
              {"m", cfg.resolved_M()},
              {"t", a.t},
              {"reps", a.reps},
              {"seed", a.seed},
              {"estimators", a.estimators},
              {"level", a.level},
              {"cv_folds", a.cv_folds},
              {"cv_rule", a.cv_rule},
              {"nodewise_cv_rule", a.nodewise_cv_rule},
              {"freeze_effects", a.freeze_effects},
              {"shock_period", cfg.resolved_shock_period()},
              {"beta", a.beta},
              {"rho", a.rho},
              {"s_eps", a.s_eps},
              {"s_x", a.s_x},
              {"s_alpha", a.s_alpha},
              {"s_gamma", a.s_gamma},
              {"lambda_shock", a.lambda_shock}};
  write_artifacts(a.out_dir, "simulate", config,
                  panelpost::fnv1a64_hex(config.dump()), a.seed,
                  {{"table.csv", table_csv},
                   {"summary.json", summary_j.dump(2) + "\n"}});
  std::cout << table_text;
  return 0;
}

int run_report(const std::string& summary_path, const std::string& csv_out) {
  const json j = json::parse(panelpost::read_text_file(summary_path));
  const panelpost::SimulationSummary summary = panelpost::summary_from_json(j);
  std::cout << panelpost::emit_table_text(summary);
  if (!csv_out.empty()) {
    panelpost::write_text_file(csv_out, panelpost::emit_table_csv(summary));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(panelpost::kToolVersion) +
               " - post-selection inference for three-dimensional panels"};
  app.require_subcommand(1);

  FitArgs fit;
  CLI::App* fit_cmd = app.add_subcommand(
      "fit", "Fit one estimator on a long-format panel CSV");
  fit_cmd->add_option("input", fit.input, "panel CSV (header i,j,t,y,x1,...)")
      ->required();
  fit_cmd->add_option("--out-dir", fit.out_dir, "artifact directory");
  fit_cmd->add_option("--estimator", fit.estimator,
                      "ols | fe1 | fe2 | fe3 | post");
  fit_cmd->add_option("--level", fit.level, "confidence level (default 0.95)");
  fit_cmd->add_option("--seed", fit.seed, "seed for CV fold assignment");
  double fit_mu = -1.0;
  CLI::Option* fit_mu_opt =
      fit_cmd->add_option("--mu", fit_mu, "fixed lasso penalty (skips CV)");
  fit_cmd->add_option("--mu-grid", fit.mu_grid,
                      "comma-separated descending CV grid");
  fit_cmd->add_option("--cv-folds", fit.cv_folds, "CV folds (default 5)");
  fit_cmd->add_option("--cv-rule", fit.cv_rule,
                      "penalty pick off the CV curve: 1se (default) or min");
  fit_cmd->add_option("--nodewise-cv-rule", fit.nodewise_cv_rule,
                      "CV rule for the nodewise penalties (default min)");
  fit_cmd->add_option("--max-sweeps", fit.max_sweeps, "solver sweep cap");
  fit_cmd->add_option("--tol", fit.tol, "solver convergence tolerance");
  fit_cmd->add_option("--nodewise-targets", fit.nodewise_targets,
                      "beta (default) or all");
  double fit_mu_node = -1.0;
  CLI::Option* fit_mu_node_opt = fit_cmd->add_option(
      "--mu-node", fit_mu_node, "fixed nodewise penalty (skips CV)");
  fit_cmd->add_option("--mu-node-grid", fit.mu_node_grid,
                      "comma-separated descending nodewise CV grid");
  fit_cmd->add_flag("--nodewise-shared-mu", fit.nodewise_shared_mu,
                    "tune once on the first target and reuse");

  SimArgs sim;
  CLI::App* sim_cmd =
      app.add_subcommand("simulate", "Run the Monte Carlo harness");
  sim_cmd->add_option("--model", sim.model, "true model: 1, 2 or 3")->required();
  sim_cmd->add_option("--n", sim.n, "number of origin units N")->required();
  sim_cmd->add_option("--m", sim.m, "destination units M (default N-1)");
  sim_cmd->add_option("--t", sim.t, "periods T (default 5)");
  sim_cmd->add_option("--reps", sim.reps, "Monte Carlo replications");
  sim_cmd->add_option("--seed", sim.seed, "simulation seed")->required();
  sim_cmd->add_option("--estimators", sim.estimators,
                      "comma list of ols,fe1,fe2,fe3,post");
  sim_cmd->add_option("--out-dir", sim.out_dir, "artifact directory");
  sim_cmd->add_option("--level", sim.level, "confidence level");
  sim_cmd->add_option("--cv-folds", sim.cv_folds, "CV folds for POST");
  sim_cmd->add_option("--cv-rule", sim.cv_rule,
                      "penalty pick off the CV curve: 1se (default) or min");
  sim_cmd->add_option("--nodewise-cv-rule", sim.nodewise_cv_rule,
                      "CV rule for the nodewise penalties (default min)");
  sim_cmd->add_flag("--freeze-effects", sim.freeze_effects,
                    "draw fixed effects once and reuse across replications");
  sim_cmd->add_option("--shock-period", sim.shock_period,
                      "period of the lambda shock (default ceil(T/2))");
  sim_cmd->add_option("--beta", sim.beta, "true coefficient");
  sim_cmd->add_option("--rho", sim.rho, "mixture weight of fixed effects in x");
  sim_cmd->add_option("--s-eps", sim.s_eps, "noise standard deviation");
  sim_cmd->add_option("--s-x", sim.s_x, "regressor scale");
  sim_cmd->add_option("--s-alpha", sim.s_alpha, "alpha scale");
  sim_cmd->add_option("--s-gamma", sim.s_gamma, "gamma scale");
  sim_cmd->add_option("--lambda-shock", sim.lambda_shock, "shock size");

  std::string report_input, report_csv;
  CLI::App* report_cmd = app.add_subcommand(
      "report", "Re-render a table from a summary.json");
  report_cmd->add_option("summary", report_input, "summary.json path")
      ->required();
  report_cmd->add_option("--csv", report_csv, "also write the CSV table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fit_cmd->parsed()) {
      if (*fit_mu_opt) fit.mu = fit_mu;
      if (*fit_mu_node_opt) fit.mu_node = fit_mu_node;
      return run_fit(fit);
    }
    if (sim_cmd->parsed()) return run_simulate(sim);
    if (report_cmd->parsed()) return run_report(report_input, report_csv);
  } catch (const panelpost::ArgError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const panelpost::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const panelpost::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
