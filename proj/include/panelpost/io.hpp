#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelpost/baselines.hpp"
#include "panelpost/errors.hpp"
#include "panelpost/inference.hpp"
#include "panelpost/panel.hpp"
#include "panelpost/simulation.hpp"

namespace panelpost {

inline constexpr const char* kToolVersion = "panelpost 0.1.0";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string f = line.substr(start, comma - start);
    // trim spaces and a trailing CR
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r' || f.back() == '\t')) f.pop_back();
    std::size_t b = 0;
    while (b < f.size() && (f[b] == ' ' || f[b] == '\t')) ++b;
    fields.push_back(f.substr(b));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline int parse_int_field(const std::string& s, int line_no, const char* what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("line " + std::to_string(line_no) + ": field '" + what +
                    "' is not an integer: '" + s + "'");
  }
  return v;
}

inline double parse_double_field(const std::string& s, int line_no,
                                 const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": field '" + what +
                    "' is not a number: '" + s + "'");
  }
}

inline std::string fmt_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Long-format panel CSV with header `i,j,t,y,x1,...,xk`; indices 1-based.
// Dimensions are inferred from the maxima; balance is enforced afterwards by
// PanelDataset::validate.
inline PanelDataset parse_panel_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: no header line");
  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.size() < 5 || header[0] != "i" || header[1] != "j" ||
      header[2] != "t" || header[3] != "y") {
    throw DataError("header must be 'i,j,t,y,x1,...,xk' (got '" + line + "')");
  }
  const int k = static_cast<int>(header.size()) - 4;
  for (int l = 0; l < k; ++l) {
    if (header[4 + l] != "x" + std::to_string(l + 1)) {
      throw DataError("header column " + std::to_string(5 + l) +
                      " must be 'x" + std::to_string(l + 1) + "' (got '" +
                      header[4 + l] + "')");
    }
  }

  PanelDataset ds;
  ds.k = k;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(f.size()));
    }
    PanelObservation o;
    o.i = detail::parse_int_field(f[0], line_no, "i");
    o.j = detail::parse_int_field(f[1], line_no, "j");
    o.t = detail::parse_int_field(f[2], line_no, "t");
    o.y = detail::parse_double_field(f[3], line_no, "y");
    o.x.resize(k);
    for (int l = 0; l < k; ++l) {
      o.x[l] = detail::parse_double_field(f[4 + l], line_no,
                                          ("x" + std::to_string(l + 1)).c_str());
    }
    if (o.i < 1 || o.j < 1 || o.t < 1) {
      throw DataError("line " + std::to_string(line_no) +
                      ": indices must be 1-based positive");
    }
    ds.N = std::max(ds.N, o.i);
    ds.M = std::max(ds.M, o.j);
    ds.T = std::max(ds.T, o.t);
    ds.observations.push_back(std::move(o));
  }
  ds.validate();
  return ds;
}

inline void serialize_panel_csv(const PanelDataset& ds, std::ostream& out) {
  out << "i,j,t,y";
  for (int l = 1; l <= ds.k; ++l) out << ",x" << l;
  out << "\n";
  for (const auto& o : ds.observations) {
    out << o.i << "," << o.j << "," << o.t << "," << detail::fmt_full(o.y);
    for (double v : o.x) out << "," << detail::fmt_full(v);
    out << "\n";
  }
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string fnv1a64_hex(const std::string& bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

inline nlohmann::json layout_json(const DesignLayout& L) {
  return nlohmann::json{{"N", L.N},   {"M", L.M},   {"T", L.T},
                        {"k", L.k},   {"k0", L.k0()}, {"N0", L.N0()},
                        {"M0", L.M0()}, {"p", L.p()}, {"rows", L.rows()}};
}

inline nlohmann::json inference_report_json(const InferenceReport& r) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& c : r.coordinates) {
    coords.push_back({{"name", c.name},
                      {"column", c.column},
                      {"estimate_lasso", c.estimate_lasso},
                      {"estimate_debiased", c.estimate_debiased},
                      {"std_error", c.std_error},
                      {"v_hat", c.v_hat},
                      {"ci", {c.ci_low, c.ci_high}},
                      {"level", r.level},
                      {"mu_node", c.mu_node}});
  }
  return nlohmann::json{{"estimator", "post"},
                        {"layout", layout_json(r.layout)},
                        {"n", r.n},
                        {"level", r.level},
                        {"mu", r.mu},
                        {"cv_folds", r.cv_folds},
                        {"seed", r.seed},
                        {"active_set_size", r.active_set_size},
                        {"lasso_converged", r.lasso_converged},
                        {"coordinates", coords}};
}

inline std::string inference_report_csv(const InferenceReport& r) {
  std::ostringstream os;
  os << "name,estimate_lasso,estimate_debiased,std_error,ci_low,ci_high,level\n";
  for (const auto& c : r.coordinates) {
    os << c.name << "," << detail::fmt6(c.estimate_lasso) << ","
       << detail::fmt6(c.estimate_debiased) << "," << detail::fmt6(c.std_error)
       << "," << detail::fmt6(c.ci_low) << "," << detail::fmt6(c.ci_high) << ","
       << detail::fmt6(r.level) << "\n";
  }
  return os.str();
}

inline nlohmann::json baseline_report_json(const PanelDataset& ds,
                                           FeVariant variant,
                                           const FeFitResult& fit,
                                           double level) {
  DesignLayout L{ds.N, ds.M, ds.T, ds.k};
  nlohmann::json coords = nlohmann::json::array();
  for (int l = 0; l < ds.k; ++l) {
    const auto ci = baseline_ci(fit.beta[l], fit.se[l], level);
    coords.push_back({{"name", "beta_" + std::to_string(l + 1)},
                      {"estimate", fit.beta[l]},
                      {"std_error", fit.se[l]},
                      {"ci", {ci.first, ci.second}},
                      {"level", level}});
  }
  return nlohmann::json{{"estimator", fe_variant_name(variant)},
                        {"layout", layout_json(L)},
                        {"n", ds.N * ds.M * ds.T},
                        {"level", level},
                        {"rss", fit.rss},
                        {"coordinates", coords}};
}

inline std::string baseline_report_csv(const PanelDataset& ds,
                                       const FeFitResult& fit, double level) {
  std::ostringstream os;
  os << "name,estimate,std_error,ci_low,ci_high,level\n";
  for (int l = 0; l < ds.k; ++l) {
    const auto ci = baseline_ci(fit.beta[l], fit.se[l], level);
    os << "beta_" << (l + 1) << "," << detail::fmt6(fit.beta[l]) << ","
       << detail::fmt6(fit.se[l]) << "," << detail::fmt6(ci.first) << ","
       << detail::fmt6(ci.second) << "," << detail::fmt6(level) << "\n";
  }
  return os.str();
}

inline nlohmann::json summary_json(const SimulationSummary& s) {
  nlohmann::json stats = nlohmann::json::object();
  for (const auto& [est, st] : s.stats) {
    stats[estimator_key(est)] = {{"average", st.average},
                                 {"bias", st.bias},
                                 {"sd", st.sd},
                                 {"rmse", st.rmse},
                                 {"coverage", st.coverage}};
  }
  nlohmann::json est_list = nlohmann::json::array();
  for (const auto& [est, st] : s.stats) est_list.push_back(estimator_key(est));
  return nlohmann::json{{"model", static_cast<int>(s.model)},
                        {"N", s.N},
                        {"M", s.M},
                        {"T", s.T},
                        {"reps_requested", s.reps_requested},
                        {"reps_completed", s.reps_completed},
                        {"reps_failed", s.reps_failed},
                        {"seed", s.seed},
                        {"level", s.level},
                        {"beta_true", s.beta_true},
                        {"estimators", est_list},
                        {"stats", stats}};
}

inline SimulationSummary summary_from_json(const nlohmann::json& j) {
  SimulationSummary s;
  s.model = static_cast<TrueModel>(j.at("model").get<int>());
  s.N = j.at("N").get<int>();
  s.M = j.at("M").get<int>();
  s.T = j.at("T").get<int>();
  s.reps_requested = j.at("reps_requested").get<int>();
  s.reps_completed = j.at("reps_completed").get<int>();
  s.reps_failed = j.at("reps_failed").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.level = j.at("level").get<double>();
  s.beta_true = j.at("beta_true").get<double>();
  for (const auto& key : j.at("estimators")) {
    const Estimator est = parse_estimator(key.get<std::string>());
    const auto& st = j.at("stats").at(key.get<std::string>());
    EstimatorStats es;
    es.average = st.at("average").get<double>();
    es.bias = st.at("bias").get<double>();
    es.sd = st.at("sd").get<double>();
    es.rmse = st.at("rmse").get<double>();
    es.coverage = st.at("coverage").get<double>();
    s.stats.emplace_back(est, es);
  }
  return s;
}

// Every artifact directory carries exactly one manifest describing the run.
inline nlohmann::json make_manifest(const std::string& command,
                                    const nlohmann::json& config,
                                    const std::string& input_hash,
                                    std::uint64_t seed) {
  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return nlohmann::json{{"command", command},
                        {"config", config},
                        {"input_hash", input_hash},
                        {"tool_version", kToolVersion},
                        {"timestamp", stamp},
                        {"seed", seed}};
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << text;
  if (!out) throw DataError("failed writing: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace panelpost
