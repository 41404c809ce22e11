#include "metasim/cli_io.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace metasim {

namespace fs = std::filesystem;

SimulationConfig profile_config(const std::string& profile) {
  SimulationConfig cfg;
  cfg.profile = profile;
  if (profile == "full") {
    cfg.grid = ScenarioGrid::table1();
    cfg.estimators = all_estimators();
  } else if (profile == "desk") {
    cfg.grid = ScenarioGrid::desk();
    cfg.estimators = two_stage_estimators();
  } else if (profile == "glmm-desk") {
    cfg.grid = ScenarioGrid::glmm_desk();
    cfg.estimators = all_estimators();
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected full, desk or glmm-desk)");
  }
  return cfg;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty item in list '" + text + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("'" + s + "' is not a number");
  }
  return v;
}

template <typename Int>
Int to_int(const std::string& s) {
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("'" + s + "' is not an integer");
  }
  return v;
}

template <typename T, typename Fn>
std::vector<T> map_list(const std::string& text, Fn fn) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(fn(item));
  return out;
}

std::string join_numbers(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_number(v[i]);
  }
  return out;
}

template <typename T, typename Fn>
std::string join(const std::vector<T>& v, Fn fn) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += fn(v[i]);
  }
  return out;
}

void apply_key(SimulationConfig& cfg, const std::string& key, const std::string& value) {
  auto& g = cfg.grid;
  auto& a = cfg.analysis;
  if (key == "K") {
    g.K = map_list<int>(value, to_int<int>);
  } else if (key == "n") {
    g.n = map_list<int>(value, to_int<int>);
  } else if (key == "theta") {
    g.theta = map_list<double>(value, to_double);
  } else if (key == "tau2") {
    g.tau2 = map_list<double>(value, to_double);
  } else if (key == "p_c") {
    g.p_c = map_list<double>(value, to_double);
  } else if (key == "sigma2") {
    g.sigma2 = map_list<double>(value, to_double);
  } else if (key == "dgm") {
    g.dgm = map_list<DgmKind>(value, [](const std::string& s) {
      try {
        return parse_dgm(s);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    });
  } else if (key == "M") {
    g.M = to_int<int>(value);
    if (g.M < 1) throw ConfigError("M must be >= 1");
  } else if (key == "seed") {
    g.master_seed = to_int<std::uint64_t>(value);
  } else if (key == "estimators") {
    cfg.estimators = parse_estimator_list(value);
  } else if (key == "zero_cell") {
    try {
      a.zero_cell = parse_zero_cell_policy(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "ssw_variance") {
    try {
      a.ssw_variance = parse_ssw_variance(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "level") {
    a.level = to_double(value);
    if (!(a.level > 0.0 && a.level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  } else if (key == "quadrature_order") {
    a.glmm.quadrature_order = to_int<int>(value);
    if (a.glmm.quadrature_order < 1 || a.glmm.quadrature_order > 200) {
      throw ConfigError("quadrature_order must lie in [1, 200]");
    }
  } else if (key == "glmm_restarts") {
    a.glmm.restarts = to_int<int>(value);
    if (a.glmm.restarts < 1 || a.glmm.restarts > 3) {
      throw ConfigError("glmm_restarts must lie in [1, 3]");
    }
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

}  // namespace

std::vector<EstimatorKind> parse_estimator_list(const std::string& text) {
  std::vector<EstimatorKind> out;
  for (const auto& item : split_list(text)) {
    try {
      const auto e = parse_estimator(item);
      if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
  }
  return out;
}

SimulationConfig parse_config(std::istream& in) {
  std::vector<std::pair<std::size_t, std::pair<std::string, std::string>>> entries;
  std::set<std::string> seen;
  std::string profile = "desk";
  bool profile_given = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    if (key == "profile") {
      profile = value;
      profile_given = true;
      continue;
    }
    entries.push_back({line_no, {key, value}});
  }
  if (entries.empty() && !profile_given) throw ConfigError("configuration is empty");

  SimulationConfig cfg = profile_config(profile);
  cfg.profile = profile_given ? profile : "custom";
  for (const auto& [no, kv] : entries) {
    try {
      apply_key(cfg, kv.first, kv.second);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(no) + ": " + e.what());
    }
  }
  try {
    expand_grid(cfg.grid);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.estimators.empty()) throw ConfigError("no estimators selected");
  return cfg;
}

SimulationConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return parse_config(in);
}

std::string render_config(const SimulationConfig& cfg) {
  const auto& g = cfg.grid;
  const auto& a = cfg.analysis;
  std::ostringstream os;
  os << "# metasim simulation config\n"
     << "K = " << join(g.K, [](int v) { return std::to_string(v); }) << '\n'
     << "n = " << join(g.n, [](int v) { return std::to_string(v); }) << '\n'
     << "theta = " << join_numbers(g.theta) << '\n'
     << "tau2 = " << join_numbers(g.tau2) << '\n'
     << "p_c = " << join_numbers(g.p_c) << '\n'
     << "sigma2 = " << join_numbers(g.sigma2) << '\n'
     << "dgm = " << join(g.dgm, [](DgmKind d) { return to_string(d); }) << '\n'
     << "M = " << g.M << '\n'
     << "seed = " << g.master_seed << '\n'
     << "estimators = " << join(cfg.estimators, [](EstimatorKind e) { return to_string(e); })
     << '\n'
     << "zero_cell = " << to_string(a.zero_cell) << '\n'
     << "ssw_variance = " << to_string(a.ssw_variance) << '\n'
     << "level = " << format_number(a.level) << '\n'
     << "quadrature_order = " << a.glmm.quadrature_order << '\n'
     << "glmm_restarts = " << a.glmm.restarts << '\n';
  return os.str();
}

namespace {

void report_error(std::ostream& err, const std::string& event, const std::string& msg) {
  err << "level=error event=" << event << " msg=\"" << msg << "\"\n";
}

}  // namespace

int cmd_simulate(const SimulateArgs& args, std::ostream& err) {
  SimulationConfig cfg;
  try {
    if (args.config) {
      cfg = load_config(*args.config);
      if (args.profile) throw ConfigError("use either --config or --profile, not both");
    } else if (args.profile) {
      cfg = profile_config(*args.profile);
    } else {
      throw ConfigError("either --config or --profile is required");
    }
    if (args.seed) cfg.grid.master_seed = *args.seed;
    if (args.methods) cfg.estimators = parse_estimator_list(*args.methods);
    if (args.threads < 1) throw ConfigError("thread count must be >= 1");
  } catch (const ConfigError& e) {
    report_error(err, "config_error", e.what());
    return kExitConfig;
  }

  RunOptions opts;
  opts.threads = args.threads;
  opts.require_existing = args.resume;
  opts.stop_after = args.stop_after;
  opts.log = [&err](const std::string& msg) { err << "level=info " << msg << '\n'; };
  try {
    const auto summary = run_simulation(cfg, args.out, opts);
    if (!summary.complete) return kExitPartial;
    if (summary.failed_rows > 0) {
      err << "level=warn event=partial_failure failed_rows=" << summary.failed_rows << '\n';
      return kExitPartial;
    }
  } catch (const ManifestMismatch& e) {
    report_error(err, "manifest_mismatch", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    report_error(err, "run_failed", e.what());
    return kExitPartial;
  }
  return kExitOk;
}

int cmd_estimate(const EstimateArgs& args, std::ostream& out, std::ostream& err) {
  std::vector<Study2x2> studies;
  std::vector<EstimatorKind> methods;
  try {
    std::ifstream in(args.csv);
    if (!in) throw std::runtime_error("cannot read " + args.csv.string());
    studies = read_studies_csv(in);
    methods = parse_estimator_list(args.methods);
  } catch (const std::exception& e) {
    report_error(err, "input_error", e.what());
    return kExitConfig;
  }

  AnalysisConfig cfg;
  cfg.zero_cell = args.zero_cell;
  cfg.ssw_variance = args.ssw_variance;
  cfg.level = args.level;

  const auto effects = effects_of(studies, cfg.zero_cell);
  const auto usable = std::count_if(effects.begin(), effects.end(), [](const auto& e) { return e.usable; });
  if (studies.size() < 2 || usable < 2) {
    report_error(err, "estimation_error",
                 "need at least 2 usable studies, found " + std::to_string(usable));
    return kExitConfig;
  }
  const MetaDataset ds(studies);

  auto interval = [](const ConfidenceInterval& ci) {
    return nlohmann::ordered_json{{"lo", ci.lo}, {"hi", ci.hi}, {"level", ci.level}};
  };
  auto tau2_json = [](const Tau2Estimate& t) {
    return nlohmann::ordered_json{{"converged", t.converged},
                                  {"iterations", t.iterations},
                                  {"truncated", t.truncated}};
  };

  for (const auto kind : methods) {
    nlohmann::ordered_json rec;
    try {
      switch (kind) {
        case EstimatorKind::kDL:
        case EstimatorKind::kREML:
        case EstimatorKind::kMP:
        case EstimatorKind::kKD: {
          Tau2Estimate t;
          std::string name = to_string(kind);
          if (kind == EstimatorKind::kDL) t = tau2_dl(effects);
          if (kind == EstimatorKind::kREML) t = tau2_reml(effects, cfg.root);
          if (kind == EstimatorKind::kMP) t = tau2_mp(effects, cfg.root);
          if (kind == EstimatorKind::kKD) {
            t = cfg.kd.estimate(effects);
            name = cfg.kd.label;
          }
          const auto p = iv_pool(effects, t.value);
          rec = {{"method", name}, {"tau2", t.value}, {"theta", p.theta_hat}, {"se", p.se},
                 {"ci", interval(wald_ci(p, cfg.level))}, {"k_used", usable},
                 {"diagnostics", tau2_json(t)}};
          break;
        }
        case EstimatorKind::kSSW: {
          const auto kd = cfg.kd.estimate(effects);
          const auto p = ssw_pooled(effects, studies, kd, cfg.ssw_variance);
          rec = {{"method", "SSW"}, {"tau2", kd.value}, {"tau2_source", cfg.kd.label},
                 {"theta", p.theta_hat}, {"se", p.se}, {"df", p.df},
                 {"ci", interval(wald_ci(p, cfg.level))}, {"k_used", usable},
                 {"variance_form", to_string(cfg.ssw_variance)}, {"diagnostics", tau2_json(kd)}};
          break;
        }
        case EstimatorKind::kFIM2:
        case EstimatorKind::kRIM2: {
          const bool fim = kind == EstimatorKind::kFIM2;
          const auto fit = fim ? fit_fim2(ds, cfg.glmm) : fit_rim2(ds, cfg.glmm);
          rec = {{"method", to_string(kind)}, {"tau2", fit.tau2_hat}, {"theta", fit.theta},
                 {"se", fit.se_theta}};
          if (const auto ci = glmm_ci(fit, cfg.level)) {
            rec["ci"] = interval(*ci);
          } else {
            rec["ci"] = nullptr;
          }
          if (!fim) rec["sigma2"] = fit.sigma2_hat;
          rec["k_used"] = ds.K();
          rec["diagnostics"] = {{"converged", fit.converged},
                                {"iterations", fit.iterations},
                                {"loglik", fit.loglik},
                                {"gradient_norm", fit.gradient_norm},
                                {"tau_at_boundary", fit.tau_at_boundary},
                                {"message", fit.diagnostic}};
          if (!fim) rec["diagnostics"]["sigma_at_boundary"] = fit.sigma_at_boundary;
          break;
        }
      }
    } catch (const std::exception& e) {
      rec = {{"method", to_string(kind)}, {"error", e.what()}};
    }
    out << rec.dump() << '\n';
  }
  return kExitOk;
}

}  // namespace metasim
