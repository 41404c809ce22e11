#include "metasim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

namespace metasim {

namespace fs = std::filesystem;

ScenarioGrid ScenarioGrid::table1() {
  ScenarioGrid g;
  g.K = {5, 10, 30};
  g.n = {40, 100, 250, 1000};
  g.theta = {0.0, 0.5, 1.0, 1.5, 2.0};
  for (int i = 0; i <= 10; ++i) g.tau2.push_back(i / 10.0);
  g.p_c = {0.1, 0.4};
  g.sigma2 = {0.1, 0.4};
  g.dgm.assign(std::begin(kAllDgms), std::end(kAllDgms));
  g.M = 1000;
  return g;
}

ScenarioGrid ScenarioGrid::desk() {
  ScenarioGrid g = table1();
  g.K = {5, 30};
  g.n = {40, 250};
  g.theta = {0.0, 1.0, 2.0};
  g.tau2 = {0.0, 0.4, 1.0};
  return g;
}

ScenarioGrid ScenarioGrid::glmm_desk() {
  ScenarioGrid g = desk();
  g.M = 250;
  return g;
}

namespace {

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

template <typename T>
void require_nonempty(const std::vector<T>& v, const char* name) {
  if (v.empty()) throw std::invalid_argument(std::string("grid axis '") + name + "' is empty");
}

}  // namespace

std::vector<Scenario> expand_grid(const ScenarioGrid& g) {
  require_nonempty(g.K, "K");
  require_nonempty(g.n, "n");
  require_nonempty(g.theta, "theta");
  require_nonempty(g.tau2, "tau2");
  require_nonempty(g.p_c, "p_c");
  require_nonempty(g.sigma2, "sigma2");
  require_nonempty(g.dgm, "dgm");
  if (g.M < 1) throw std::invalid_argument("M must be >= 1");

  const auto ks = sorted_unique(g.K);
  const auto ns = sorted_unique(g.n);
  const auto thetas = sorted_unique(g.theta);
  const auto tau2s = sorted_unique(g.tau2);
  const auto pcs = sorted_unique(g.p_c);
  const auto sigma2s = sorted_unique(g.sigma2);
  const auto dgms = sorted_unique(g.dgm);

  std::vector<Scenario> out;
  for (DgmKind dgm : dgms) {
    const std::vector<double> sig = is_fixed_intercept(dgm) ? std::vector<double>{0.0} : sigma2s;
    for (int K : ks) {
      for (int n : ns) {
        for (double theta : thetas) {
          for (double tau2 : tau2s) {
            for (double pc : pcs) {
              for (double s2 : sig) {
                Scenario sc{K, n, theta, tau2, pc, s2, dgm};
                sc.validate();
                out.push_back(sc);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

std::string to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::kDL: return "DL";
    case EstimatorKind::kREML: return "REML";
    case EstimatorKind::kMP: return "MP";
    case EstimatorKind::kKD: return "KD";
    case EstimatorKind::kSSW: return "SSW";
    case EstimatorKind::kFIM2: return "FIM2";
    case EstimatorKind::kRIM2: return "RIM2";
  }
  return "?";
}

EstimatorKind parse_estimator(const std::string& text) {
  std::string up;
  for (char ch : text) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  for (EstimatorKind e : all_estimators()) {
    if (to_string(e) == up) return e;
  }
  throw std::invalid_argument("unknown estimator '" + text + "'");
}

std::vector<EstimatorKind> two_stage_estimators() {
  return {EstimatorKind::kDL, EstimatorKind::kREML, EstimatorKind::kMP, EstimatorKind::kKD,
          EstimatorKind::kSSW};
}

std::vector<EstimatorKind> all_estimators() {
  auto v = two_stage_estimators();
  v.push_back(EstimatorKind::kFIM2);
  v.push_back(EstimatorKind::kRIM2);
  return v;
}

const std::vector<EffectEstimate>& ReplicationContext::effects() {
  if (!effects_) effects_ = effects_of(ds_.studies(), cfg_.zero_cell);
  return *effects_;
}

int ReplicationContext::excluded_studies() {
  const auto& e = effects();
  return static_cast<int>(std::count_if(e.begin(), e.end(), [](const auto& x) { return !x.usable; }));
}

const Tau2Estimate& ReplicationContext::kd_tau2() {
  if (!kd_) kd_ = cfg_.kd.estimate(effects());
  return *kd_;
}

namespace {

std::optional<EstimatorOutput> inverse_variance(ReplicationContext& ctx, const Tau2Estimate& t) {
  if (!t.converged) return std::nullopt;
  const auto pooled = iv_pool(ctx.effects(), t.value);
  return EstimatorOutput{t.value, pooled.theta_hat, wald_ci(pooled, ctx.config().level)};
}

std::optional<EstimatorOutput> from_fit(const FitResult& fit, double level) {
  const auto ci = glmm_ci(fit, level);
  if (!ci) return std::nullopt;
  return EstimatorOutput{fit.tau2_hat, fit.theta, *ci};
}

}  // namespace

Estimator make_estimator(EstimatorKind kind, const AnalysisConfig& cfg) {
  switch (kind) {
    case EstimatorKind::kDL:
      return {"DL", true, [](ReplicationContext& c) {
                return inverse_variance(c, tau2_dl(c.effects()));
              }};
    case EstimatorKind::kREML:
      return {"REML", true, [](ReplicationContext& c) {
                return inverse_variance(c, tau2_reml(c.effects(), c.config().root));
              }};
    case EstimatorKind::kMP:
      return {"MP", true, [](ReplicationContext& c) {
                return inverse_variance(c, tau2_mp(c.effects(), c.config().root));
              }};
    case EstimatorKind::kKD:
      return {cfg.kd.label, true, [](ReplicationContext& c) {
                return inverse_variance(c, c.kd_tau2());
              }};
    case EstimatorKind::kSSW:
      return {"SSW", false, [](ReplicationContext& c) -> std::optional<EstimatorOutput> {
                const auto& kd = c.kd_tau2();
                if (!kd.converged) return std::nullopt;
                const auto& ds = c.dataset();
                const auto p = ssw_pooled(c.effects(), ds.studies(), kd, c.config().ssw_variance);
                return EstimatorOutput{kd.value, p.theta_hat, wald_ci(p, c.config().level)};
              }};
    case EstimatorKind::kFIM2:
      return {"FIM2", true, [](ReplicationContext& c) {
                return from_fit(fit_fim2(c.dataset(), c.config().glmm), c.config().level);
              }};
    case EstimatorKind::kRIM2:
      return {"RIM2", true, [](ReplicationContext& c) {
                return from_fit(fit_rim2(c.dataset(), c.config().glmm), c.config().level);
              }};
  }
  throw std::invalid_argument("unknown estimator kind");
}

std::vector<Estimator> make_estimators(const std::vector<EstimatorKind>& kinds,
                                       const AnalysisConfig& cfg) {
  std::vector<Estimator> out;
  for (auto k : kinds) out.push_back(make_estimator(k, cfg));
  return out;
}

namespace {

struct ReplicationOutcome {
  std::vector<std::optional<EstimatorOutput>> per_estimator;
  int excluded = 0;
  double mean_v2 = std::numeric_limits<double>::quiet_NaN();
};

ReplicationOutcome run_replication(const Scenario& sc, const ReplicationStream& stream,
                                   const std::vector<Estimator>& estimators,
                                   const AnalysisConfig& cfg) {
  const MetaDataset ds = generate_dataset(sc, stream);
  ReplicationContext ctx(ds, cfg);
  ReplicationOutcome out;
  out.excluded = ctx.excluded_studies();
  double sum_v2 = 0.0;
  int used = 0;
  for (const auto& e : ctx.effects()) {
    if (!e.usable) continue;
    sum_v2 += e.v2_hat;
    ++used;
  }
  if (used > 0) out.mean_v2 = sum_v2 / used;

  out.per_estimator.reserve(estimators.size());
  for (const auto& est : estimators) {
    std::optional<EstimatorOutput> r;
    try {
      r = est.run(ctx);
    } catch (const std::exception&) {
      r.reset();
    }
    out.per_estimator.push_back(r);
  }
  return out;
}

template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

double se_of_mean(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

std::vector<MetricRow> run_scenario(const Scenario& sc, int M, std::uint64_t master_seed,
                                    const std::vector<Estimator>& estimators,
                                    const AnalysisConfig& cfg, int threads) {
  sc.validate();
  if (M < 1) throw std::invalid_argument("M must be >= 1");
  const std::uint64_t sid = sc.id();
  std::vector<ReplicationOutcome> outcomes(static_cast<std::size_t>(M));
  parallel_for(M, threads, [&](int rep) {
    const ReplicationStream stream{master_seed, sid, static_cast<std::uint64_t>(rep)};
    outcomes[static_cast<std::size_t>(rep)] = run_replication(sc, stream, estimators, cfg);
  });

  // Reduction in replication order, so the thread count cannot matter.
  long excluded_total = 0;
  std::vector<double> v2s;
  for (const auto& o : outcomes) {
    excluded_total += o.excluded;
    if (!std::isnan(o.mean_v2)) v2s.push_back(o.mean_v2);
  }

  std::vector<MetricRow> rows;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    MetricRow row;
    row.scenario = sc;
    row.estimator = estimators[e].name;
    row.reports_tau2 = estimators[e].reports_tau2;
    row.n_excluded_studies_total = excluded_total;
    row.mean_v2 = mean_of(v2s);

    std::vector<double> tau2s, thetas;
    int covered = 0;
    for (const auto& o : outcomes) {
      const auto& r = o.per_estimator[e];
      if (!r) {
        ++row.n_failed;
        continue;
      }
      ++row.n_converged;
      tau2s.push_back(r->tau2);
      thetas.push_back(r->theta);
      if (r->ci.contains(sc.theta)) ++covered;
    }
    const double n = static_cast<double>(row.n_converged);
    const double mt = mean_of(tau2s);
    const double mth = mean_of(thetas);
    row.mean_tau2_bias = mt - sc.tau2;
    row.mc_se_tau2 = se_of_mean(tau2s, mt);
    row.mean_theta_bias = mth - sc.theta;
    row.mc_se_theta = se_of_mean(thetas, mth);
    if (row.n_converged > 0) {
      row.coverage = covered / n;
      row.mc_se_coverage = std::sqrt(row.coverage * (1.0 - row.coverage) / n);
    } else {
      row.coverage = row.mc_se_coverage = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_number(double v) {
  if (!std::isfinite(v)) return "NA";
  if (v == 0.0) v = 0.0;  // drop the sign of negative zero
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

std::string scenario_prefix(const Scenario& sc) {
  std::ostringstream os;
  os << to_string(sc.dgm) << ',' << sc.K << ',' << sc.n << ',' << format_number(sc.theta) << ','
     << format_number(sc.tau2) << ',' << format_number(sc.p_c) << ','
     << format_number(sc.sigma2);
  return os.str();
}

std::string metric_line(const MetricRow& r, double value, double se) {
  return scenario_prefix(r.scenario) + ',' + r.estimator + ',' + format_number(value) + ',' +
         format_number(se) + ',' + std::to_string(r.n_converged);
}

std::string diagnostics_line(const MetricRow& r) {
  return scenario_prefix(r.scenario) + ',' + r.estimator + ',' + std::to_string(r.n_converged) +
         ',' + std::to_string(r.n_failed) + ',' + std::to_string(r.n_excluded_studies_total) +
         ',' + format_number(r.mean_v2);
}

constexpr const char* kDiagnosticsHeader =
    "dgm,K,n,theta,tau2,p_c,sigma2,estimator,n_converged,n_failed,n_excluded_studies_total,"
    "mean_v2";

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string bias_tau2_line(const MetricRow& r) {
  return metric_line(r, r.mean_tau2_bias, r.mc_se_tau2);
}
std::string bias_theta_line(const MetricRow& r) {
  return metric_line(r, r.mean_theta_bias, r.mc_se_theta);
}
std::string coverage_line(const MetricRow& r) {
  return metric_line(r, r.coverage, r.mc_se_coverage);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

nlohmann::json manifest_identity(const SimulationConfig& cfg) {
  const auto scenarios = expand_grid(cfg.grid);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& sc : scenarios) h = fnv1a(sc.canonical() + "\n", h);

  nlohmann::json estimators = nlohmann::json::array();
  for (const auto& e : make_estimators(cfg.estimators, cfg.analysis)) estimators.push_back(e.name);

  nlohmann::json dgms = nlohmann::json::array();
  for (auto d : sorted_unique(cfg.grid.dgm)) dgms.push_back(to_string(d));

  const auto& a = cfg.analysis;
  return {
      {"master_seed", std::to_string(cfg.grid.master_seed)},
      {"M", cfg.grid.M},
      {"grid_hash", hex64(h)},
      {"scenario_count", scenarios.size()},
      {"grid",
       {{"K", sorted_unique(cfg.grid.K)},
        {"n", sorted_unique(cfg.grid.n)},
        {"theta", sorted_unique(cfg.grid.theta)},
        {"tau2", sorted_unique(cfg.grid.tau2)},
        {"p_c", sorted_unique(cfg.grid.p_c)},
        {"sigma2", sorted_unique(cfg.grid.sigma2)},
        {"dgm", dgms}}},
      {"estimators", estimators},
      {"zero_cell", to_string(a.zero_cell)},
      {"ssw_variance", to_string(a.ssw_variance)},
      {"level", a.level},
      {"tolerances",
       {{"root_tolerance", a.root.tolerance},
        {"root_max_iterations", a.root.max_iterations},
        {"glmm_gradient_tolerance", a.glmm.gradient_tolerance},
        {"glmm_max_iterations", a.glmm.max_iterations},
        {"glmm_quadrature_order", a.glmm.quadrature_order},
        {"glmm_restarts", a.glmm.restarts}}},
      {"sampler", kBinomialSamplerName},
      {"software_version", kSoftwareVersion},
  };
}

namespace {

struct ScenarioLines {
  std::string bias_tau2, bias_theta, coverage, diagnostics;
  std::size_t failed_rows = 0;
};

ScenarioLines lines_of(const std::vector<MetricRow>& rows) {
  ScenarioLines out;
  for (const auto& r : rows) {
    if (r.reports_tau2) out.bias_tau2 += bias_tau2_line(r) + '\n';
    out.bias_theta += bias_theta_line(r) + '\n';
    out.coverage += coverage_line(r) + '\n';
    out.diagnostics += diagnostics_line(r) + '\n';
    if (r.n_converged == 0) ++out.failed_rows;
  }
  return out;
}

// Checkpoint layout: one record per line, "<family>\t<csv line>".
std::string encode_checkpoint(const ScenarioLines& l) {
  std::string out = "failed_rows\t" + std::to_string(l.failed_rows) + '\n';
  auto add = [&out](const char* family, const std::string& block) {
    std::istringstream in(block);
    std::string line;
    while (std::getline(in, line)) out += std::string(family) + '\t' + line + '\n';
  };
  add("bias_tau2", l.bias_tau2);
  add("bias_theta", l.bias_theta);
  add("coverage", l.coverage);
  add("diagnostics", l.diagnostics);
  out += "end\n";
  return out;
}

std::optional<ScenarioLines> decode_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  ScenarioLines l;
  std::string line;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) return std::nullopt;
    const std::string family = line.substr(0, tab);
    const std::string body = line.substr(tab + 1) + '\n';
    if (family == "failed_rows") {
      l.failed_rows = std::stoul(body);
    } else if (family == "bias_tau2") {
      l.bias_tau2 += body;
    } else if (family == "bias_theta") {
      l.bias_theta += body;
    } else if (family == "coverage") {
      l.coverage += body;
    } else if (family == "diagnostics") {
      l.diagnostics += body;
    } else {
      return std::nullopt;
    }
  }
  if (!ended) return std::nullopt;
  return l;
}

}  // namespace

RunSummary run_simulation(const SimulationConfig& cfg, const fs::path& out_dir,
                          const RunOptions& opts) {
  auto log = [&](const std::string& msg) {
    if (opts.log) opts.log(msg);
  };
  const auto scenarios = expand_grid(cfg.grid);
  const auto identity = manifest_identity(cfg);
  const fs::path manifest_path = out_dir / "manifest.json";
  const fs::path ckpt_dir = out_dir / "checkpoint";

  std::string started_at = now_utc();
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    nlohmann::json existing;
    try {
      in >> existing;
    } catch (const nlohmann::json::exception&) {
      throw ManifestMismatch("existing manifest.json is unreadable");
    }
    if (!existing.contains("identity") || existing["identity"] != identity) {
      throw ManifestMismatch("existing manifest.json in " + out_dir.string() +
                             " describes a different run; refusing to resume");
    }
    if (existing.contains("started_at")) started_at = existing["started_at"];
    log("event=resume dir=" + out_dir.string());
  } else if (opts.require_existing) {
    throw ManifestMismatch("nothing to resume in " + out_dir.string());
  }

  fs::create_directories(ckpt_dir);
  nlohmann::json manifest = {{"identity", identity},
                             {"status", "running"},
                             {"started_at", started_at}};
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");

  const auto estimators = make_estimators(cfg.estimators, cfg.analysis);
  RunSummary summary;
  summary.scenarios_total = scenarios.size();

  std::vector<ScenarioLines> all(scenarios.size());
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "s%06zu-%s.txt", i, hex64(scenarios[i].id()).c_str());
    const fs::path ckpt = ckpt_dir / name;
    if (auto done = decode_checkpoint(ckpt)) {
      all[i] = std::move(*done);
      ++summary.scenarios_resumed;
      continue;
    }
    if (opts.stop_after && summary.scenarios_computed >= *opts.stop_after) {
      log("event=stopped computed=" + std::to_string(summary.scenarios_computed));
      return summary;
    }
    const auto rows = run_scenario(scenarios[i], cfg.grid.M, cfg.grid.master_seed, estimators,
                                   cfg.analysis, opts.threads);
    all[i] = lines_of(rows);
    write_file_atomic(ckpt, encode_checkpoint(all[i]));
    ++summary.scenarios_computed;
    log("event=scenario_done index=" + std::to_string(i + 1) + " total=" +
        std::to_string(scenarios.size()) + " scenario=" + scenarios[i].canonical());
  }

  std::string tau2_csv = std::string(kMetricHeader) + '\n';
  std::string theta_csv = tau2_csv;
  std::string cov_csv = tau2_csv;
  std::string diag_csv = std::string(kDiagnosticsHeader) + '\n';
  for (const auto& l : all) {
    tau2_csv += l.bias_tau2;
    theta_csv += l.bias_theta;
    cov_csv += l.coverage;
    diag_csv += l.diagnostics;
    summary.failed_rows += l.failed_rows;
  }
  write_file_atomic(out_dir / "bias_tau2.csv", tau2_csv);
  write_file_atomic(out_dir / "bias_theta.csv", theta_csv);
  write_file_atomic(out_dir / "coverage.csv", cov_csv);
  write_file_atomic(out_dir / "diagnostics.csv", diag_csv);

  manifest["status"] = "complete";
  manifest["finished_at"] = now_utc();
  manifest["profile"] = cfg.profile;
  manifest["outputs"] = {"bias_tau2.csv", "bias_theta.csv", "coverage.csv", "diagnostics.csv"};
  manifest["failed_rows"] = summary.failed_rows;
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  summary.complete = true;
  log("event=complete scenarios=" + std::to_string(scenarios.size()) +
      " computed=" + std::to_string(summary.scenarios_computed) +
      " resumed=" + std::to_string(summary.scenarios_resumed) +
      " failed_rows=" + std::to_string(summary.failed_rows));
  return summary;
}

}  // namespace metasim
