#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "metasim/datagen.hpp"
#include "metasim/glmm.hpp"
#include "metasim/twostage.hpp"

namespace metasim {

inline constexpr const char* kSoftwareVersion = "0.3.0";

struct ScenarioGrid {
  std::vector<int> K;
  std::vector<int> n;
  std::vector<double> theta;
  std::vector<double> tau2;
  std::vector<double> p_c;
  std::vector<double> sigma2;
  std::vector<DgmKind> dgm;
  std::uint64_t master_seed = 20200220;
  int M = 1000;

  // The full design: 10560 scenarios, M = 1000.
  static ScenarioGrid table1();
  // Reduced grid for a laptop run without GLMM fits.
  static ScenarioGrid desk();
  // The desk grid with M = 250, for runs that include the GLMM estimators.
  static ScenarioGrid glmm_desk();
};

// Cartesian product of the axes with the sigma2 axis collapsed (to 0) for
// FIM1/FIM2. Axis values are de-duplicated and sorted; the result is ordered
// by dgm, K, n, theta, tau2, p_c, sigma2. Throws std::invalid_argument on an
// empty axis or an invalid scenario.
std::vector<Scenario> expand_grid(const ScenarioGrid& g);

enum class EstimatorKind { kDL, kREML, kMP, kKD, kSSW, kFIM2, kRIM2 };

std::string to_string(EstimatorKind e);
EstimatorKind parse_estimator(const std::string& text);
std::vector<EstimatorKind> two_stage_estimators();
std::vector<EstimatorKind> all_estimators();

struct AnalysisConfig {
  ZeroCellPolicy zero_cell = ZeroCellPolicy::kAddHalf;
  SswVariance ssw_variance = SswVariance::kPlugin;
  double level = 0.95;
  RootOptions root;
  GlmmOptions glmm;
  Tau2Plugin kd = kd_substitute();
};

// Per-replication cache shared by the estimators of one dataset.
class ReplicationContext {
 public:
  ReplicationContext(const MetaDataset& ds, const AnalysisConfig& cfg) : ds_(ds), cfg_(cfg) {}

  const MetaDataset& dataset() const noexcept { return ds_; }
  const AnalysisConfig& config() const noexcept { return cfg_; }
  const std::vector<EffectEstimate>& effects();
  int excluded_studies();
  const Tau2Estimate& kd_tau2();

 private:
  const MetaDataset& ds_;
  const AnalysisConfig& cfg_;
  std::optional<std::vector<EffectEstimate>> effects_;
  std::optional<Tau2Estimate> kd_;
};

struct EstimatorOutput {
  double tau2 = 0.0;  // ignored when the estimator reports no tau2
  double theta = 0.0;
  ConfidenceInterval ci;
};

// One analysis method. `run` returns nothing (or throws EstimationError)
// when the replication cannot be analysed; that counts as a failure.
struct Estimator {
  std::string name;
  bool reports_tau2 = true;
  std::function<std::optional<EstimatorOutput>(ReplicationContext&)> run;
};

Estimator make_estimator(EstimatorKind kind, const AnalysisConfig& cfg);
std::vector<Estimator> make_estimators(const std::vector<EstimatorKind>& kinds,
                                       const AnalysisConfig& cfg);

struct MetricRow {
  Scenario scenario;
  std::string estimator;
  bool reports_tau2 = true;
  double mean_tau2_bias = 0.0;
  double mc_se_tau2 = 0.0;
  double mean_theta_bias = 0.0;
  double mc_se_theta = 0.0;
  double coverage = 0.0;
  double mc_se_coverage = 0.0;
  int n_converged = 0;
  int n_failed = 0;
  long n_excluded_studies_total = 0;
  double mean_v2 = 0.0;  // mean within-study variance of usable studies
};

// M replications of one scenario; the result is identical for any thread count.
std::vector<MetricRow> run_scenario(const Scenario& sc, int M, std::uint64_t master_seed,
                                    const std::vector<Estimator>& estimators,
                                    const AnalysisConfig& cfg, int threads = 1);

struct SimulationConfig {
  ScenarioGrid grid;
  std::vector<EstimatorKind> estimators = two_stage_estimators();
  AnalysisConfig analysis;
  std::string profile = "custom";
};

// Everything that determines the metric files; resuming requires equality.
nlohmann::json manifest_identity(const SimulationConfig& cfg);

struct RunOptions {
  int threads = 1;
  // Stop after this many newly computed scenarios (simulates an interruption).
  std::optional<std::size_t> stop_after;
  bool require_existing = false;  // --resume: refuse to start from scratch
  std::function<void(const std::string&)> log;
};

struct RunSummary {
  std::size_t scenarios_total = 0;
  std::size_t scenarios_computed = 0;
  std::size_t scenarios_resumed = 0;
  std::size_t failed_rows = 0;  // (scenario, estimator) cells with no successful replication
  bool complete = false;
};

class ManifestMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs the grid into `out_dir`, checkpointing each finished scenario.
// Writes bias_tau2.csv, bias_theta.csv, coverage.csv, diagnostics.csv and
// manifest.json once every scenario is done.
RunSummary run_simulation(const SimulationConfig& cfg, const std::filesystem::path& out_dir,
                          const RunOptions& opts = {});

// CSV lines for the three metric families (no header).
inline constexpr const char* kMetricHeader =
    "dgm,K,n,theta,tau2,p_c,sigma2,estimator,value,mc_se,n_converged";
std::string format_number(double v);
std::string bias_tau2_line(const MetricRow& r);
std::string bias_theta_line(const MetricRow& r);
std::string coverage_line(const MetricRow& r);

// Write-temp-then-rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace metasim
