#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metasim/harness.hpp"

namespace metasim {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitPartial = 3;

// Named starting points: "full" (the complete design, all estimators),
// "desk" (reduced grid, two-stage estimators) and "glmm-desk" (reduced grid,
// M = 250, all estimators).
SimulationConfig profile_config(const std::string& profile);

// Flat key = value text; list values are comma separated, '#' starts a
// comment. A `profile` key selects the base that the other keys override.
// Throws ConfigError naming the line on any problem.
SimulationConfig parse_config(std::istream& in);
SimulationConfig load_config(const std::filesystem::path& path);
std::string render_config(const SimulationConfig& cfg);

std::vector<EstimatorKind> parse_estimator_list(const std::string& text);

struct SimulateArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> methods;
  std::filesystem::path out;
  bool resume = false;
  int threads = 1;
  std::optional<std::size_t> stop_after;
};
int cmd_simulate(const SimulateArgs& args, std::ostream& err);

struct EstimateArgs {
  std::filesystem::path csv;
  std::string methods = "DL,REML,MP,KD,SSW,FIM2,RIM2";
  ZeroCellPolicy zero_cell = ZeroCellPolicy::kAddHalf;
  SswVariance ssw_variance = SswVariance::kPlugin;
  double level = 0.95;
};
// One JSON object per method and line on `out`.
int cmd_estimate(const EstimateArgs& args, std::ostream& out, std::ostream& err);

enum class PanelMetric { kBiasTau2, kBiasTheta, kCoverage };
std::string to_string(PanelMetric m);
PanelMetric parse_panel_metric(const std::string& text);

// Selection of figures: unset theta/p_c/sigma2 mean "every value present".
struct PanelSpec {
  PanelMetric metric = PanelMetric::kBiasTau2;
  std::string estimator = "DL";
  std::optional<double> theta;
  std::optional<double> p_c;
  std::optional<double> sigma2;
  double nominal = 0.95;  // reference line on coverage panels
};

struct PanelPoint {
  int facet_n = 0;
  int facet_K = 0;
  double tau2 = 0.0;
  DgmKind dgm = DgmKind::kFIM1;
  std::string value;  // verbatim from the metric file
};

struct PanelFigure {
  std::string stem;  // file name without extension
  double theta = 0.0;
  double p_c = 0.0;
  double sigma2 = 0.0;
  std::vector<PanelPoint> points;
};

// Figures for `spec` from a metric CSV (header + rows). Warnings about
// requested values that are absent go to `err`.
std::vector<PanelFigure> build_panels(std::istream& metric_csv, const PanelSpec& spec,
                                      std::ostream& err);
std::string panel_csv(const PanelFigure& fig);
std::string panel_svg(const PanelFigure& fig, const PanelSpec& spec);

int cmd_panels(const std::filesystem::path& metrics_dir, const PanelSpec& spec,
               const std::filesystem::path& out_dir, std::ostream& err);

}  // namespace metasim
