#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "metasim/cli_io.hpp"
#include "oracles.hpp"

using namespace metasim;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("metasim_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) out.push_back(cell);
  return out;
}

SimulationConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

constexpr const char* kOneScenario =
    "K = 5\nn = 40\ntheta = 1\ntau2 = 0.4\np_c = 0.4\nsigma2 = 0.1\ndgm = FIM2\n"
    "M = 20\nseed = 5\nestimators = DL, MP, SSW\n";

// Log-odds-ratio and its variance from the textbook formulas.
std::pair<double, double> effect(double xt, double nt, double xc, double nc) {
  return {std::log(xt / (nt - xt)) - std::log(xc / (nc - xc)),
          1 / xt + 1 / (nt - xt) + 1 / xc + 1 / (nc - xc)};
}

}  // namespace

TEST_CASE("profiles resolve to the built-in grids") {
  CHECK(expand_grid(profile_config("full").grid).size() == 10560);
  CHECK(profile_config("full").estimators.size() == 7);
  CHECK(profile_config("desk").estimators == two_stage_estimators());
  CHECK(profile_config("glmm-desk").grid.M == 250);
  CHECK_THROWS_AS(profile_config("laptop"), ConfigError);
}

TEST_CASE("config parsing") {
  const auto cfg = parse(kOneScenario);
  CHECK(cfg.grid.K == std::vector<int>{5});
  CHECK(cfg.grid.theta == std::vector<double>{1.0});
  CHECK(cfg.grid.dgm == std::vector<DgmKind>{DgmKind::kFIM2});
  CHECK(cfg.grid.M == 20);
  CHECK(cfg.grid.master_seed == 5);
  CHECK(cfg.estimators.size() == 3);
  CHECK(cfg.profile == "custom");

  // Keys not given come from the profile.
  const auto partial = parse("profile = desk\nM = 10\n# comment\n\n");
  CHECK(partial.profile == "desk");
  CHECK(partial.grid.K == ScenarioGrid::desk().K);
  CHECK(partial.grid.M == 10);

  // Rendering and parsing again is the identity.
  const auto again = parse(render_config(cfg));
  CHECK(manifest_identity(again) == manifest_identity(cfg));
  const auto full = profile_config("full");
  CHECK(manifest_identity(parse(render_config(full))) == manifest_identity(full));
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse(""), ConfigError);
  CHECK_THROWS_AS(parse("colour = red\n"), ConfigError);
  CHECK_THROWS_AS(parse("K = 5\nK = 10\n"), ConfigError);
  CHECK_THROWS_AS(parse("K = five\n"), ConfigError);
  CHECK_THROWS_AS(parse("K 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("K =\n"), ConfigError);
  CHECK_THROWS_AS(parse("p_c = 1.2\n"), ConfigError);
  CHECK_THROWS_AS(parse("dgm = FIM9\n"), ConfigError);
  CHECK_THROWS_AS(parse("estimators = DL, XX\n"), ConfigError);
  CHECK_THROWS_AS(parse("quadrature_order = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse("level = 1.5\n"), ConfigError);
  try {
    parse("M = 10\nbogus = 1\n");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("simulate: malformed config writes nothing") {
  const auto dir = fresh_dir("malformed");
  write_text(dir / "bad.cfg", "K = 5\nK = 6\n");
  SimulateArgs args;
  args.config = dir / "bad.cfg";
  args.out = dir / "out";
  std::ostringstream err;
  CHECK(cmd_simulate(args, err) == kExitConfig);
  CHECK(err.str().find("level=error") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "bias_tau2.csv"));
  CHECK_FALSE(fs::exists(dir / "out" / "manifest.json"));

  SimulateArgs both = args;
  write_text(dir / "ok.cfg", kOneScenario);
  both.config = dir / "ok.cfg";
  both.profile = "desk";
  CHECK(cmd_simulate(both, err) == kExitConfig);
  fs::remove_all(dir);
}

TEST_CASE("simulate: one scenario, then a no-op rerun") {
  const auto dir = fresh_dir("minimal");
  write_text(dir / "one.cfg", kOneScenario);
  SimulateArgs args;
  args.config = dir / "one.cfg";
  args.out = dir / "out";
  std::ostringstream err;
  REQUIRE(cmd_simulate(args, err) == kExitOk);
  const auto tau2 = lines_of(slurp(dir / "out" / "bias_tau2.csv"));
  const auto theta = lines_of(slurp(dir / "out" / "bias_theta.csv"));
  const auto cov = lines_of(slurp(dir / "out" / "coverage.csv"));
  CHECK(tau2.size() == 1 + 2);  // DL and MP; SSW has no tau2
  CHECK(theta.size() == 1 + 3);
  CHECK(cov.size() == 1 + 3);
  CHECK(theta[0] == kMetricHeader);
  CHECK(split(theta[1]).size() == 11);

  const auto before = slurp(dir / "out" / "coverage.csv");
  std::ostringstream err2;
  CHECK(cmd_simulate(args, err2) == kExitOk);
  CHECK(slurp(dir / "out" / "coverage.csv") == before);

  SimulateArgs other = args;
  other.seed = 6;
  std::ostringstream err3;
  CHECK(cmd_simulate(other, err3) == kExitConfig);
  CHECK(err3.str().find("manifest") != std::string::npos);

  SimulateArgs stopped = args;
  stopped.out = dir / "partial";
  stopped.stop_after = 0;
  std::ostringstream err4;
  CHECK(cmd_simulate(stopped, err4) == kExitPartial);
  fs::remove_all(dir);
}

TEST_CASE("estimate: two-study fixture") {
  const auto dir = fresh_dir("estimate");
  write_text(dir / "two.csv", "x_t,n_t,x_c,n_c\n8,16,8,16\n12,16,4,16\n");
  const auto a = effect(8, 16, 8, 16), b = effect(12, 16, 4, 16);
  CHECK(a.second == Approx(0.5));
  const double dl = oracle::dl_closed_form({a.first, b.first}, {a.second, b.second});
  REQUIRE(dl > 0.0);

  EstimateArgs args;
  args.csv = dir / "two.csv";
  args.methods = "DL,SSW";
  std::ostringstream out, err;
  REQUIRE(cmd_estimate(args, out, err) == kExitOk);
  const auto recs = lines_of(out.str());
  REQUIRE(recs.size() == 2);
  const auto j = nlohmann::json::parse(recs[0]);
  CHECK(j["method"] == "DL");
  CHECK(j["tau2"].get<double>() == Approx(dl).epsilon(1e-12));
  CHECK(j["k_used"] == 2);
  CHECK(j["ci"]["level"].get<double>() == 0.95);
  const auto s = nlohmann::json::parse(recs[1]);
  CHECK(s["method"] == "SSW");
  CHECK(s["theta"].get<double>() == Approx((a.first + b.first) / 2));
  CHECK(s["df"].get<double>() == 1.0);
  fs::remove_all(dir);
}

TEST_CASE("estimate: every method produces a record") {
  const auto dir = fresh_dir("estimate_all");
  write_text(dir / "five.csv",
             "x_t,n_t,x_c,n_c\n12,100,8,100\n20,100,9,100\n15,100,14,100\n30,100,12,100\n"
             "9,100,10,100\n");
  EstimateArgs args;
  args.csv = dir / "five.csv";
  std::ostringstream out, err;
  REQUIRE(cmd_estimate(args, out, err) == kExitOk);
  const auto recs = lines_of(out.str());
  REQUIRE(recs.size() == 7);
  for (const auto& line : recs) {
    const auto j = nlohmann::json::parse(line);
    CHECK(std::isfinite(j["theta"].get<double>()));
    CHECK(j.contains("diagnostics"));
  }
  CHECK(nlohmann::json::parse(recs[3])["tau2_source"].is_null());
  CHECK(nlohmann::json::parse(recs[4])["tau2_source"] == "KD-substitute(MP)");
  fs::remove_all(dir);
}

TEST_CASE("estimate: unusable inputs") {
  const auto dir = fresh_dir("estimate_bad");
  write_text(dir / "empty.csv", "");
  write_text(dir / "one.csv", "x_t,n_t,x_c,n_c\n3,10,4,10\n0,10,0,10\n");
  EstimateArgs args;
  std::ostringstream out, err;
  args.csv = dir / "empty.csv";
  CHECK(cmd_estimate(args, out, err) == kExitConfig);
  args.csv = dir / "missing.csv";
  CHECK(cmd_estimate(args, out, err) == kExitConfig);
  args.csv = dir / "one.csv";
  args.methods = "DL";
  std::ostringstream err2;
  CHECK(cmd_estimate(args, out, err2) == kExitConfig);
  CHECK(err2.str().find("estimation_error") != std::string::npos);
  CHECK(out.str().empty());
  fs::remove_all(dir);
}

TEST_CASE("panels from a simulated grid") {
  const auto dir = fresh_dir("panels");
  write_text(dir / "grid.cfg",
             "K = 5, 10\nn = 40, 100\ntheta = 0\ntau2 = 0, 0.4\np_c = 0.1\nsigma2 = 0.1, 0.4\n"
             "dgm = FIM1, FIM2, RIM1, RIM2, URIM1\nM = 10\nseed = 1\nestimators = DL, SSW\n");
  SimulateArgs args;
  args.config = dir / "grid.cfg";
  args.out = dir / "metrics";
  std::ostringstream err;
  REQUIRE(cmd_simulate(args, err) == kExitOk);

  PanelSpec spec;
  spec.sigma2 = 0.1;
  std::ostringstream perr;
  REQUIRE(cmd_panels(dir / "metrics", spec, dir / "panels", perr) == kExitOk);
  std::vector<fs::path> csvs;
  for (const auto& e : fs::directory_iterator(dir / "panels")) {
    if (e.path().extension() == ".csv") csvs.push_back(e.path());
  }
  REQUIRE(csvs.size() == 1);
  const auto rows = lines_of(slurp(csvs[0]));
  CHECK(rows[0] == "facet_n,facet_K,tau2,dgm,value");
  CHECK(rows.size() - 1 == 2u * 2u * 2u * 5u);
  auto svg = csvs[0];
  svg.replace_extension(".svg");
  CHECK(fs::exists(svg));

  // Every panel value is the metric file's value, byte for byte.
  std::map<std::string, std::string> source;
  for (const auto& line : lines_of(slurp(dir / "metrics" / "bias_tau2.csv"))) {
    const auto c = split(line);
    if (c[7] != "DL") continue;
    if (c[0] != "FIM1" && c[0] != "FIM2" && c[6] != "0.1") continue;
    source[c[2] + "," + c[1] + "," + c[4] + "," + c[0]] = c[8];
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto c = split(rows[i]);
    const auto key = c[0] + "," + c[1] + "," + c[2] + "," + c[3];
    REQUIRE(source.count(key) == 1);
    CHECK(source[key] == c[4]);
  }

  PanelSpec absent = spec;
  absent.theta = 3.0;
  std::ostringstream aerr;
  cmd_panels(dir / "metrics", absent, dir / "panels_absent", aerr);
  CHECK(aerr.str().find("absent_value") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("panel rendering") {
  const std::string csv =
      std::string(kMetricHeader) +
      "\n"
      "FIM1,5,40,0,0,0.1,0,DL,0.9,0.01,100\n"
      "FIM1,5,40,0,0.4,0.1,0,DL,0.9,0.01,100\n"
      "RIM1,5,40,0,0,0.1,0.1,DL,0.9,0.01,100\n"
      "RIM1,5,40,0,0.4,0.1,0.1,DL,NA,NA,0\n"
      "FIM1,5,40,0,0,0.1,0,MP,0.5,0.01,100\n";
  std::istringstream in(csv);
  PanelSpec spec;
  spec.metric = PanelMetric::kCoverage;
  std::ostringstream err;
  const auto figs = build_panels(in, spec, err);
  REQUIRE(figs.size() == 1);
  CHECK(figs[0].points.size() == 4);
  const auto out = panel_csv(figs[0]);
  CHECK(out.find("40,5,0.4,RIM1,NA") != std::string::npos);

  const auto svg = panel_svg(figs[0], spec);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("class=\"nominal\"") != std::string::npos);
  // A flat trace still gets a nonzero y-range.
  CHECK(svg.find("nan") == std::string::npos);
  CHECK(svg.find("inf") == std::string::npos);

  PanelSpec bias = spec;
  bias.metric = PanelMetric::kBiasTau2;
  CHECK(panel_svg(figs[0], bias).find("class=\"nominal\"") == std::string::npos);

  const std::string dup = std::string(kMetricHeader) +
                          "\nFIM1,5,40,0,0,0.1,0,DL,0.9,0.01,100\n"
                          "FIM1,5,40,0,0,0.1,0,DL,0.8,0.01,100\n";
  std::istringstream din(dup);
  CHECK_THROWS(build_panels(din, spec, err));
  std::istringstream bad("dgm,K\nFIM1,5\n");
  CHECK_THROWS(build_panels(bad, spec, err));

  for (auto m : {PanelMetric::kBiasTau2, PanelMetric::kBiasTheta, PanelMetric::kCoverage}) {
    CHECK(parse_panel_metric(to_string(m)) == m);
  }
}
