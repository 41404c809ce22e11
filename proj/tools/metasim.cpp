#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "metasim/cli_io.hpp"

int main(int argc, char** argv) {
  using namespace metasim;

  CLI::App app{"metasim: simulation study of log-odds-ratio meta-analysis"};
  app.require_subcommand(0, 1);
  bool print_default = false;
  app.add_flag("--print-default-config", print_default,
               "Print the full-design configuration and exit");

  SimulateArgs sim;
  std::string sim_out;
  std::string sim_config;
  std::string sim_profile;
  std::uint64_t sim_seed = 0;
  std::string sim_methods;
  std::size_t stop_after = 0;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation grid");
  auto* cfg_opt = simulate->add_option("--config", sim_config, "Key = value configuration file");
  auto* prof_opt = simulate->add_option("--profile", sim_profile, "Named grid")
                       ->check(CLI::IsMember({"full", "desk", "glmm-desk"}));
  cfg_opt->excludes(prof_opt);
  auto* seed_opt =
      simulate->add_option("--seed", sim_seed, "Master seed")->envname("METASIM_SEED");
  auto* methods_opt =
      simulate->add_option("--methods", sim_methods, "Comma-separated estimator list");
  simulate->add_option("--out", sim_out, "Output directory")->required();
  simulate->add_flag("--resume", sim.resume, "Require an existing run to resume");
  simulate->add_option("--threads", sim.threads, "Worker threads")
      ->envname("METASIM_THREADS")
      ->check(CLI::PositiveNumber);
  auto* stop_opt = simulate->add_option("--stop-after", stop_after,
                                        "Stop after this many newly computed scenarios");

  EstimateArgs est;
  std::string est_csv;
  std::string est_zero = "add-half";
  std::string est_ssw = "plugin";
  auto* estimate = app.add_subcommand("estimate", "Analyse one study CSV");
  estimate->add_option("csv", est_csv, "Study file with columns x_t,n_t,x_c,n_c")->required();
  estimate->add_option("--methods", est.methods, "Comma-separated estimator list");
  estimate->add_option("--zero-cell", est_zero, "add-half, add-half-all or exclude");
  estimate->add_option("--ssw-variance", est_ssw, "plugin or hksj");
  estimate->add_option("--level", est.level, "Confidence level")->check(CLI::Range(0.5, 0.9999));

  PanelSpec panel;
  std::string metrics_dir;
  std::string panel_out;
  std::string panel_metric = "bias_tau2";
  double p_theta = 0, p_pc = 0, p_sigma2 = 0;
  auto* panels = app.add_subcommand("panels", "Emit per-figure panel CSV and SVG files");
  panels->add_option("--metrics", metrics_dir, "Directory holding the metric CSVs")->required();
  panels->add_option("--out", panel_out, "Output directory")->required();
  panels->add_option("--metric", panel_metric, "bias_tau2, bias_theta or coverage");
  panels->add_option("--estimator", panel.estimator, "Estimator name as written in the CSV");
  auto* th_opt = panels->add_option("--theta", p_theta);
  auto* pc_opt = panels->add_option("--p-c", p_pc);
  auto* s2_opt = panels->add_option("--sigma2", p_sigma2);
  panels->add_option("--nominal", panel.nominal, "Reference line on coverage panels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (print_default) {
      std::cout << render_config(profile_config("full"));
      return kExitOk;
    }
    if (*simulate) {
      sim.out = sim_out;
      if (*cfg_opt) sim.config = sim_config;
      if (*prof_opt) sim.profile = sim_profile;
      if (*seed_opt) sim.seed = sim_seed;
      if (*methods_opt) sim.methods = sim_methods;
      if (*stop_opt) sim.stop_after = stop_after;
      return cmd_simulate(sim, std::cerr);
    }
    if (*estimate) {
      est.csv = est_csv;
      est.zero_cell = parse_zero_cell_policy(est_zero);
      est.ssw_variance = parse_ssw_variance(est_ssw);
      return cmd_estimate(est, std::cout, std::cerr);
    }
    if (*panels) {
      panel.metric = parse_panel_metric(panel_metric);
      if (*th_opt) panel.theta = p_theta;
      if (*pc_opt) panel.p_c = p_pc;
      if (*s2_opt) panel.sigma2 = p_sigma2;
      return cmd_panels(metrics_dir, panel, panel_out, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "level=error event=usage msg=\"" << e.what() << "\"\n";
    return kExitConfig;
  }
  std::cout << app.help();
  return kExitOk;
}
