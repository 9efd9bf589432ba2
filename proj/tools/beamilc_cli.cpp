// beamilc: command line front end.
//   exit 0 success, 2 finished on a fallback path, 1 error.

#include "beamilc/config.hpp"
#include "beamilc/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

using namespace beamilc;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kError = 1, kFallback = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig load(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required for this command");
  RunConfig cfg = load_run_config(g.config);
  if (g.seed) {
    cfg.set_seed(*g.seed);
    cfg.document["seed"] = *g.seed;
  }
  if (!g.out.empty()) cfg.output = g.out;
  return cfg;
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.output;
  fs::create_directories(dir);
  return dir;
}

/// Parameters from a JSON file: either the object itself or its "p" member
/// (the shape `estimate` writes).
BeamParams load_params(const std::string& path) {
  const json j = read_json_file(path);
  return detail::params_from_json(j.contains("p") ? j.at("p") : j, path);
}

Trajectory check_input(const RunConfig& cfg, const Trajectory& u, const std::string& what) {
  if (u.channels() != cfg.chain.dof()) {
    throw DimensionError(what + ": " + std::to_string(u.channels()) + " channels, chain has " +
                         std::to_string(cfg.chain.dof()) + " joints");
  }
  return u;
}

int cmd_simulate(const Globals& g, const std::string& input) {
  const RunConfig cfg = load(g);
  const TaskDefinition& task = cfg.ilc.task;
  const Trajectory u = input.empty() ? Trajectory::zeros(task.dt, task.prediction_horizon, cfg.chain.dof(), "u")
                                     : check_input(cfg, read_csv(input), input);
  PlantConfig plant = cfg.ilc.plant;
  const ExperimentResult r =
      run_experiment(plant, cfg.chain, task.q0, u, cfg.ilc.trace_samples(), cfg.ilc.estimation.dt);
  const fs::path dir = out_dir(cfg);
  write_csv((dir / "measured.csv").string(), r.measured);
  write_csv((dir / "joints.csv").string(), r.joints);
  std::cout << "wrote " << (dir / "measured.csv").string() << " (" << r.measured.rows() << " samples)\n";
  return kOk;
}

int cmd_estimate(const Globals& g, const std::string& measured, const std::string& input, const std::string& params,
                 const std::string& disturbance, bool no_disturbance) {
  const RunConfig cfg = load(g);
  const EstimationConfig& est = cfg.ilc.estimation;
  const Trajectory y = read_csv(measured);
  const Trajectory u = check_input(cfg, read_csv(input), input);
  const BeamParams p_prev = params.empty() ? cfg.prior : load_params(params);
  const Trajectory d_prev =
      disturbance.empty() ? Trajectory::zeros(est.dt, est.samples, 1, "d") : read_csv(disturbance);
  const LearnedModel m = learn(cfg.chain, y, u, p_prev, d_prev, cfg.ilc.task.q0, est, !no_disturbance);
  const bool fallback = m.parameter_step.fallback || (!no_disturbance && m.disturbance_step.fallback);
  const fs::path dir = out_dir(cfg);
  json out = {{"p", params_json(m.p)},
              {"theta0", m.init.theta0},
              {"tau_hat0", m.init.tau_hat0},
              {"tau_e0", m.init.tau_e0},
              {"parameter_status", to_string(m.parameter_step.status)},
              {"parameter_iterations", m.parameter_step.iterations},
              {"rmse_before", m.parameter_step.rmse_before},
              {"rmse_after", m.parameter_step.rmse_after},
              {"condition", m.parameter_step.condition},
              {"fallback", fallback}};
  if (!no_disturbance) {
    out["disturbance_status"] = to_string(m.disturbance_step.status);
    out["disturbance_iterations"] = m.disturbance_step.iterations;
    out["disturbance_rmse_after"] = m.disturbance_step.rmse_after;
  }
  write_json(dir / "estimate.json", out);
  write_csv((dir / "disturbance.csv").string(), m.d);
  std::cout << "k=" << format_sig9(m.p.k) << " c=" << format_sig9(m.p.c) << " m=" << format_sig9(m.p.m)
            << " l=" << format_sig9(m.p.l) << " a=" << format_sig9(m.p.a) << " b=" << format_sig9(m.p.b)
            << " tau_e0=" << format_sig9(m.p.tau_e0) << "\n";
  if (fallback) std::cerr << "estimate: fallback: " << m.parameter_step.message << m.disturbance_step.message << "\n";
  return fallback ? kFallback : kOk;
}

int cmd_ocp(const Globals& g, const std::string& params, const std::string& disturbance, const std::string& previous) {
  const RunConfig cfg = load(g);
  const TaskDefinition& task = cfg.ilc.task;
  const BeamParams p = params.empty() ? cfg.prior : load_params(params);
  const Trajectory d = disturbance.empty() ? Trajectory()
                                           : resample_disturbance(read_csv(disturbance), task.dt, task.prediction_horizon);
  const Trajectory u_prev = previous.empty() ? Trajectory() : check_input(cfg, read_csv(previous), previous);
  const PlannedMotion plan = solve_ptp_ocp(cfg.chain, task, p, d, u_prev, cfg.ilc.ocp);
  const fs::path dir = out_dir(cfg);
  write_csv((dir / "u.csv").string(), plan.u);
  write_json(dir / "plan.json", plan_json(cfg.chain, plan, task.dt));
  std::cout << "ocp: " << to_string(plan.status) << " after " << plan.iterations << " iterations, vibration cost "
            << format_sig9(plan.vibration_cost) << "\n";
  if (plan.fallback) std::cerr << "ocp: fallback: " << plan.message << "\n";
  return plan.fallback ? kFallback : kOk;
}

void print_records(const std::string& name, const IlcRun& run) {
  std::cout << name << "\n  iter  prediction_error  vibration\n";
  for (const IlcRecord& r : run.records) {
    std::cout << "  " << r.iteration << "  " << format_sig9(r.prediction_error) << "  " << format_sig9(r.vibration)
              << (r.fallback ? "  fallback: " + r.message : "") << "\n";
  }
}

int cmd_ilc(const Globals& g) {
  const RunConfig cfg = load(g);
  const fs::path dir = out_dir(cfg);
  std::vector<std::pair<std::string, IlcConfig>> variants = {{"ilc", cfg.ilc}};
  if (cfg.ablation) {
    IlcConfig p_only = cfg.ilc;
    p_only.learn_disturbance = false;
    variants.emplace_back("ilc-p", p_only);
  } else if (!cfg.ilc.learn_disturbance) {
    variants[0].first = "ilc-p";
  }
  std::vector<std::string> names;
  for (const auto& [name, c] : variants) names.push_back(name);
  write_json(dir / "manifest.json", run_manifest(cfg, names));
  write_json(dir / "config.json", cfg.document);
  bool fallback = false;
  for (const auto& [name, c] : variants) {
    const IlcRun run = run_ilc(cfg.chain, c, cfg.prior);
    write_ilc_run(dir / name, cfg.chain, c, run);
    print_records(name, run);
    fallback = fallback || run.initial_plan.fallback || run.final_plan.fallback;
    for (const IlcRecord& r : run.records) fallback = fallback || r.fallback;
  }
  for (const std::string& f : plot_run(dir)) std::cout << "wrote " << f << "\n";
  return fallback ? kFallback : kOk;
}

int cmd_plot(const Globals& g, const std::string& run_dir) {
  std::string dir = run_dir;
  if (dir.empty()) dir = !g.out.empty() ? g.out : (!g.config.empty() ? load(g).output : "");
  if (dir.empty()) throw ConfigError("plot: give --run, --out or --config");
  for (const std::string& f : plot_run(dir)) std::cout << "wrote " << f << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beamilc: iterative learning control for flexible beam handling"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "override the random seed");
  app.add_option("--out", g.out, "output directory (overrides the configuration)");

  std::string input, measured, params, disturbance, previous, run_dir;
  bool no_disturbance = false;
  auto* simulate = app.add_subcommand("simulate", "run the truth plant under an input (zero input by default)");
  simulate->add_option("--input", input, "joint acceleration CSV");
  auto* estimate = app.add_subcommand("estimate", "learn parameters and disturbance from one experiment");
  estimate->add_option("--measured", measured, "measured torque CSV")->required();
  estimate->add_option("--input", input, "joint acceleration CSV applied in the experiment")->required();
  estimate->add_option("--params", params, "previous parameters (JSON); default the prior");
  estimate->add_option("--disturbance", disturbance, "previous disturbance CSV");
  estimate->add_flag("--no-disturbance", no_disturbance, "parameters only");
  auto* ocp = app.add_subcommand("ocp", "plan a vibration-free motion");
  ocp->add_option("--params", params, "model parameters (JSON); default the prior");
  ocp->add_option("--disturbance", disturbance, "disturbance CSV on the measurement grid");
  ocp->add_option("--previous", previous, "previous input CSV (warm start and fallback)");
  auto* ilc = app.add_subcommand("ilc", "run the learning loop and write a run directory");
  auto* plot = app.add_subcommand("plot", "draw the figures of a run directory");
  plot->add_option("--run", run_dir, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kError;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*simulate) return cmd_simulate(g, input);
    if (*estimate) return cmd_estimate(g, measured, input, params, disturbance, no_disturbance);
    if (*ocp) return cmd_ocp(g, params, disturbance, previous);
    if (*ilc) return cmd_ilc(g);
    if (*plot) return cmd_plot(g, run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
