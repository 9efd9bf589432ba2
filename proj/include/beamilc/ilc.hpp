#pragma once

#include "beamilc/estimation.hpp"
#include "beamilc/ocp.hpp"
#include "beamilc/plant.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace beamilc {

/// Samples in a metric window of `seconds` on a grid of step dt (rounded
/// down).
inline long window_samples(double seconds, double dt) {
  if (!(seconds > 0.0) || !(dt > 0.0)) throw InvalidArgument("window_samples: window and step must be positive");
  return static_cast<long>(std::floor(seconds / dt + 1e-9));
}

/// First sample index at or after time t on a grid of step dt.
inline long sample_at_or_after(double t, double dt) { return static_cast<long>(std::ceil(t / dt - 1e-9)); }

/// Residual vibration: mean absolute deviation of y[end .. end+window] from
/// its own mean, normalized by `window`.
inline double vibration_metric(const VectorXd& y, long motion_end, long window) {
  if (window < 1 || motion_end < 0) throw InvalidArgument("vibration_metric: bad window");
  if (motion_end + window >= y.size()) {
    throw InvalidArgument("vibration_metric: window ends at sample " + std::to_string(motion_end + window) +
                          " but the trace has " + std::to_string(y.size()));
  }
  const VectorXd w = y.segment(motion_end, window + 1);
  // shift by the first sample so a constant trace gives exactly zero
  const double mean = w[0] + (w.array() - w[0]).mean();
  return (w.array() - mean).abs().sum() / static_cast<double>(window);
}

inline double vibration_metric(const Trajectory& y, long motion_end, long window) {
  y.validate();
  if (y.channels() != 1) throw InvalidArgument("vibration_metric: expected one channel");
  return vibration_metric(VectorXd(y.samples.col(0)), motion_end, window);
}

struct IlcConfig {
  int iterations = 10;
  double metric_window = 5.0;  // s after the motion end
  bool learn_disturbance = true;  // false: parameters only, d = 0
  TaskDefinition task;
  EstimationConfig estimation;
  OcpOptions ocp;
  PlantConfig plant;

  /// Samples of the measurement grid covered by the motion.
  long motion_end() const { return sample_at_or_after(task.control_horizon * task.dt, estimation.dt); }
  long window() const { return window_samples(metric_window, estimation.dt); }
  /// Measurement length: estimation data and the metric window.
  long trace_samples() const { return std::max(estimation.samples, motion_end() + window() + 1); }

  void validate(const KinematicChain& chain) const {
    if (iterations < 1) throw InvalidArgument("ilc: need at least one iteration");
    if (!(metric_window > 0.0)) throw InvalidArgument("ilc: metric window must be positive");
    task.validate(chain);
    estimation.validate();
    ocp.weights.validate();
    plant.validate();
    const double est_span = static_cast<double>(estimation.samples - 1) * estimation.dt;
    if (est_span + 1e-9 < static_cast<double>(task.prediction_horizon - 1) * task.dt) {
      throw InvalidArgument("ilc: the estimation window must cover the prediction horizon");
    }
  }
};

/// Everything from one ILC iteration.
struct IlcRecord {
  int iteration = 0;
  Trajectory u;          // input applied in this experiment (OCP grid)
  Trajectory measured;   // plant output (measurement grid)
  Trajectory predicted;  // output predicted before the experiment by the planning model
  BeamParams p;          // learned after the experiment
  InitialCondition init;
  Trajectory d;          // learned disturbance (measurement grid)
  double prediction_error = 0.0;  // ||measured - predicted|| over the estimation window
  double fit_error = 0.0;         // same for the learned (p, d)
  double fit_error_without_d = 0.0;  // learned p with d = 0
  double vibration = 0.0;            // metric on the measurement
  double predicted_vibration = 0.0;  // metric on the prediction
  nlp::SolveStatus parameter_status = nlp::SolveStatus::converged;
  nlp::SolveStatus disturbance_status = nlp::SolveStatus::converged;
  nlp::SolveStatus ocp_status = nlp::SolveStatus::converged;  // plan for the next iteration
  int parameter_iterations = 0;
  int disturbance_iterations = 0;
  int ocp_iterations = 0;
  bool fallback = false;
  std::string message;
};

struct IlcRun {
  PlannedMotion initial_plan;
  std::vector<IlcRecord> records;
  PlannedMotion final_plan;  // plan for the iteration after the last
};

namespace detail {

inline void note(IlcRecord& rec, const std::string& what) {
  rec.fallback = true;
  if (!rec.message.empty()) rec.message += "; ";
  rec.message += what;
}

inline InitialCondition prior_initial_condition(const KinematicChain& chain, const VectorXd& q0, const BeamParams& p) {
  InitialCondition ic;
  ic.theta0 = pendulum_equilibrium(chain, q0, p);
  ic.tau_hat0 = reaction_torque(ic.theta0, 0.0, p, 0.0) + p.tau_e0;
  ic.tau_e0 = p.tau_e0;
  return ic;
}

}  // namespace detail

/// Iterative learning loop: plan with the current model, run the plant,
/// learn parameters and disturbance from the measurement, replan.
/// `d0` on the measurement grid (empty = zero).
inline IlcRun run_ilc(const KinematicChain& chain, const IlcConfig& cfg, const BeamParams& p0,
                      const Trajectory& d0 = {}) {
  cfg.validate(chain);
  p0.validate();
  const EstimationConfig& est = cfg.estimation;
  const TaskDefinition& task = cfg.task;
  const long trace = cfg.trace_samples();

  Trajectory d_prev = d0.samples.size() ? d0 : Trajectory::zeros(est.dt, est.samples, 1, "d");
  if (std::abs(d_prev.dt - est.dt) > 1e-12 * est.dt) throw GridMismatch("run_ilc: d0 not on the measurement grid");
  BeamParams p_prev = p0;
  InitialCondition init_prev = detail::prior_initial_condition(chain, task.q0, p0);
  auto ocp_disturbance = [&](const Trajectory& d) {
    return resample_disturbance(d, task.dt, task.prediction_horizon);
  };

  IlcRun run;
  run.initial_plan = solve_ptp_ocp(chain, task, p_prev, ocp_disturbance(d_prev), Trajectory(), cfg.ocp);
  PlannedMotion plan = run.initial_plan;

  for (int i = 1; i <= cfg.iterations; ++i) {
    IlcRecord rec;
    rec.iteration = i;
    rec.u = plan.u;
    if (plan.fallback) detail::note(rec, "plan: " + plan.message);

    PlantConfig plant = cfg.plant;
    plant.seed = cfg.plant.seed + static_cast<std::uint64_t>(i);
    rec.measured = run_experiment(plant, chain, task.q0, rec.u, trace, est.dt).measured;

    const VectorXd meas = rec.measured.samples.col(0);
    const VectorXd y_hat = predict_output(chain, task.q0, rec.u, p_prev, init_prev,
                                          resample_disturbance(d_prev, est.dt, trace).samples.col(0), est.dt, trace);
    rec.predicted = Trajectory(est.dt, MatrixXd(y_hat), {"y_hat"});
    rec.prediction_error = (meas - y_hat).head(est.samples).norm();
    rec.vibration = vibration_metric(meas, cfg.motion_end(), cfg.window());
    rec.predicted_vibration = vibration_metric(y_hat, cfg.motion_end(), cfg.window());

    LearnedModel learned;
    try {
      learned = learn(chain, rec.measured, rec.u, p_prev, d_prev, task.q0, est, cfg.learn_disturbance);
    } catch (const Error& e) {
      detail::note(rec, std::string("learning: ") + e.what());
      learned.p = p_prev;
      learned.init = init_prev;
      learned.d = d_prev;
    }
    rec.parameter_status = learned.parameter_step.status;
    rec.disturbance_status = learned.disturbance_step.status;
    rec.parameter_iterations = learned.parameter_step.iterations;
    rec.disturbance_iterations = learned.disturbance_step.iterations;
    if (learned.parameter_step.fallback) detail::note(rec, "parameters: " + learned.parameter_step.message);
    if (learned.disturbance_step.fallback) detail::note(rec, "disturbance: " + learned.disturbance_step.message);
    rec.p = learned.p;
    rec.init = learned.init;
    rec.d = learned.d;

    const VectorXd y_est = meas.head(est.samples);
    rec.fit_error =
        (predict_output(chain, task.q0, rec.u, rec.p, rec.init, rec.d.samples.col(0), est.dt, est.samples) - y_est)
            .norm();
    rec.fit_error_without_d =
        (predict_output(chain, task.q0, rec.u, rec.p, rec.init, VectorXd(), est.dt, est.samples) - y_est).norm();

    try {
      plan = solve_ptp_ocp(chain, task, rec.p, ocp_disturbance(rec.d), rec.u, cfg.ocp);
    } catch (const Error& e) {
      detail::note(rec, std::string("ocp: ") + e.what());
      plan.u = rec.u;
      plan.fallback = true;
      plan.status = nlp::SolveStatus::qp_failure;
      plan.message = e.what();
    }
    rec.ocp_status = plan.status;
    rec.ocp_iterations = plan.iterations;

    p_prev = rec.p;
    init_prev = rec.init;
    d_prev = rec.d;
    run.records.push_back(std::move(rec));
  }
  run.final_plan = plan;
  return run;
}

}  // namespace beamilc
