#pragma once

#include "beamilc/dynamics.hpp"
#include "beamilc/nlp/sqp.hpp"
#include "beamilc/setup_shooting.hpp"
#include "beamilc/trajectory.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace beamilc {

/// Rest-to-rest task: start configuration, goal pose of {b}, horizons.
/// A non-empty goal_joints replaces the pose goal by q_Nc = goal_joints
/// (for chains with fewer than six joints).
struct TaskDefinition {
  VectorXd q0;
  Vector3d goal_position = Vector3d::Zero();
  Matrix3d goal_rotation = Matrix3d::Identity();
  VectorXd goal_joints;
  int control_horizon = 48;
  int prediction_horizon = 144;
  double dt = 0.01;

  /// Goal = start pose translated by `displacement` in {0}.
  static TaskDefinition from_displacement(const KinematicChain& chain, const VectorXd& q0,
                                          const Vector3d& displacement) {
    TaskDefinition t;
    t.q0 = q0;
    const FramePose start = forward_kinematics(chain, q0);
    t.goal_position = start.position + displacement;
    t.goal_rotation = start.rotation;
    return t;
  }

  void validate(const KinematicChain& chain) const {
    require_dim(q0.size(), chain.dof(), "task: q0");
    if (goal_joints.size() != 0) require_dim(goal_joints.size(), chain.dof(), "task: goal_joints");
    if (!(control_horizon > 1 && control_horizon < prediction_horizon)) {
      throw InvalidArgument("task: need 1 < control horizon < prediction horizon");
    }
    if (!(dt > 0.0)) throw InvalidArgument("task: step must be positive");
    if (!is_rotation(goal_rotation, 1e-8)) throw InvalidArgument("task: goal rotation is not a proper rotation");
  }
};

struct OcpWeights {
  double q = 1.0;         // state deviation, q block only
  double r1 = 1e-2;       // input
  double r2 = 1e-1;       // input change
  double r0 = 0.0;        // prior input (u - u_prev)
  double rho1 = 10.0;     // |theta - theta_f|
  double rho2 = 1.0;      // |theta_dot|
  double rho3 = 10.0;     // |tau - tau_f|
  double gamma = 1.05;

  void validate() const {
    if (!(q >= 0 && r1 >= 0 && r2 >= 0 && r0 >= 0 && rho1 >= 0 && rho2 >= 0 && rho3 >= 0)) {
      throw InvalidArgument("ocp weights must be non-negative");
    }
    if (!(gamma > 1.0)) throw InvalidArgument("ocp weight gamma must exceed 1");
  }
};

struct OcpOptions {
  OcpWeights weights;
  double theta_limit = std::numbers::pi / 2;
  nlp::SqpOptions solver = [] {
    nlp::SqpOptions o;
    o.max_iterations = 200;
    return o;
  }();
};

struct PlannedMotion {
  Trajectory u;        // prediction_horizon rows
  MatrixXd states;     // model rollout of u, prediction_horizon + 1 rows
  VectorXd tau;        // predicted reaction torque incl. disturbance, per interval
  double theta_f = 0.0;
  double tau_f = 0.0;
  double vibration_cost = 0.0;  // prediction-horizon l1 cost at u
  double terminal_position_error = 0.0;
  double terminal_orientation_error = 0.0;
  double terminal_velocity = 0.0;
  nlp::SolveStatus status = nlp::SolveStatus::max_iterations;
  bool fallback = false;
  int iterations = 0;
  std::string message;
};

/// Disturbance on a new uniform grid of `rows` samples: linear
/// interpolation; past the last sample it holds the mean of the final
/// tenth of the input.
inline Trajectory resample_disturbance(const Trajectory& d, double dt, long rows) {
  if (d.samples.size() == 0) throw InvalidArgument("resample_disturbance: empty disturbance");
  d.validate();
  if (!(dt > 0.0) || rows < 1) throw InvalidArgument("resample_disturbance: bad target grid");
  const long n = d.rows();
  const long tail = std::max(1L, n / 10);
  const VectorXd tail_mean = d.samples.bottomRows(tail).colwise().mean().transpose();
  Trajectory out(dt, MatrixXd::Zero(rows, d.channels()), d.labels, d.start_time);
  for (long k = 0; k < rows; ++k) {
    const double s = static_cast<double>(k) * dt / d.dt;
    const long i = static_cast<long>(std::floor(s + 1e-9));
    if (i >= n - 1) {
      out.samples.row(k) = (i == n - 1 && std::abs(s - static_cast<double>(i)) < 1e-9)
                               ? VectorXd(d.samples.row(n - 1).transpose())
                               : tail_mean;
      continue;
    }
    const double f = std::clamp(s - static_cast<double>(i), 0.0, 1.0);
    out.samples.row(k) = (1.0 - f) * d.samples.row(i) + f * d.samples.row(i + 1);
  }
  return out;
}

/// Equilibrium reaction torque after the motion: spring torque at rest plus
/// the mean disturbance over the prediction window.
inline double equilibrium_torque(double k, double theta_f, const VectorXd& d_window) {
  return -k * theta_f + (d_window.size() ? d_window.mean() : 0.0);
}

/// l1 cost of the residual motion after the control horizon.
inline double vibration_cost(const MatrixXd& states, const VectorXd& tau, int dof, int control_horizon,
                             double theta_f, double tau_f, const OcpWeights& w) {
  const StateLayout s{dof};
  double cost = 0.0;
  for (long k = control_horizon; k < tau.size(); ++k) {
    const double g = std::pow(w.gamma, static_cast<double>(k));
    cost += g * (w.rho1 * std::abs(states(k, s.theta()) - theta_f) + w.rho2 * std::abs(states(k, s.theta_d())) +
                 w.rho3 * std::abs(tau[k] - tau_f));
  }
  return cost;
}

namespace detail {

inline MatrixXd pad_rows(const MatrixXd& m, long rows, long cols) {
  MatrixXd out = MatrixXd::Zero(rows, cols);
  const long r = std::min<long>(rows, m.rows());
  if (r > 0) out.topRows(r) = m.topRows(r);
  return out;
}

inline MatrixXd repeat_rows(const VectorXd& v, long rows) { return v.transpose().replicate(rows, 1); }

}  // namespace detail

/// Fills in the model rollout, predicted torque and terminal errors of a
/// planned input.
inline void evaluate_plan(const KinematicChain& chain, const TaskDefinition& task, const BeamParams& p,
                          const VectorXd& d, const VectorXd& x0, const OcpWeights& w, PlannedMotion& plan) {
  const int n = chain.dof();
  const StateLayout s{n};
  const int np = task.prediction_horizon, nc = task.control_horizon;
  const nlp::ShootingSpec spec = setup_shooting_spec(chain, task.dt, np, "");
  plan.states = nlp::simulate_shooting(spec, x0, setup_inputs(plan.u.samples, d), p.to_vector());
  plan.tau.resize(np);
  for (int k = 0; k < np; ++k) {
    plan.tau[k] = reaction_torque(plan.states(k, s.theta()), plan.states(k, s.theta_d()), p, d[k]);
  }
  plan.vibration_cost = vibration_cost(plan.states, plan.tau, n, nc, plan.theta_f, plan.tau_f, w);
  const VectorXd qf = plan.states.row(nc).segment(s.q(), n).transpose();
  plan.terminal_velocity = plan.states.row(nc).segment(s.qd(), n).lpNorm<Eigen::Infinity>();
  if (task.goal_joints.size() != 0) {
    plan.terminal_position_error = (qf - task.goal_joints).norm();
    plan.terminal_orientation_error = 0.0;
  } else {
    const FramePose pose = forward_kinematics(chain, qf);
    plan.terminal_position_error = (pose.position - task.goal_position).norm();
    plan.terminal_orientation_error = orientation_error(pose.rotation, task.goal_rotation).norm();
  }
}

/// Worst ratio |value| / limit over joint position, velocity, acceleration
/// and jerk of a plan; <= 1 means all limits hold.
inline double limit_usage(const KinematicChain& chain, const PlannedMotion& plan, double dt) {
  const int n = chain.dof();
  const StateLayout s{n};
  const JointLimits& lim = chain.limits();
  double worst = 0.0;
  for (long k = 0; k < plan.states.rows(); ++k) {
    for (int i = 0; i < n; ++i) {
      const double q = plan.states(k, s.q() + i);
      const double mid = 0.5 * (lim.q_min[i] + lim.q_max[i]), half = 0.5 * (lim.q_max[i] - lim.q_min[i]);
      worst = std::max(worst, std::abs(q - mid) / half);
      worst = std::max(worst, std::abs(plan.states(k, s.qd() + i)) / lim.qd_max[i]);
    }
  }
  const MatrixXd& u = plan.u.samples;
  for (long k = 0; k < u.rows(); ++k) {
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(u(k, i)) / lim.qdd_max[i]);
      if (k + 1 < u.rows()) worst = std::max(worst, std::abs(u(k + 1, i) - u(k, i)) / dt / lim.jerk_max[i]);
    }
  }
  return worst;
}

namespace detail {

/// Static pendulum angle at the goal.
inline double goal_equilibrium(const KinematicChain& chain, const TaskDefinition& task, const BeamParams& p) {
  if (task.goal_joints.size() != 0) return pendulum_equilibrium(chain, task.goal_joints, p);
  return pendulum_equilibrium(Vector3d(task.goal_rotation.transpose() * gravity_vector()), p);
}

inline VectorXd task_start_state(const KinematicChain& chain, const TaskDefinition& task, const BeamParams& p,
                                 double d0) {
  const double theta0 = pendulum_equilibrium(chain, task.q0, p);
  return rest_state(chain, task.q0, theta0, reaction_torque(theta0, 0.0, p, d0), 0.0);
}

/// Plan record for a given input: equilibrium targets, rollout, errors.
inline PlannedMotion plan_for_input(const KinematicChain& chain, const TaskDefinition& task, const BeamParams& p,
                                    const VectorXd& dist, const MatrixXd& u, const OcpWeights& w) {
  const int nc = task.control_horizon, np = task.prediction_horizon;
  PlannedMotion plan;
  plan.theta_f = goal_equilibrium(chain, task, p);
  plan.tau_f = equilibrium_torque(p.k, plan.theta_f, dist.segment(nc, np - nc));
  plan.u = Trajectory::zeros(task.dt, np, chain.dof(), "u");
  plan.u.samples = u;
  evaluate_plan(chain, task, p, dist, task_start_state(chain, task, p, dist[0]), w, plan);
  return plan;
}

/// One SQP solve of the point-to-point problem from the guess u_guess;
/// u_prior is the previous input for the optional prior term.
inline PlannedMotion solve_ptp_from(const KinematicChain& chain, const TaskDefinition& task, const BeamParams& p,
                                    const VectorXd& dist, const MatrixXd& u_start, const MatrixXd& u_prior,
                                    const OcpWeights& w, const OcpOptions& opts) {
  const int n = chain.dof();
  const StateLayout s{n};
  const int np = task.prediction_horizon, nc = task.control_horizon;
  const JointLimits& lim = chain.limits();
  MatrixXd u_guess = u_start;
  u_guess.row(0).setZero();
  u_guess.bottomRows(np - nc + 1).setZero();

  const double theta_f = goal_equilibrium(chain, task, p);
  const double tau_f = equilibrium_torque(p.k, theta_f, dist.segment(nc, np - nc));
  const VectorXd x0 = task_start_state(chain, task, p, dist[0]);

  nlp::NlpProblem prob;
  nlp::ShootingSpec spec = setup_shooting_spec(chain, task.dt, np, "");
  for (int i = 0; i < n; ++i) {
    spec.x_lower[s.q() + i] = lim.q_min[i];
    spec.x_upper[s.q() + i] = lim.q_max[i];
    spec.x_lower[s.qd() + i] = -lim.qd_max[i];
    spec.x_upper[s.qd() + i] = lim.qd_max[i];
  }
  spec.x_lower[s.theta()] = -opts.theta_limit;
  spec.x_upper[s.theta()] = opts.theta_limit;
  spec.v_lower = VectorXd::Constant(n + 1, -nlp::kInf);
  spec.v_upper = VectorXd::Constant(n + 1, nlp::kInf);
  spec.v_lower.head(n) = -lim.qdd_max;
  spec.v_upper.head(n) = lim.qdd_max;
  const nlp::ShootingLayout lay = nlp::transcribe_shooting(prob, spec);

  const MatrixXd v_guess = setup_inputs(u_guess, dist);
  const MatrixXd x_guess = nlp::simulate_shooting(spec, x0, v_guess, p.to_vector());
  nlp::set_shooting_guess(prob, lay, x_guess.cwiseMax(detail::repeat_rows(spec.x_lower, np + 1))
                                          .cwiseMin(detail::repeat_rows(spec.x_upper, np + 1)),
                          v_guess, p.to_vector());
  for (int k = 0; k <= np; ++k) {
    prob.set_scale(lay.state(k, s.theta()), 0.1);
    prob.set_scale(lay.state(k, s.tau_hat()), 0.1);
    prob.set_scale(lay.state(k, s.tau_e()), 0.1);
  }

  for (int i = 0; i < s.size(); ++i) prob.fix(lay.state(0, i), x0[i]);
  for (int i = 0; i < BeamParams::kSize; ++i) prob.fix(lay.param(i), p[i]);
  for (int k = 0; k < np; ++k) {
    prob.fix(lay.input(k, n), dist[k]);
    if (k == 0 || k >= nc - 1) {
      for (int i = 0; i < n; ++i) prob.fix(lay.input(k, i), 0.0);
    }
  }
  for (int i = 0; i < n; ++i) prob.fix(lay.state(nc, s.qd() + i), 0.0);

  // Terminal pose.
  {
    std::vector<int> qv;
    for (int i = 0; i < n; ++i) qv.push_back(lay.state(nc, s.q() + i));
    if (task.goal_joints.size() != 0) {
      prob.add_equality({"terminal_joints", qv, n, nlp::linear_term(MatrixXd::Identity(n, n), -task.goal_joints)});
    } else {
      const Vector3d pf = task.goal_position;
      const Matrix3d rf = task.goal_rotation;
      prob.add_equality({"terminal_position", qv, 3, nlp::dual_term([&chain, pf](const nlp::DualVector& q) {
                           const FramePoseT<Dual> pose = forward_kinematics<Dual>(chain, q);
                           return nlp::DualVector(pose.position - pf.cast<Dual>());
                         })});
      prob.add_equality({"terminal_orientation", qv, 3, nlp::dual_term([&chain, rf](const nlp::DualVector& q) {
                           const FramePoseT<Dual> pose = forward_kinematics<Dual>(chain, q);
                           return nlp::DualVector(orientation_error<Dual>(pose.rotation, rf.cast<Dual>()));
                         })});
    }
  }

  // Control-horizon cost.
  if (w.q > 0) {
    for (int k = 1; k <= nc; ++k) {
      std::vector<int> qv;
      for (int i = 0; i < n; ++i) qv.push_back(lay.state(k, s.q() + i));
      prob.add_residual({"stay" + std::to_string(k), qv, n, nlp::linear_term(MatrixXd::Identity(n, n), -task.q0)}, w.q);
    }
  }
  for (int k = 1; k < nc - 1; ++k) {
    std::vector<int> uv;
    for (int i = 0; i < n; ++i) uv.push_back(lay.input(k, i));
    if (w.r1 > 0) {
      prob.add_residual({"effort" + std::to_string(k), uv, n, nlp::linear_term(MatrixXd::Identity(n, n), VectorXd::Zero(n))},
                        w.r1);
    }
    if (w.r0 > 0) {
      prob.add_residual({"prior" + std::to_string(k), uv, n,
                         nlp::linear_term(MatrixXd::Identity(n, n), -VectorXd(u_prior.row(k).transpose()))},
                        w.r0);
    }
  }
  MatrixXd diff(n, 2 * n);
  diff << -MatrixXd::Identity(n, n), MatrixXd::Identity(n, n);
  for (int k = 0; k < nc - 1; ++k) {
    std::vector<int> uv;
    for (int i = 0; i < n; ++i) uv.push_back(lay.input(k, i));
    for (int i = 0; i < n; ++i) uv.push_back(lay.input(k + 1, i));
    const std::string name = "jerk" + std::to_string(k);
    if (w.r2 > 0) prob.add_residual({name, uv, n, nlp::linear_term(diff, VectorXd::Zero(n))}, w.r2);
    prob.add_inequality({name + "_limit", uv, n, nlp::linear_term(diff, VectorXd::Zero(n))}, -lim.jerk_max * task.dt,
                        lim.jerk_max * task.dt);
  }

  // Prediction-horizon cost: theta, theta_dot and tau = -k theta - c theta_dot + d
  // are linear in the pendulum state since p is fixed.
  if (w.rho1 > 0 || w.rho2 > 0 || w.rho3 > 0) {
    MatrixXd a(3, 2);
    a << 1.0, 0.0, 0.0, 1.0, -p.k, -p.c;
    for (int k = nc; k < np; ++k) {
      const double g = std::pow(w.gamma, static_cast<double>(k));
      std::vector<int> vars{lay.state(k, s.theta()), lay.state(k, s.theta_d())};
      const Eigen::Vector3d offset(-theta_f, 0.0, dist[k] - tau_f);
      const Eigen::Vector3d weight(g * w.rho1, g * w.rho2, g * w.rho3);
      std::vector<int> rows;
      for (int r = 0; r < 3; ++r) {
        if (weight[r] > 0) rows.push_back(r);
      }
      MatrixXd ar(static_cast<long>(rows.size()), 2);
      VectorXd off(static_cast<long>(rows.size())), wr(static_cast<long>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        ar.row(static_cast<long>(r)) = a.row(rows[r]);
        off[static_cast<long>(r)] = offset[rows[r]];
        wr[static_cast<long>(r)] = weight[rows[r]];
      }
      prob.add_l1({"residual" + std::to_string(k), vars, static_cast<int>(rows.size()), nlp::linear_term(ar, off)}, wr);
    }
  }

  const nlp::NlpSolution sol = nlp::solve(prob, opts.solver);
  MatrixXd u = u_guess;
  if (sol.converged()) {
    for (int k = 0; k < np; ++k) {
      for (int i = 0; i < n; ++i) u(k, i) = sol.w[lay.input(k, i)];
    }
  }
  PlannedMotion plan = plan_for_input(chain, task, p, dist, u, w);
  plan.status = sol.status;
  plan.iterations = sol.iterations;
  plan.message = sol.message;
  return plan;
}

}  // namespace detail

/// Point-to-point motion that brings the arm to the goal within the
/// control horizon and keeps the predicted pendulum at rest afterwards.
/// `d` is the disturbance on the task grid (empty = zero); `u_prev` the
/// previous plan (empty = none), used as initial guess, prior and fallback.
/// Without a usable previous plan the search starts from the smooth motion
/// (vibration terms off), itself solved from rest.
inline PlannedMotion solve_ptp_ocp(const KinematicChain& chain, const TaskDefinition& task, const BeamParams& p,
                                   const Trajectory& d, const Trajectory& u_prev, const OcpOptions& opts = {}) {
  task.validate(chain);
  p.validate();
  opts.weights.validate();
  const int n = chain.dof();
  const int np = task.prediction_horizon;

  VectorXd dist = VectorXd::Zero(np);
  if (d.samples.size() != 0) {
    if (std::abs(d.dt - task.dt) > 1e-12 * task.dt) throw GridMismatch("solve_ptp_ocp: disturbance not on the task grid");
    require_dim(d.channels(), 1, "solve_ptp_ocp: disturbance channels");
    dist = detail::pad_rows(d.samples, np, 1).col(0);
  }
  MatrixXd u_prior = MatrixXd::Zero(np, n);
  const bool have_prev = u_prev.samples.size() != 0;
  if (have_prev) {
    if (std::abs(u_prev.dt - task.dt) > 1e-12 * task.dt) throw GridMismatch("solve_ptp_ocp: previous input not on the task grid");
    require_dim(u_prev.channels(), n, "solve_ptp_ocp: previous input channels");
    u_prior = detail::pad_rows(u_prev.samples, np, n);
  }

  int iterations = 0;
  if (have_prev) {
    PlannedMotion plan = detail::solve_ptp_from(chain, task, p, dist, u_prior, u_prior, opts.weights, opts);
    iterations += plan.iterations;
    if (plan.status == nlp::SolveStatus::converged) return plan;
  }
  OcpWeights smooth_w = opts.weights;
  smooth_w.rho1 = smooth_w.rho2 = smooth_w.rho3 = 0.0;
  const PlannedMotion smooth =
      detail::solve_ptp_from(chain, task, p, dist, MatrixXd::Zero(np, n), u_prior, smooth_w, opts);
  iterations += smooth.iterations;
  PlannedMotion plan = smooth;
  const bool smooth_only = opts.weights.rho1 == 0 && opts.weights.rho2 == 0 && opts.weights.rho3 == 0;
  if (smooth.status == nlp::SolveStatus::converged && !smooth_only) {
    plan = detail::solve_ptp_from(chain, task, p, dist, smooth.u.samples, u_prior, opts.weights, opts);
    iterations += plan.iterations;
  }
  if (plan.status != nlp::SolveStatus::converged) {
    // keep the previous input (or rest) and report the failure
    PlannedMotion kept = detail::plan_for_input(chain, task, p, dist, u_prior, opts.weights);
    kept.status = plan.status;
    kept.message = plan.message;
    kept.fallback = true;
    plan = kept;
  }
  plan.iterations = iterations;
  return plan;
}

}  // namespace beamilc
