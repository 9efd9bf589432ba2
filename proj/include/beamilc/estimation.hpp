#pragma once

#include "beamilc/dynamics.hpp"
#include "beamilc/nlp/sqp.hpp"
#include "beamilc/setup_shooting.hpp"
#include "beamilc/trajectory.hpp"

#include <Eigen/Eigenvalues>

#include <string>

namespace beamilc {

struct EstimationConfig {
  long samples = 240;
  double dt = 0.006;
  // Per-sample weights, summed over all samples like the data misfit.
  VectorXd v1;  // Tikhonov on p (7)
  VectorXd v2;  // change from the previous estimate (7)
  double w1 = 1e-4;  // disturbance magnitude
  double w2 = 1e-3;  // change from the previous disturbance
  double w3 = 1e-2;  // disturbance rate
  VectorXd p_lower;
  VectorXd p_upper;
  nlp::SqpOptions solver;

  /// Scale-invariant defaults around the prior p0. tau_e0 is usually zero
  /// in the prior, so its scale is floored at 0.1 N*m.
  static EstimationConfig defaults(const BeamParams& p0) {
    EstimationConfig cfg;
    const VectorXd s = parameter_scale(p0);
    cfg.v1 = 1e-6 * s.cwiseAbs2().cwiseInverse();
    cfg.v2 = 1e-2 * s.cwiseAbs2().cwiseInverse();
    cfg.p_lower.resize(7);
    cfg.p_upper.resize(7);
    cfg.p_lower << 0.1 * p0.k, 0.0, 0.1 * p0.m, 0.1 * p0.l, 0.1 * p0.a, 0.1 * p0.b, -1.0;
    cfg.p_upper << 10.0 * p0.k, std::max(100.0 * p0.c, 0.1), 10.0 * p0.m, 5.0 * p0.l, 10.0 * p0.a, 10.0 * p0.b, 1.0;
    return cfg;
  }

  static VectorXd parameter_scale(const BeamParams& p0) {
    VectorXd s = p0.to_vector().cwiseAbs();
    s[6] = std::max(s[6], 0.1);
    for (int i = 0; i < 6; ++i) s[i] = std::max(s[i], 1e-12);
    return s;
  }

  void validate() const {
    if (samples < 2) throw InvalidArgument("estimation: need at least two samples");
    if (!(dt > 0.0)) throw InvalidArgument("estimation: dt must be positive");
    require_dim(v1.size(), 7, "estimation: v1");
    require_dim(v2.size(), 7, "estimation: v2");
    require_dim(p_lower.size(), 7, "estimation: p_lower");
    require_dim(p_upper.size(), 7, "estimation: p_upper");
    if ((v1.array() < 0).any() || (v2.array() < 0).any() || w1 < 0 || w2 < 0 || w3 < 0) {
      throw InvalidArgument("estimation: weights must be non-negative");
    }
    for (int i = 0; i < 7; ++i) {
      if (!(p_lower[i] <= p_upper[i])) {
        throw InvalidArgument(std::string("estimation: empty box for ") + BeamParams::kNames[i]);
      }
    }
    if (!(p_lower[0] > 0 && p_lower[2] > 0 && p_lower[3] > 0 && p_lower[4] > 0 && p_lower[5] > 0 && p_lower[1] >= 0)) {
      throw InvalidArgument("estimation: parameter box must keep k, m, l, a, b positive and c non-negative");
    }
  }
};

/// Initial condition of an estimation experiment.
struct InitialCondition {
  double theta0 = 0.0;
  double tau_hat0 = 0.0;
  double tau_e0 = 0.0;
};

struct ParameterEstimate {
  BeamParams p;
  InitialCondition init;
  nlp::SolveStatus status = nlp::SolveStatus::max_iterations;
  bool fallback = false;
  int iterations = 0;
  double rmse_before = 0.0;  // previous parameters, d = 0
  double rmse_after = 0.0;
  double condition = 0.0;  // condition number of the scaled output sensitivity Gram matrix
  std::string message;
};

struct DisturbanceEstimate {
  Trajectory d;
  nlp::SolveStatus status = nlp::SolveStatus::max_iterations;
  bool fallback = false;
  int iterations = 0;
  double rmse_before = 0.0;  // with d = 0
  double rmse_after = 0.0;
  std::string message;
};

struct LearnedModel {
  BeamParams p;
  InitialCondition init;
  Trajectory d;
  ParameterEstimate parameter_step;
  DisturbanceEstimate disturbance_step;
};

namespace detail {

inline VectorXd measured_column(const Trajectory& y, long samples) {
  y.validate();
  if (y.rows() < samples) {
    throw InvalidArgument("estimation: measurement has " + std::to_string(y.rows()) + " samples, need " +
                          std::to_string(samples));
  }
  return y.samples.col(0).head(samples);
}

inline void check_grid(const Trajectory& y, double dt) {
  if (std::abs(y.dt - dt) > 1e-12 * dt) {
    throw GridMismatch("estimation: measurement step " + format_sig9(y.dt) + " s differs from the estimation step " +
                       format_sig9(dt) + " s");
  }
}

inline double rms(const VectorXd& e) { return std::sqrt(e.squaredNorm() / static_cast<double>(e.size())); }

}  // namespace detail

/// Initial setup state at rest: x0 = [q0, theta0, 0, 0, tau_hat0, tau_e0].
inline VectorXd initial_state(const KinematicChain& chain, const VectorXd& q0, const InitialCondition& ic) {
  return rest_state(chain, q0, ic.theta0, ic.tau_hat0, ic.tau_e0);
}

/// Model output y_k = tau_hat_k, k = 0..samples-1, on the estimation grid.
inline VectorXd predict_output(const KinematicChain& chain, const VectorXd& q0, const Trajectory& u,
                               const BeamParams& p, const InitialCondition& ic, const VectorXd& d, double dt,
                               long samples) {
  const MatrixXd ua = hold_average(u, dt, samples - 1);
  VectorXd dd = VectorXd::Zero(samples - 1);
  if (d.size() != 0) {
    if (d.size() < samples - 1) throw DimensionError("predict_output: disturbance shorter than the horizon");
    dd = d.head(samples - 1);
  }
  const MatrixXd xs = rollout(chain, initial_state(chain, q0, ic), ua, p, dd, dt);
  return xs.col(StateLayout{chain.dof()}.tau_hat());
}

/// Condition number of S'S where S holds the output sensitivities to
/// (p, tau_hat0) scaled by typical magnitudes; theta0 follows p through the
/// static equilibrium. Large values flag weakly excited experiments.
inline double sensitivity_condition(const KinematicChain& chain, const VectorXd& q0, const MatrixXd& u_avg,
                                    const BeamParams& p, const InitialCondition& ic, double dt,
                                    const VectorXd& scale) {
  const int n = chain.dof();
  const int dirs = 8;
  BeamParamsT<Dual> pd;
  for (int i = 0; i < 7; ++i) pd[i] = Dual::variable(p[i], dirs, i);
  // One Newton step from the converged root carries d theta0 / d p.
  const Vector3d gb = body_gravity(chain, q0);
  const Dual f = pendulum_static_residual<Dual>(gb, Dual(ic.theta0), pd);
  const double fth = -p.k / (p.m * p.l * p.l) + (-gb.x() * std::cos(ic.theta0) - gb.y() * std::sin(ic.theta0)) / p.l;
  const Dual theta0 = Dual(ic.theta0) - f / fth;

  const StateLayout s{n};
  nlp::DualVector x = nlp::DualVector::Zero(s.size());
  for (int i = 0; i < n; ++i) x[s.q() + i] = Dual(q0[i]);
  x[s.theta()] = theta0;
  x[s.tau_hat()] = Dual::variable(ic.tau_hat0, dirs, 7);
  x[s.tau_e()] = pd.tau_e0;
  MatrixXd sens(u_avg.rows() + 1, dirs);
  VectorXd col_scale(dirs);
  col_scale.head(7) = scale;
  col_scale[7] = scale[6];
  auto record = [&](long k) {
    for (int j = 0; j < dirs; ++j) sens(k, j) = x[s.tau_hat()].derivative(j) * col_scale[j];
  };
  record(0);
  for (long k = 0; k < u_avg.rows(); ++k) {
    const nlp::DualVector uk = u_avg.row(k).transpose().cast<Dual>();
    x = rk4_step<Dual>(chain, x, uk, pd, Dual(0.0), dt);
    record(k + 1);
  }
  const MatrixXd gram = sens.transpose() * sens;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram);
  const double lo = std::max(es.eigenvalues().minCoeff(), 0.0);
  const double hi = es.eigenvalues().maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

/// Parameter estimation: fits p, the equilibrium angle theta0 and the
/// filter state tau_hat0 to one experiment with the disturbance ignored.
inline ParameterEstimate estimate_parameters(const KinematicChain& chain, const Trajectory& y, const Trajectory& u,
                                             const BeamParams& p_prev, const VectorXd& q0,
                                             const EstimationConfig& cfg) {
  cfg.validate();
  detail::check_grid(y, cfg.dt);
  require_dim(q0.size(), chain.dof(), "estimate_parameters: q0");
  require_dim(u.channels(), chain.dof(), "estimate_parameters: input channels");
  const long n_samples = cfg.samples;
  const int intervals = static_cast<int>(n_samples - 1);
  const VectorXd meas = detail::measured_column(y, n_samples);
  const MatrixXd u_avg = hold_average(u, cfg.dt, intervals);
  const int n = chain.dof();
  const StateLayout s{n};

  ParameterEstimate out;
  InitialCondition prev_ic{pendulum_equilibrium(chain, q0, p_prev), meas[0], p_prev.tau_e0};
  const VectorXd y_prev = predict_output(chain, q0, u, p_prev, prev_ic, VectorXd(), cfg.dt, n_samples);
  out.rmse_before = detail::rms(y_prev - meas);

  nlp::NlpProblem prob;
  const nlp::ShootingSpec spec = setup_shooting_spec(chain, cfg.dt, intervals, "");
  const nlp::ShootingLayout lay = nlp::transcribe_shooting(prob, spec);

  // Initial guess from the previous model; joint states are pinned to it
  // (they follow from u alone).
  const MatrixXd v_guess = setup_inputs(u_avg, VectorXd());
  const MatrixXd x_guess = nlp::simulate_shooting(spec, initial_state(chain, q0, prev_ic), v_guess, p_prev.to_vector());
  nlp::set_shooting_guess(prob, lay, x_guess, v_guess, p_prev.to_vector());
  apply_setup_scaling(prob, lay, n, EstimationConfig::parameter_scale(p_prev));
  for (int k = 0; k <= intervals; ++k) {
    for (int i = 0; i < n; ++i) {
      prob.fix(lay.state(k, s.q() + i), x_guess(k, s.q() + i));
      prob.fix(lay.state(k, s.qd() + i), x_guess(k, s.qd() + i));
    }
  }
  for (int k = 0; k < intervals; ++k) {
    for (int i = 0; i < n; ++i) prob.fix(lay.input(k, i), u_avg(k, i));
    prob.fix(lay.input(k, n), 0.0);
  }
  prob.fix(lay.state(0, s.theta_d()), 0.0);
  for (int i = 0; i < 7; ++i) {
    const double lo = cfg.p_lower[i], hi = cfg.p_upper[i];
    prob.set_bounds(lay.param(i), lo, hi);
    prob.set_initial(lay.param(i), std::clamp(p_prev[i], lo, hi));
  }

  // Data misfit.
  for (int k = 0; k < static_cast<int>(n_samples); ++k) {
    nlp::Term t{"misfit" + std::to_string(k), {lay.state(k, s.tau_hat())}, 1,
                nlp::linear_term(MatrixXd::Ones(1, 1), VectorXd::Constant(1, -meas[k]))};
    prob.add_residual(std::move(t), 1.0);
  }
  // Regularizers, weighted once per sample.
  const double reps = static_cast<double>(n_samples);
  for (int i = 0; i < 7; ++i) {
    if (cfg.v1[i] > 0) {
      prob.add_residual({std::string("ridge_") + BeamParams::kNames[i], {lay.param(i)}, 1,
                         nlp::linear_term(MatrixXd::Ones(1, 1), VectorXd::Zero(1))},
                        reps * cfg.v1[i]);
    }
    if (cfg.v2[i] > 0) {
      prob.add_residual({std::string("change_") + BeamParams::kNames[i], {lay.param(i)}, 1,
                         nlp::linear_term(MatrixXd::Ones(1, 1), VectorXd::Constant(1, -p_prev[i]))},
                        reps * cfg.v2[i]);
    }
  }
  // theta0 is the static equilibrium of the model at q0.
  const Vector3d gb = body_gravity(chain, q0);
  {
    std::vector<int> vars{lay.state(0, s.theta())};
    for (int i = 0; i < 4; ++i) vars.push_back(lay.param(i));
    prob.add_equality({"equilibrium", vars, 1, nlp::dual_term([gb](const nlp::DualVector& w) {
                         BeamParamsT<Dual> bp;
                         bp.k = w[1];
                         bp.c = w[2];
                         bp.m = w[3];
                         bp.l = w[4];
                         // scaled to torque units
                         nlp::DualVector r(1);
                         r[0] = pendulum_static_residual<Dual>(gb, w[0], bp) * bp.m * bp.l * bp.l;
                         return r;
                       })});
  }
  // Initial estimator error equals the parameter tau_e0.
  {
    MatrixXd a(1, 2);
    a << 1.0, -1.0;
    prob.add_equality({"initial_error", {lay.state(0, s.tau_e()), lay.param(6)}, 1,
                       nlp::linear_term(a, VectorXd::Zero(1))});
  }

  const nlp::NlpSolution sol = nlp::solve(prob, cfg.solver);
  out.status = sol.status;
  out.iterations = sol.iterations;
  out.message = sol.message;
  if (!sol.converged()) {
    out.fallback = true;
    out.p = p_prev;
    out.init = prev_ic;
    out.rmse_after = out.rmse_before;
  } else {
    out.p = BeamParams::from_vector(prob.values(sol.w, "p"));
    out.init.theta0 = sol.w[lay.state(0, s.theta())];
    out.init.tau_hat0 = sol.w[lay.state(0, s.tau_hat())];
    out.init.tau_e0 = out.p.tau_e0;
    const VectorXd y_fit = predict_output(chain, q0, u, out.p, out.init, VectorXd(), cfg.dt, n_samples);
    out.rmse_after = detail::rms(y_fit - meas);
  }
  out.condition =
      sensitivity_condition(chain, q0, u_avg, out.p, out.init, cfg.dt, EstimationConfig::parameter_scale(out.p));
  return out;
}

/// Disturbance estimation: with the model fixed, finds the per-sample
/// equivalent disturbance that explains the remaining output error.
inline DisturbanceEstimate estimate_disturbance(const KinematicChain& chain, const Trajectory& y, const Trajectory& u,
                                                const BeamParams& p, const InitialCondition& ic,
                                                const Trajectory& d_prev, const VectorXd& q0,
                                                const EstimationConfig& cfg) {
  cfg.validate();
  p.validate();
  detail::check_grid(y, cfg.dt);
  require_dim(q0.size(), chain.dof(), "estimate_disturbance: q0");
  require_dim(u.channels(), chain.dof(), "estimate_disturbance: input channels");
  const long n_samples = cfg.samples;
  // One disturbance sample per measurement; the last one drives a state
  // beyond the data and is set by the regularizers alone.
  const int intervals = static_cast<int>(n_samples);
  const VectorXd meas = detail::measured_column(y, n_samples);
  VectorXd prev = VectorXd::Zero(n_samples);
  if (d_prev.rows() > 0 && d_prev.channels() > 0) {
    detail::check_grid(d_prev, cfg.dt);
    const long m = std::min<long>(d_prev.rows(), n_samples);
    prev.head(m) = d_prev.samples.col(0).head(m);
  }
  const MatrixXd u_avg = hold_average(u, cfg.dt, intervals);
  const int n = chain.dof();
  const StateLayout s{n};

  DisturbanceEstimate out;
  const VectorXd y0 = predict_output(chain, q0, u, p, ic, VectorXd(), cfg.dt, n_samples);
  out.rmse_before = detail::rms(y0 - meas);

  nlp::NlpProblem prob;
  const nlp::ShootingSpec spec = setup_shooting_spec(chain, cfg.dt, intervals, "");
  const nlp::ShootingLayout lay = nlp::transcribe_shooting(prob, spec);
  const MatrixXd v_guess = setup_inputs(u_avg, prev);
  const VectorXd x0 = initial_state(chain, q0, ic);
  const MatrixXd x_guess = nlp::simulate_shooting(spec, x0, v_guess, p.to_vector());
  nlp::set_shooting_guess(prob, lay, x_guess, v_guess, p.to_vector());
  apply_setup_scaling(prob, lay, n, EstimationConfig::parameter_scale(p));
  for (int k = 0; k <= intervals; ++k) {
    for (int i = 0; i < n; ++i) {
      prob.fix(lay.state(k, s.q() + i), x_guess(k, s.q() + i));
      prob.fix(lay.state(k, s.qd() + i), x_guess(k, s.qd() + i));
    }
  }
  for (int i = 0; i < s.size(); ++i) prob.fix(lay.state(0, i), x0[i]);
  for (int k = 0; k < intervals; ++k) {
    for (int i = 0; i < n; ++i) prob.fix(lay.input(k, i), u_avg(k, i));
  }
  for (int i = 0; i < 7; ++i) prob.fix(lay.param(i), p[i]);

  const MatrixXd one = MatrixXd::Ones(1, 1);
  for (int k = 0; k < static_cast<int>(n_samples); ++k) {
    prob.add_residual({"misfit" + std::to_string(k), {lay.state(k, s.tau_hat())}, 1,
                       nlp::linear_term(one, VectorXd::Constant(1, -meas[k]))},
                      1.0);
    const int dk = lay.input(k, n);
    if (cfg.w1 > 0) prob.add_residual({"size" + std::to_string(k), {dk}, 1, nlp::linear_term(one, VectorXd::Zero(1))}, cfg.w1);
    if (cfg.w2 > 0) {
      prob.add_residual({"change" + std::to_string(k), {dk}, 1, nlp::linear_term(one, VectorXd::Constant(1, -prev[k]))},
                        cfg.w2);
    }
    if (cfg.w3 > 0 && k + 1 < static_cast<int>(n_samples)) {
      MatrixXd a(1, 2);
      a << -1.0, 1.0;
      prob.add_residual({"rate" + std::to_string(k), {dk, lay.input(k + 1, n)}, 1, nlp::linear_term(a, VectorXd::Zero(1))},
                        cfg.w3);
    }
  }

  const nlp::NlpSolution sol = nlp::solve(prob, cfg.solver);
  out.status = sol.status;
  out.iterations = sol.iterations;
  out.message = sol.message;
  VectorXd d = prev;
  if (!sol.converged()) {
    out.fallback = true;
  } else {
    for (int k = 0; k < intervals; ++k) d[k] = sol.w[lay.input(k, n)];
  }
  out.d = Trajectory(cfg.dt, MatrixXd(d), {"d"});
  const VectorXd y_fit = predict_output(chain, q0, u, p, ic, d, cfg.dt, n_samples);
  out.rmse_after = detail::rms(y_fit - meas);
  return out;
}

/// Both learning steps on one experiment.
inline LearnedModel learn(const KinematicChain& chain, const Trajectory& y, const Trajectory& u,
                          const BeamParams& p_prev, const Trajectory& d_prev, const VectorXd& q0,
                          const EstimationConfig& cfg, bool with_disturbance = true) {
  LearnedModel m;
  m.parameter_step = estimate_parameters(chain, y, u, p_prev, q0, cfg);
  m.p = m.parameter_step.p;
  m.init = m.parameter_step.init;
  if (with_disturbance) {
    m.disturbance_step = estimate_disturbance(chain, y, u, m.p, m.init, d_prev, q0, cfg);
    m.d = m.disturbance_step.d;
  } else {
    m.d = Trajectory::zeros(cfg.dt, cfg.samples, 1, "d");
    m.disturbance_step.d = m.d;
    m.disturbance_step.status = nlp::SolveStatus::converged;
    const VectorXd y0 = predict_output(chain, q0, u, m.p, m.init, VectorXd(), cfg.dt, cfg.samples);
    m.disturbance_step.rmse_before = m.disturbance_step.rmse_after =
        detail::rms(y0 - detail::measured_column(y, cfg.samples));
  }
  return m;
}

}  // namespace beamilc
