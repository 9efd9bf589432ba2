#pragma once

#include "beamilc/dynamics.hpp"
#include "beamilc/nlp/shooting.hpp"
#include "beamilc/trajectory.hpp"

#include <numbers>

namespace beamilc {

/// Shooting dynamics of the setup model on a uniform grid:
/// v = [u (dof), d], p = [k c m l a b tau_e0].
inline nlp::ShootingSpec setup_shooting_spec(const KinematicChain& chain, double dt, int intervals,
                                             const std::string& prefix) {
  if (!(dt > 0.0)) throw InvalidArgument("setup_shooting_spec: step must be positive");
  const int n = chain.dof();
  const StateLayout s{n};
  nlp::ShootingSpec spec;
  spec.prefix = prefix;
  spec.nx = s.size();
  spec.nv = n + 1;
  spec.np = BeamParams::kSize;
  spec.intervals = intervals;
  spec.step = [&chain, dt, n](const nlp::DualVector& x, const nlp::DualVector& v, const nlp::DualVector& p) {
    const BeamParamsT<Dual> bp = BeamParamsT<Dual>::from_vector(p);
    return rk4_step<Dual>(chain, x, nlp::DualVector(v.head(n)), bp, v[n], dt);
  };
  spec.x_lower = VectorXd::Constant(s.size(), -nlp::kInf);
  spec.x_upper = VectorXd::Constant(s.size(), nlp::kInf);
  spec.x_lower[s.theta()] = -std::numbers::pi;
  spec.x_upper[s.theta()] = std::numbers::pi;
  return spec;
}

/// Typical magnitudes of the setup variables for the solver's scaling:
/// pendulum angle 0.1 rad, its rate 1 rad/s, torques and disturbance
/// 0.1 N*m, parameters from `param_scale`.
inline void apply_setup_scaling(nlp::NlpProblem& prob, const nlp::ShootingLayout& lay, int dof,
                                const VectorXd& param_scale) {
  const StateLayout s{dof};
  for (int k = 0; k <= lay.intervals; ++k) {
    prob.set_scale(lay.state(k, s.theta()), 0.1);
    prob.set_scale(lay.state(k, s.tau_hat()), 0.1);
    prob.set_scale(lay.state(k, s.tau_e()), 0.1);
  }
  for (int k = 0; k < lay.intervals; ++k) prob.set_scale(lay.input(k, dof), 0.1);
  require_dim(param_scale.size(), lay.np, "apply_setup_scaling: parameter scale");
  for (int i = 0; i < lay.np; ++i) prob.set_scale(lay.param(i), param_scale[i]);
}

/// Average of the zero-order-held input u over each interval
/// [k dt, (k+1) dt) of a finer or coarser grid; u is zero after its last
/// row.
inline MatrixXd hold_average(const Trajectory& u, double dt, long intervals) {
  u.validate();
  if (!(dt > 0.0)) throw InvalidArgument("hold_average: step must be positive");
  MatrixXd out = MatrixXd::Zero(intervals, u.channels());
  for (long k = 0; k < intervals; ++k) {
    const double a = static_cast<double>(k) * dt, b = a + dt;
    const long first = static_cast<long>(std::floor(a / u.dt));
    for (long j = std::max(0L, first); j < u.rows(); ++j) {
      const double lo = std::max(a, static_cast<double>(j) * u.dt);
      const double hi = std::min(b, static_cast<double>(j + 1) * u.dt);
      if (hi <= lo) {
        if (static_cast<double>(j) * u.dt >= b) break;
        continue;
      }
      out.row(k) += (hi - lo) / dt * u.samples.row(j);
    }
  }
  return out;
}

/// Shooting inputs [u, d] from averaged joint accelerations and an
/// optional disturbance (empty = zero).
inline MatrixXd setup_inputs(const MatrixXd& u, const VectorXd& d) {
  MatrixXd v = MatrixXd::Zero(u.rows(), u.cols() + 1);
  v.leftCols(u.cols()) = u;
  if (d.size() != 0) {
    require_dim(d.size(), u.rows(), "setup_inputs: disturbance");
    v.col(u.cols()) = d;
  }
  return v;
}

}  // namespace beamilc
