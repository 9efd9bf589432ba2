#pragma once

#include "beamilc/dual.hpp"
#include "beamilc/error.hpp"
#include "beamilc/kinematics.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace beamilc {

inline constexpr double kGravity = 9.81;

inline Vector3d gravity_vector() { return Vector3d(0.0, 0.0, -kGravity); }

/// Lumped beam model parameters p = [k c m l a b tau_e0].
template <class T>
struct BeamParamsT {
  static constexpr int kSize = 7;
  static constexpr std::array<const char*, kSize> kNames = {"k", "c", "m", "l", "a", "b", "tau_e0"};
  static constexpr std::array<const char*, kSize> kUnits = {"N*m/rad", "N*m*s/rad", "kg", "m",
                                                            "1/s",     "1/s",       "N*m"};

  T k = 1.0;       // spring stiffness
  T c = 0.0;       // damping
  T m = 1.0;       // lumped mass
  T l = 1.0;       // pendulum length
  T a = 50.0;      // inverse filter time constant
  T b = 2.0;       // estimator error decay rate
  T tau_e0 = 0.0;  // initial estimator error

  T& operator[](int i) { return const_cast<T&>(std::as_const(*this)[i]); }
  const T& operator[](int i) const {
    switch (i) {
      case 0: return k;
      case 1: return c;
      case 2: return m;
      case 3: return l;
      case 4: return a;
      case 5: return b;
      case 6: return tau_e0;
      default: throw std::out_of_range("BeamParams index");
    }
  }

  VecXT<T> to_vector() const {
    VecXT<T> v(kSize);
    for (int i = 0; i < kSize; ++i) v[i] = (*this)[i];
    return v;
  }

  template <class Derived>
  static BeamParamsT from_vector(const Eigen::MatrixBase<Derived>& v) {
    require_dim(v.size(), kSize, "BeamParams::from_vector");
    BeamParamsT p;
    for (int i = 0; i < kSize; ++i) p[i] = v[i];
    return p;
  }

  /// Positivity invariants (k, m, l, a, b > 0; c >= 0).
  void validate() const {
    const double kv = value_of(k), cv = value_of(c), mv = value_of(m), lv = value_of(l);
    const double av = value_of(a), bv = value_of(b), tv = value_of(tau_e0);
    if (!(kv > 0.0)) throw InvalidArgument("beam parameter k must be positive");
    if (!(cv >= 0.0)) throw InvalidArgument("beam parameter c must be non-negative");
    if (!(mv > 0.0)) throw InvalidArgument("beam parameter m must be positive");
    if (!(lv > 0.0)) throw InvalidArgument("beam parameter l must be positive");
    if (!(av > 0.0)) throw InvalidArgument("beam parameter a must be positive");
    if (!(bv > 0.0)) throw InvalidArgument("beam parameter b must be positive");
    if (!std::isfinite(tv)) throw InvalidArgument("beam parameter tau_e0 must be finite");
  }
};
using BeamParams = BeamParamsT<double>;

template <class T>
BeamParamsT<T> cast_params(const BeamParams& p) {
  BeamParamsT<T> r;
  for (int i = 0; i < BeamParams::kSize; ++i) r[i] = T(p[i]);
  return r;
}

/// Physical beam data used for the analytic parameter prior.
struct BeamGeometry {
  double length = 0.6;        // m
  double width = 0.06;        // m
  double thickness = 0.001;   // m
  double density = 6300.0;    // kg/m^3
  double bending_stiffness = 1.267;  // EI, N*m^2

  void validate() const {
    if (!(length > 0 && width > 0 && thickness > 0 && density > 0 && bending_stiffness > 0)) {
      throw InvalidArgument("beam geometry entries must all be positive");
    }
  }
  double mass() const { return density * length * width * thickness; }
};

/// Layout of x = [q, theta, qd, theta_d, tau_hat, tau_e].
struct StateLayout {
  int dof = 0;

  int size() const { return 2 * (dof + 1) + 2; }
  int q() const { return 0; }
  int theta() const { return dof; }
  int qd() const { return dof + 1; }
  int theta_d() const { return 2 * dof + 1; }
  int tau_hat() const { return 2 * dof + 2; }
  int tau_e() const { return 2 * dof + 3; }
};

/// Body-frame quantities driving the pendulum: the specific force
/// R_b^T (g - pdd_b), angular velocity and angular acceleration in {b}.
template <class T>
struct BodyExcitation {
  Vec3T<T> specific_force;
  Vec3T<T> angular_velocity;
  Vec3T<T> angular_acceleration;
};

template <class T>
BodyExcitation<T> body_excitation(const FrameStateT<T>& fs) {
  const Mat3T<T> rt = fs.pose.rotation.transpose();
  const Vec3T<T> g = gravity_vector().cast<T>();
  return {rt * (g - fs.motion.linear_acceleration), rt * fs.motion.angular_velocity,
          rt * fs.motion.angular_acceleration};
}

/// Pendulum acceleration given the body-frame excitation.
///
/// With e = R_z(theta) i and e' = dR_z/dtheta i, the projections in the
/// Lagrangian form reduce to
///   e'^T R_b^T S(wd) R_b e          = wd_b . (e x e') = wd_b,z
///   e'^T R_b^T S(w)^T S(w) R_b e    = -(w_b . e)(w_b . e')
template <class T>
T pendulum_accel(const BodyExcitation<T>& ex, const T& theta, const T& theta_d, const BeamParamsT<T>& p) {
  using std::cos;
  using std::sin;
  const T ct = cos(theta);
  const T st = sin(theta);
  // e = (ct, st, 0), e' = (-st, ct, 0)
  const T e_dot_w = ex.angular_velocity.x() * ct + ex.angular_velocity.y() * st;
  const T ep_dot_w = -ex.angular_velocity.x() * st + ex.angular_velocity.y() * ct;
  const T ep_dot_f = -ex.specific_force.x() * st + ex.specific_force.y() * ct;
  const T inertia = p.m * p.l * p.l;
  return -(p.c * theta_d + p.k * theta) / inertia + ep_dot_f / p.l - ex.angular_acceleration.z() -
         e_dot_w * ep_dot_w;
}

template <class T>
T pendulum_accel(const KinematicChain& chain, const VecXT<T>& q, const VecXT<T>& qd, const VecXT<T>& qdd,
                 const T& theta, const T& theta_d, const BeamParamsT<T>& p) {
  return pendulum_accel<T>(body_excitation<T>(frame_state<T>(chain, q, qd, qdd)), theta, theta_d, p);
}

inline double pendulum_accel(const KinematicChain& chain, const VectorXd& q, const VectorXd& qd,
                             const VectorXd& qdd, double theta, double theta_d, const BeamParams& p) {
  return pendulum_accel<double>(chain, q, qd, qdd, theta, theta_d, p);
}

/// Reaction torque about Z_b, including the equivalent disturbance d.
template <class T>
T reaction_torque(const T& theta, const T& theta_d, const BeamParamsT<T>& p, const T& d) {
  return -p.c * theta_d - p.k * theta + d;
}

/// First-order sensing filter and decaying estimator error:
/// returns (d tau_hat / dt, d tau_e / dt).
template <class T>
std::pair<T, T> measurement_dynamics(const T& tau_hat, const T& tau, const T& tau_e, const BeamParamsT<T>& p) {
  return {-p.a * tau_hat + p.a * (tau + tau_e), -p.b * tau_e};
}

/// Continuous setup dynamics xdot = f(x, u, p, d).
template <class T>
VecXT<T> setup_ode(const KinematicChain& chain, const VecXT<T>& x, const VecXT<T>& u, const BeamParamsT<T>& p,
                   const T& d) {
  const StateLayout s{chain.dof()};
  const int n = s.dof;
  require_dim(x.size(), s.size(), "setup_ode: state");
  require_dim(u.size(), n, "setup_ode: input");

  const VecXT<T> q = x.segment(s.q(), n);
  const VecXT<T> qd = x.segment(s.qd(), n);
  const T& theta = x[s.theta()];
  const T& theta_d = x[s.theta_d()];

  VecXT<T> xdot(s.size());
  xdot.segment(s.q(), n) = qd;
  xdot[s.theta()] = theta_d;
  xdot.segment(s.qd(), n) = u;
  xdot[s.theta_d()] = pendulum_accel<T>(chain, q, qd, u, theta, theta_d, p);
  const T tau = reaction_torque<T>(theta, theta_d, p, d);
  const auto [tau_hat_dot, tau_e_dot] = measurement_dynamics<T>(x[s.tau_hat()], tau, x[s.tau_e()], p);
  xdot[s.tau_hat()] = tau_hat_dot;
  xdot[s.tau_e()] = tau_e_dot;
  return xdot;
}

inline VectorXd setup_ode(const KinematicChain& chain, const VectorXd& x, const VectorXd& u, const BeamParams& p,
                          double d) {
  return setup_ode<double>(chain, x, u, p, d);
}

/// Classical fourth-order Runge-Kutta step of xdot = f(x) with the
/// inputs held over the step.
template <class T, class F>
VecXT<T> rk4(const F& f, const VecXT<T>& x, double dt) {
  const VecXT<T> k1 = f(x);
  const VecXT<T> k2 = f(VecXT<T>(x + k1 * (0.5 * dt)));
  const VecXT<T> k3 = f(VecXT<T>(x + k2 * (0.5 * dt)));
  const VecXT<T> k4 = f(VecXT<T>(x + k3 * dt));
  VecXT<T> next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
  for (Eigen::Index i = 0; i < next.size(); ++i) {
    if (!std::isfinite(value_of(next[i]))) {
      throw IntegrationBlowup("RK4 step produced a non-finite state (component " + std::to_string(i) + ")");
    }
  }
  return next;
}

/// Discrete setup model F(x, u, p, d) with zero-order hold on u and d.
template <class T>
VecXT<T> rk4_step(const KinematicChain& chain, const VecXT<T>& x, const VecXT<T>& u, const BeamParamsT<T>& p,
                  const T& d, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("rk4_step: step must be positive");
  return rk4<T>([&](const VecXT<T>& xs) { return setup_ode<T>(chain, xs, u, p, d); }, x, dt);
}

inline VectorXd rk4_step(const KinematicChain& chain, const VectorXd& x, const VectorXd& u, const BeamParams& p,
                         double d, double dt) {
  return rk4_step<double>(chain, x, u, p, d, dt);
}

/// Output map y = tau_hat.
template <class T>
T output_map(const KinematicChain& chain, const VecXT<T>& x) {
  const StateLayout s{chain.dof()};
  require_dim(x.size(), s.size(), "output_map: state");
  return x[s.tau_hat()];
}

/// Simulates the setup model over inputs.rows() steps. Returns the
/// (steps + 1) x n_x matrix of visited states. `disturbance` may be empty
/// (treated as zero) or hold one value per step.
inline MatrixXd rollout(const KinematicChain& chain, const VectorXd& x0, const MatrixXd& inputs, const BeamParams& p,
                        const VectorXd& disturbance, double dt) {
  const StateLayout s{chain.dof()};
  require_dim(x0.size(), s.size(), "rollout: initial state");
  require_dim(inputs.cols(), s.dof, "rollout: inputs");
  if (disturbance.size() != 0) require_dim(disturbance.size(), inputs.rows(), "rollout: disturbance");
  MatrixXd states(inputs.rows() + 1, s.size());
  states.row(0) = x0.transpose();
  VectorXd x = x0;
  for (Eigen::Index k = 0; k < inputs.rows(); ++k) {
    const double d = disturbance.size() ? disturbance[k] : 0.0;
    x = rk4_step(chain, x, VectorXd(inputs.row(k).transpose()), p, d, dt);
    states.row(k + 1) = x.transpose();
  }
  return states;
}

/// Static pendulum residual f_p(q, 0, theta, 0, p).
template <class T>
T pendulum_static_residual(const Vector3d& body_gravity, const T& theta, const BeamParamsT<T>& p) {
  using std::cos;
  using std::sin;
  return -p.k * theta / (p.m * p.l * p.l) + (-body_gravity.x() * sin(theta) + body_gravity.y() * cos(theta)) / p.l;
}

/// Gravity expressed in {b} at a stationary configuration.
inline Vector3d body_gravity(const KinematicChain& chain, const VectorXd& q) {
  return forward_kinematics(chain, q).rotation.transpose() * gravity_vector();
}

/// Equilibrium pendulum angle for gravity gb in {b} (stationary arm): the stable
/// root of the static residual in (-pi, pi) closest to zero, refined by
/// safeguarded Newton iterations to |residual| < 1e-12.
inline double pendulum_equilibrium(const Vector3d& gb, const BeamParams& p) {
  p.validate();
  auto f = [&](double th) { return pendulum_static_residual<double>(gb, th, p); };
  auto df = [&](double th) {
    return -p.k / (p.m * p.l * p.l) + (-gb.x() * std::cos(th) - gb.y() * std::sin(th)) / p.l;
  };
  constexpr double kTol = 1e-12;
  constexpr int kGrid = 720;
  constexpr double pi = std::numbers::pi;

  if (std::abs(f(0.0)) < kTol) return 0.0;

  // Stable roots have f decreasing through zero; pick the bracket nearest 0.
  double best_lo = 0.0, best_hi = 0.0;
  double best_dist = std::numeric_limits<double>::infinity();
  double prev_th = -pi + 2.0 * pi / kGrid;
  double prev_f = f(prev_th);
  for (int i = 2; i < kGrid; ++i) {
    const double th = -pi + 2.0 * pi * i / kGrid;
    const double fv = f(th);
    if (prev_f > 0.0 && fv <= 0.0) {
      const double dist = std::min(std::abs(prev_th), std::abs(th));
      if (dist < best_dist) {
        best_dist = dist;
        best_lo = prev_th;
        best_hi = th;
      }
    }
    prev_th = th;
    prev_f = fv;
  }
  if (!std::isfinite(best_dist)) throw NoEquilibrium("pendulum_equilibrium: no stable root in (-pi, pi)");

  double lo = best_lo, hi = best_hi;  // f(lo) > 0 >= f(hi)
  double th = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double fv = f(th);
    if (std::abs(fv) < kTol) return th;
    if (fv > 0.0) lo = th; else hi = th;
    const double d = df(th);
    double next = d != 0.0 ? th - fv / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo < 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(th))) return next;
    th = next;
  }
  return th;
}

inline double pendulum_equilibrium(const KinematicChain& chain, const VectorXd& q, const BeamParams& p) {
  return pendulum_equilibrium(body_gravity(chain, q), p);
}

/// Options for the analytic prior that the geometry does not determine.
struct AnalyticInitOptions {
  double damping_ratio = 0.01;
  double a = 50.0;
  double b = 2.0;
  double tau_e0 = 0.0;
};

/// First cantilever bending frequency (rad/s) from Euler-Bernoulli theory.
inline double cantilever_first_frequency(const BeamGeometry& g) {
  constexpr double kBeta1L = 1.8751;
  const double mass_per_length = g.mass() / g.length;
  return kBeta1L * kBeta1L * std::sqrt(g.bending_stiffness / (mass_per_length * std::pow(g.length, 4)));
}

/// Pendulum prior matched to the first cantilever mode: l = 2L/3,
/// m = 3M/8, k = m l^2 w1^2, c = 2 zeta m l^2 w1.
inline BeamParams analytic_init_params(const BeamGeometry& geom, const AnalyticInitOptions& opts = {}) {
  geom.validate();
  const double w1 = cantilever_first_frequency(geom);
  BeamParams p;
  p.l = 2.0 * geom.length / 3.0;
  p.m = 3.0 * geom.mass() / 8.0;
  const double inertia = p.m * p.l * p.l;
  p.k = inertia * w1 * w1;
  p.c = 2.0 * opts.damping_ratio * inertia * w1;
  p.a = opts.a;
  p.b = opts.b;
  p.tau_e0 = opts.tau_e0;
  return p;
}

/// Rest state at configuration q with pendulum angle theta.
inline VectorXd rest_state(const KinematicChain& chain, const VectorXd& q, double theta, double tau_hat,
                           double tau_e) {
  const StateLayout s{chain.dof()};
  require_dim(q.size(), s.dof, "rest_state: q");
  VectorXd x = VectorXd::Zero(s.size());
  x.segment(s.q(), s.dof) = q;
  x[s.theta()] = theta;
  x[s.tau_hat()] = tau_hat;
  x[s.tau_e()] = tau_e;
  return x;
}

}  // namespace beamilc
