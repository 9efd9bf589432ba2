#pragma once

#include "beamilc/dynamics.hpp"
#include "beamilc/kinematics.hpp"
#include "beamilc/trajectory.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace beamilc {

/// One rigid segment of the truth pendulum chain: point mass at the far
/// end, torsional spring/damper at the near joint.
struct SegmentParams {
  double mass = 0.0;       // kg
  double length = 0.0;     // m
  double stiffness = 0.0;  // N*m/rad
  double damping = 0.0;    // N*m*s/rad
};

enum class TruthKind { perturbed_single_pendulum, two_segment_pendulum };

inline const char* to_string(TruthKind k) {
  return k == TruthKind::perturbed_single_pendulum ? "perturbed-single-pendulum" : "two-segment-pendulum";
}

struct PlantConfig {
  TruthKind kind = TruthKind::two_segment_pendulum;
  // two-segment-pendulum
  std::vector<SegmentParams> segments;
  // perturbed-single-pendulum: nominal parameters scaled by factors
  BeamParams nominal;
  double k_factor = 1.0;
  double c_factor = 1.0;
  double m_factor = 1.0;
  double l_factor = 1.0;
  // torque sensing path
  double a_true = 40.0;       // 1/s
  double b_true = 2.4;        // 1/s
  double tau_e0_true = 0.05;  // N*m
  double noise_std = 0.005;   // N*m
  double rate_hz = 1000.0;
  std::uint64_t seed = 1;
  // Optional torque added to the reaction torque (time in s). Not part of
  // the configuration file; used to plant known disturbances.
  std::function<double(double)> injected_torque;

  /// Segments of the truth chain, whatever the kind.
  std::vector<SegmentParams> truth_segments() const {
    if (kind == TruthKind::perturbed_single_pendulum) {
      return {{nominal.m * m_factor, nominal.l * l_factor, nominal.k * k_factor, nominal.c * c_factor}};
    }
    return segments;
  }

  void validate() const {
    const auto segs = truth_segments();
    if (segs.empty()) throw InvalidArgument("plant: truth model has no segments");
    if (kind == TruthKind::two_segment_pendulum && segs.size() != 2) {
      throw InvalidArgument("plant: two-segment-pendulum needs exactly two segments");
    }
    for (const auto& s : segs) {
      if (!(s.mass > 0 && s.length > 0 && s.stiffness > 0 && s.damping >= 0)) {
        throw InvalidArgument("plant: segment masses, lengths and stiffnesses must be positive, damping non-negative");
      }
    }
    if (!(a_true > 0 && b_true > 0)) throw InvalidArgument("plant: a_true and b_true must be positive");
    if (!(noise_std >= 0)) throw InvalidArgument("plant: noise_std must be non-negative");
    if (!(rate_hz > 0)) throw InvalidArgument("plant: rate_hz must be positive");
    if (!std::isfinite(tau_e0_true)) throw InvalidArgument("plant: tau_e0_true must be finite");
  }
};

/// Truth chain for the default mismatch experiment: 70/30 mass split over
/// 3/4 and 1/2 of the prior length. Spring constants are solved so the
/// linearized coupled modes sit at `first_ratio` and `second_ratio` times
/// the prior frequency. Of the two solutions the softer root spring is
/// kept; with segment 2 held rigid, segment 1 then swings close to the prior
/// frequency.
inline std::vector<SegmentParams> default_two_segment(const BeamParams& prior, double first_ratio = 0.9,
                                                      double second_ratio = 3.0, double damping_ratio = 0.005) {
  const double w1 = std::sqrt(prior.k / (prior.m * prior.l * prior.l));
  const double m1 = 0.7 * prior.m, m2 = 0.3 * prior.m;
  const double l1 = 0.75 * prior.l, l2 = 0.5 * prior.l;
  const double l12 = l1 + l2;
  const double m11 = m1 * l1 * l1 + m2 * l12 * l12, m12 = m2 * l2 * l12, m22 = m2 * l2 * l2;
  const double det = m11 * m22 - m12 * m12;
  const double s1 = std::pow(first_ratio * w1, 2), s2 = std::pow(second_ratio * w1, 2);
  // det(K - s M) = 0 at s1 and s2 gives k1 m22 + k2 m11 = (s1 + s2) det and
  // k1 k2 = s1 s2 det; A = k1 m22 is a root of z^2 - (s1+s2) det z + s1 s2 det m11 m22.
  const double sum = (s1 + s2) * det;
  const double disc = sum * sum - 4.0 * s1 * s2 * det * m11 * m22;
  if (!(disc >= 0.0)) throw InvalidArgument("default_two_segment: requested mode ratios are not realizable");
  const double a_root = 0.5 * (sum - std::sqrt(disc));
  const double k1 = a_root / m22;
  const double k2 = (sum - a_root) / m11;
  const double w_seg1 = std::sqrt(k1 / m11), w_seg2 = std::sqrt(k2 / m22);
  return {{m1, l1, k1, 2.0 * damping_ratio * m11 * w_seg1}, {m2, l2, k2, 2.0 * damping_ratio * m22 * w_seg2}};
}

inline PlantConfig default_plant_config(const BeamParams& prior) {
  PlantConfig cfg;
  cfg.kind = TruthKind::two_segment_pendulum;
  cfg.segments = default_two_segment(prior);
  cfg.nominal = prior;
  cfg.a_true = 0.8 * prior.a;
  cfg.b_true = 1.2 * prior.b;
  return cfg;
}

/// Planar chain geometry in {b}: absolute angles phi_j, mass positions
/// rho_j and the Jacobians d rho_j / d theta.
struct SegmentChainGeometry {
  std::vector<Eigen::Vector2d> rho;
  std::vector<Eigen::MatrixXd> jac;  // 2 x S each
  std::vector<Eigen::Vector2d> bias;  // Jdot * theta_d
};

inline SegmentChainGeometry segment_geometry(const VectorXd& theta, const VectorXd& theta_d,
                                             const std::vector<SegmentParams>& seg) {
  const int n = static_cast<int>(seg.size());
  SegmentChainGeometry g;
  double phi = 0.0, phi_d = 0.0;
  Eigen::Vector2d pos = Eigen::Vector2d::Zero(), acc_bias = Eigen::Vector2d::Zero();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2, n);
  for (int j = 0; j < n; ++j) {
    phi += theta[j];
    phi_d += theta_d[j];
    const Eigen::Vector2d e(std::cos(phi), std::sin(phi)), ep(-std::sin(phi), std::cos(phi));
    pos += seg[j].length * e;
    for (int i = 0; i <= j; ++i) jac.col(i) += seg[j].length * ep;
    acc_bias -= seg[j].length * phi_d * phi_d * e;
    g.rho.push_back(pos);
    g.jac.push_back(jac);
    g.bias.push_back(acc_bias);
  }
  return g;
}

/// Angular accelerations of the spring-coupled segment chain carried by
/// frame {b}. Lagrange's equations in the moving frame give
///   M(theta) theta_dd = -K theta - C theta_d
///     - sum_j m_j J_j' (Jdot_j theta_d + 2 w x rho_d_j + wd x rho_j + w x (w x rho_j) - f)
/// with f the specific force R_b'(g - pdd_b); K and C act on relative angles.
inline VectorXd segment_chain_accel(const BodyExcitation<double>& ex, const VectorXd& theta, const VectorXd& theta_d,
                                    const std::vector<SegmentParams>& seg) {
  const int n = static_cast<int>(seg.size());
  require_dim(theta.size(), n, "segment_chain_accel: theta");
  require_dim(theta_d.size(), n, "segment_chain_accel: theta_d");
  const SegmentChainGeometry g = segment_geometry(theta, theta_d, seg);
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(n, n);
  VectorXd rhs(n);
  for (int i = 0; i < n; ++i) rhs[i] = -seg[i].stiffness * theta[i] - seg[i].damping * theta_d[i];
  const Vector3d& w = ex.angular_velocity;
  const Vector3d& wd = ex.angular_acceleration;
  for (int j = 0; j < n; ++j) {
    const Vector3d rho(g.rho[j].x(), g.rho[j].y(), 0.0);
    const Eigen::Vector2d vel2 = g.jac[j] * theta_d;
    const Vector3d vel(vel2.x(), vel2.y(), 0.0);
    const Vector3d a = Vector3d(g.bias[j].x(), g.bias[j].y(), 0.0) + 2.0 * w.cross(vel) + wd.cross(rho) +
                       w.cross(w.cross(rho)) - ex.specific_force;
    mass += seg[j].mass * g.jac[j].transpose() * g.jac[j];
    rhs -= seg[j].mass * g.jac[j].transpose() * a.head<2>();
  }
  return mass.ldlt().solve(rhs);
}

/// Stationary equilibrium of the segment chain under gravity (Newton on the
/// static balance, started from the straight chain).
inline VectorXd segment_equilibrium(const KinematicChain& chain, const VectorXd& q,
                                    const std::vector<SegmentParams>& seg) {
  const int n = static_cast<int>(seg.size());
  BodyExcitation<double> ex{body_gravity(chain, q), Vector3d::Zero(), Vector3d::Zero()};
  auto residual = [&](const VectorXd& th) { return segment_chain_accel(ex, th, VectorXd::Zero(n), seg); };
  VectorXd th = VectorXd::Zero(n);
  for (int it = 0; it < 100; ++it) {
    const VectorXd r = residual(th);
    if (r.lpNorm<Eigen::Infinity>() < 1e-13) return th;
    Eigen::MatrixXd jac(n, n);
    for (int c = 0; c < n; ++c) {
      VectorXd tp = th, tm = th;
      tp[c] += 1e-7;
      tm[c] -= 1e-7;
      jac.col(c) = (residual(tp) - residual(tm)) / 2e-7;
    }
    VectorXd step = jac.colPivHouseholderQr().solve(-r);
    double alpha = 1.0;
    while (alpha > 1e-6 && residual(VectorXd(th + alpha * step)).norm() >= r.norm()) alpha *= 0.5;
    th += alpha * step;
  }
  if (residual(th).lpNorm<Eigen::Infinity>() > 1e-9) throw NoEquilibrium("segment_equilibrium: Newton did not converge");
  return th;
}

/// Truth state layout: [q, qd, theta (S), theta_d (S), tau_hat, tau_e].
struct TruthLayout {
  int dof = 0;
  int segments = 0;
  int size() const { return 2 * dof + 2 * segments + 2; }
  int q() const { return 0; }
  int qd() const { return dof; }
  int theta() const { return 2 * dof; }
  int theta_d() const { return 2 * dof + segments; }
  int tau_hat() const { return 2 * dof + 2 * segments; }
  int tau_e() const { return 2 * dof + 2 * segments + 1; }
};

inline VectorXd truth_ode(const KinematicChain& chain, const std::vector<SegmentParams>& seg, double a_true,
                          double b_true, const VectorXd& x, const VectorXd& u, double extra_torque) {
  const TruthLayout s{chain.dof(), static_cast<int>(seg.size())};
  require_dim(x.size(), s.size(), "truth_ode: state");
  const VectorXd q = x.segment(s.q(), s.dof), qd = x.segment(s.qd(), s.dof);
  const VectorXd th = x.segment(s.theta(), s.segments), thd = x.segment(s.theta_d(), s.segments);
  const BodyExcitation<double> ex = body_excitation<double>(frame_state<double>(chain, q, qd, u));
  VectorXd xd(s.size());
  xd.segment(s.q(), s.dof) = qd;
  xd.segment(s.qd(), s.dof) = u;
  xd.segment(s.theta(), s.segments) = thd;
  xd.segment(s.theta_d(), s.segments) = segment_chain_accel(ex, th, thd, seg);
  const double tau = -seg[0].damping * thd[0] - seg[0].stiffness * th[0] + extra_torque;
  xd[s.tau_hat()] = -a_true * x[s.tau_hat()] + a_true * (tau + x[s.tau_e()]);
  xd[s.tau_e()] = -b_true * x[s.tau_e()];
  return xd;
}

struct ExperimentResult {
  Trajectory measured;      // y (noisy filtered torque) on the estimation grid
  Trajectory truth_states;  // truth state on the estimation grid (diagnostics)
  Trajectory joints;        // achieved q on the estimation grid
};

namespace detail {

inline long grid_ratio(double coarse, double fine, const char* what) {
  const double r = coarse / fine;
  const long n = std::lround(r);
  if (n < 1 || std::abs(r - static_cast<double>(n)) > 1e-9 * r) {
    throw GridMismatch(std::string(what) + ": step " + format_sig9(coarse) + " s is not an integer multiple of " +
                       format_sig9(fine) + " s");
  }
  return n;
}

}  // namespace detail

/// Runs the truth plant from rest at q0 under the joint accelerations u
/// (zero-order hold on u's grid, zero after its last row) and samples the
/// noisy torque estimate every dt_est seconds, `samples` times.
inline ExperimentResult run_experiment(const PlantConfig& cfg, const KinematicChain& chain, const VectorXd& q0,
                                       const Trajectory& u, long samples, double dt_est) {
  cfg.validate();
  u.validate();
  require_dim(q0.size(), chain.dof(), "run_experiment: q0");
  require_dim(u.channels(), chain.dof(), "run_experiment: input channels");
  if (samples < 1) throw InvalidArgument("run_experiment: need at least one sample");
  const double dt = 1.0 / cfg.rate_hz;
  const long per_sample = detail::grid_ratio(dt_est, dt, "estimation grid");
  const long per_input = detail::grid_ratio(u.dt, dt, "input grid");

  const std::vector<SegmentParams> seg = cfg.truth_segments();
  const TruthLayout s{chain.dof(), static_cast<int>(seg.size())};
  auto extra = [&](double t) { return cfg.injected_torque ? cfg.injected_torque(t) : 0.0; };

  VectorXd x = VectorXd::Zero(s.size());
  x.segment(s.q(), s.dof) = q0;
  const VectorXd th0 = segment_equilibrium(chain, q0, seg);
  x.segment(s.theta(), s.segments) = th0;
  x[s.tau_e()] = cfg.tau_e0_true;
  x[s.tau_hat()] = -seg[0].stiffness * th0[0] + extra(0.0) + cfg.tau_e0_true;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  ExperimentResult res;
  Eigen::MatrixXd y(samples, 1), states(samples, s.size()), joints(samples, s.dof);
  const long steps = (samples - 1) * per_sample;
  const VectorXd zero_u = VectorXd::Zero(s.dof);
  for (long i = 0;; ++i) {
    const double draw = noise(rng);  // one draw per plant sample
    if (i % per_sample == 0) {
      const long k = i / per_sample;
      y(k, 0) = x[s.tau_hat()] + cfg.noise_std * draw;
      states.row(k) = x.transpose();
      joints.row(k) = x.segment(s.q(), s.dof).transpose();
    }
    if (i == steps) break;
    const long j = i / per_input;
    const VectorXd uk = j < u.rows() ? VectorXd(u.samples.row(j).transpose()) : zero_u;
    const double t = static_cast<double>(i) * dt;
    auto f = [&](const VectorXd& xs, double ts) { return truth_ode(chain, seg, cfg.a_true, cfg.b_true, xs, uk, extra(ts)); };
    const VectorXd k1 = f(x, t);
    const VectorXd k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt);
    const VectorXd k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt);
    const VectorXd k4 = f(x + dt * k3, t + dt);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite()) throw IntegrationBlowup("run_experiment: truth state became non-finite at t=" + format_sig9(t));
  }

  std::vector<std::string> state_labels;
  for (int i = 0; i < s.dof; ++i) state_labels.push_back("q" + std::to_string(i));
  for (int i = 0; i < s.dof; ++i) state_labels.push_back("qd" + std::to_string(i));
  for (int i = 0; i < s.segments; ++i) state_labels.push_back("theta" + std::to_string(i + 1));
  for (int i = 0; i < s.segments; ++i) state_labels.push_back("theta_d" + std::to_string(i + 1));
  state_labels.push_back("tau_hat");
  state_labels.push_back("tau_e");
  std::vector<std::string> joint_labels(state_labels.begin(), state_labels.begin() + s.dof);

  res.measured = Trajectory(dt_est, std::move(y), {"y"});
  res.truth_states = Trajectory(dt_est, std::move(states), std::move(state_labels));
  res.joints = Trajectory(dt_est, std::move(joints), std::move(joint_labels));
  return res;
}

}  // namespace beamilc
