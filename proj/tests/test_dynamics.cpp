#include "beamilc/dynamics.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <numbers>
#include <random>

using namespace beamilc;
using namespace beamilc::testing;

namespace {

constexpr double kPi = std::numbers::pi;

BeamParams sample_params() {
  BeamParams p;
  p.k = 2.5;
  p.c = 0.03;
  p.m = 0.09;
  p.l = 0.4;
  p.a = 50.0;
  p.b = 2.0;
  p.tau_e0 = 0.01;
  return p;
}

double d_dt(const std::function<double(double)>& f, double t, double h) {
  return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h);
}

Vector3d d_dt(const std::function<Vector3d(double)>& f, double t, double h) {
  return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h);
}

// Euler-Lagrange residual of the point-mass pendulum carried by {b}, with
// every time derivative taken numerically from forward kinematics alone.
// The residual is affine in the trial angular acceleration.
double lagrange_residual(const KinematicChain& chain, const VectorXd& q, const VectorXd& qd, const VectorXd& qdd,
                         double theta, double theta_d, double theta_dd, const BeamParams& p) {
  const double h = 2e-3;
  auto q_at = [&](double t) -> VectorXd { return q + qd * t + 0.5 * qdd * t * t; };
  auto th_at = [&](double t) { return theta + theta_d * t + 0.5 * theta_dd * t * t; };
  auto r_at = [&](double t) -> Vector3d {
    const FramePose pose = forward_kinematics(chain, q_at(t));
    return pose.position + pose.rotation * Vector3d(p.l * std::cos(th_at(t)), p.l * std::sin(th_at(t)), 0.0);
  };
  auto dr_dth_at = [&](double t) -> Vector3d {
    const FramePose pose = forward_kinematics(chain, q_at(t));
    return pose.rotation * Vector3d(-p.l * std::sin(th_at(t)), p.l * std::cos(th_at(t)), 0.0);
  };
  auto rdot_at = [&](double t) { return d_dt(r_at, t, h); };
  auto momentum_at = [&](double t) { return p.m * rdot_at(t).dot(dr_dth_at(t)); };

  const double dmomentum = d_dt(momentum_at, 0.0, h);
  const Vector3d drdot_dth = d_dt(dr_dth_at, 0.0, h);
  const double dl_dth = p.m * rdot_at(0.0).dot(drdot_dth) + p.m * gravity_vector().dot(dr_dth_at(0.0)) - p.k * theta;
  return dmomentum - dl_dth + p.c * theta_d;
}

double lagrange_accel(const KinematicChain& chain, const VectorXd& q, const VectorXd& qd, const VectorXd& qdd,
                      double theta, double theta_d, const BeamParams& p) {
  const double r0 = lagrange_residual(chain, q, qd, qdd, theta, theta_d, 0.0, p);
  const double r1 = lagrange_residual(chain, q, qd, qdd, theta, theta_d, 1.0, p);
  return -r0 / (r1 - r0);
}

double pendulum_energy(const KinematicChain& chain, const VectorXd& x, const BeamParams& p) {
  const StateLayout s{chain.dof()};
  const double th = x[s.theta()];
  const FramePose pose = forward_kinematics(chain, VectorXd(x.segment(s.q(), s.dof)));
  const Vector3d r = pose.position + pose.rotation * Vector3d(p.l * std::cos(th), p.l * std::sin(th), 0.0);
  const double w = x[s.theta_d()];
  return 0.5 * p.m * p.l * p.l * w * w + 0.5 * p.k * th * th - p.m * gravity_vector().dot(r);
}

}  // namespace

TEST(PendulumAccel, MatchesLagrangianOnPanda) {
  const KinematicChain chain = panda_chain();
  const BeamParams p = sample_params();
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd q = panda_start_configuration() + random_vector(rng, 7, 0.6);
    const VectorXd qd = random_vector(rng, 7, 1.0);
    const VectorXd qdd = random_vector(rng, 7, 4.0);
    const double th = random_vector(rng, 1, 0.8)[0];
    const double thd = random_vector(rng, 1, 3.0)[0];
    const double oracle = lagrange_accel(chain, q, qd, qdd, th, thd, p);
    EXPECT_LT(relative_error(pendulum_accel(chain, q, qd, qdd, th, thd, p), oracle, 1.0), 1e-6)
        << "trial " << trial;
  }
}

TEST(PendulumAccel, MatchesLagrangianInVerticalPlane) {
  const KinematicChain chain = vertical_plane_chain(0.3);
  const BeamParams p = sample_params();
  for (const double th : {-1.0, 0.0, 0.5}) {
    const VectorXd q = VectorXd::Constant(1, 0.2), qd = VectorXd::Constant(1, 1.5), qdd = VectorXd::Constant(1, -3.0);
    EXPECT_LT(relative_error(pendulum_accel(chain, q, qd, qdd, th, 0.7, p),
                             lagrange_accel(chain, q, qd, qdd, th, 0.7, p), 1.0),
              1e-6);
  }
}

TEST(PendulumAccel, FreeOscillatorAtRest) {
  // Z_b vertical: no gravity torque, so theta'' = -(c theta' + k theta)/(m l^2).
  const KinematicChain chain = panda_chain();
  const BeamParams p = sample_params();
  const VectorXd z = VectorXd::Zero(7);
  const double th = 0.1, thd = -0.4;
  EXPECT_NEAR(pendulum_accel(chain, panda_start_configuration(), z, z, th, thd, p),
              -(p.c * thd + p.k * th) / (p.m * p.l * p.l), 1e-12);
}

TEST(Measurement, ReactionTorque) {
  const BeamParams p = sample_params();
  EXPECT_DOUBLE_EQ(reaction_torque(0.2, -1.0, p, 0.05), -p.c * -1.0 - p.k * 0.2 + 0.05);
}

TEST(Measurement, StepResponseMatchesClosedForm) {
  // Stationary lever with Z_b vertical: theta stays 0 and the filter sees
  // tau = d; the estimator error decays independently.
  const KinematicChain chain = lever_chain(0.5);
  BeamParams p = sample_params();
  p.a = 40.0;
  p.b = 3.0;
  const double d = 0.3, e0 = 0.02, dt = 1e-3;
  const int steps = 1000;
  const VectorXd x0 = rest_state(chain, VectorXd::Zero(1), 0.0, 0.0, e0);
  const MatrixXd xs = rollout(chain, x0, MatrixXd::Zero(steps, 1), p, VectorXd::Constant(steps, d), dt);
  const StateLayout s{1};
  for (int k = 0; k <= steps; k += 50) {
    const double t = k * dt;
    const double expected = d * (1 - std::exp(-p.a * t)) + p.a * e0 / (p.a - p.b) * (std::exp(-p.b * t) - std::exp(-p.a * t));
    EXPECT_NEAR(xs(k, s.tau_hat()), expected, 1e-8);  // RK4 truncation at a*dt = 0.04
    EXPECT_NEAR(xs(k, s.tau_e()), e0 * std::exp(-p.b * t), 1e-11);
    EXPECT_EQ(xs(k, s.theta()), 0.0);
  }
}

TEST(Integrator, FourthOrderOnLinearDecay) {
  auto f = [](const VectorXd& x) -> VectorXd { return -x; };
  double prev_err = 0.0;
  for (const int steps : {10, 20, 40, 80}) {
    VectorXd x = VectorXd::Ones(1);
    for (int i = 0; i < steps; ++i) x = rk4<double>(f, x, 1.0 / steps);
    const double err = std::abs(x[0] - std::exp(-1.0));
    if (prev_err > 0) {
      EXPECT_NEAR(std::log2(prev_err / err), 4.0, 0.1);
    }
    prev_err = err;
  }
}

TEST(Integrator, ConvergenceOrderOnSetupModel) {
  const KinematicChain chain = panda_chain();
  const BeamParams p = sample_params();
  const StateLayout s{7};
  VectorXd x0 = rest_state(chain, panda_start_configuration(), 0.05, 0.0, p.tau_e0);
  VectorXd u(7);
  u << 1.0, -0.5, 0.8, 0.3, -1.2, 0.6, 0.9;
  auto run = [&](int steps) {
    VectorXd x = x0;
    for (int i = 0; i < steps; ++i) x = rk4_step(chain, x, u, p, 0.01, 0.2 / steps);
    return x;
  };
  const VectorXd ref = run(3200);
  const double e1 = (run(50) - ref).norm(), e2 = (run(100) - ref).norm();
  EXPECT_GT(std::log2(e1 / e2), 3.9);
  EXPECT_EQ(s.size(), 18);
}

TEST(Integrator, NonFiniteStateThrows) {
  auto f = [](const VectorXd& x) -> VectorXd { return x.array().square() * 1e300; };
  EXPECT_THROW(rk4<double>(f, VectorXd::Constant(1, 1e10), 1.0), IntegrationBlowup);
}

TEST(Integrator, EnergyConservedWithoutDamping) {
  const KinematicChain chain = vertical_plane_chain(0.3);
  BeamParams p = sample_params();
  p.c = 0.0;
  const VectorXd x0 = rest_state(chain, VectorXd::Zero(1), 1.2, 0.0, 0.0);
  const int steps = 10000;
  const MatrixXd xs = rollout(chain, x0, MatrixXd::Zero(steps, 1), p, VectorXd(), 1e-3);
  const double e0 = pendulum_energy(chain, x0, p);
  double drift = 0.0;
  for (int k = 0; k <= steps; k += 100) {
    drift = std::max(drift, std::abs(pendulum_energy(chain, VectorXd(xs.row(k).transpose()), p) - e0));
  }
  EXPECT_LT(drift / std::abs(e0), 1e-6);
}

TEST(Integrator, SmallOscillationFrequency) {
  const KinematicChain chain = panda_chain();
  BeamParams p = sample_params();
  p.c = 0.0;
  const double th0 = 1e-3;
  const int steps = 1000;
  const double dt = 1e-3;
  const MatrixXd xs = rollout(chain, rest_state(chain, panda_start_configuration(), th0, 0.0, 0.0),
                              MatrixXd::Zero(steps, 7), p, VectorXd(), dt);
  const double w = std::sqrt(p.k / (p.m * p.l * p.l));
  EXPECT_NEAR(xs(steps, 7), th0 * std::cos(w * steps * dt), 1e-9);
}

TEST(Integrator, RolloutDimensionChecks) {
  const KinematicChain chain = panda_chain();
  const VectorXd x0 = rest_state(chain, panda_start_configuration(), 0.0, 0.0, 0.0);
  EXPECT_THROW(rollout(chain, x0, MatrixXd::Zero(5, 6), sample_params(), VectorXd(), 0.01), DimensionError);
  EXPECT_THROW(rollout(chain, x0, MatrixXd::Zero(5, 7), sample_params(), VectorXd::Zero(4), 0.01), DimensionError);
  EXPECT_THROW(rollout(chain, VectorXd::Zero(5), MatrixXd::Zero(5, 7), sample_params(), VectorXd(), 0.01),
               DimensionError);
  EXPECT_THROW(rk4_step(chain, x0, VectorXd::Zero(7), sample_params(), 0.0, 0.0), InvalidArgument);
}

TEST(Derivatives, StepSensitivitiesMatchFiniteDifferences) {
  const KinematicChain chain = panda_chain();
  const BeamParams p = sample_params();
  const StateLayout s{7};
  std::mt19937_64 rng(43);
  VectorXd x = rest_state(chain, panda_start_configuration(), 0.05, 0.02, p.tau_e0);
  x.segment(s.qd(), 7) = random_vector(rng, 7, 0.5);
  x[s.theta_d()] = 0.3;
  const VectorXd u = random_vector(rng, 7, 2.0);
  const double d = 0.01, dt = 0.01;

  // Variables: x (18), u (7), p (7), d (1).
  const int nv = s.size() + 7 + 7 + 1;
  VectorXd w(nv);
  w << x, u, p.to_vector(), d;
  auto step = [&](const VectorXd& v) {
    return rk4_step(chain, VectorXd(v.head(18)), VectorXd(v.segment(18, 7)), BeamParams::from_vector(v.segment(25, 7)),
                    v[32], dt);
  };

  VecXT<Dual> wa(nv);
  for (int i = 0; i < nv; ++i) wa[i] = Dual::variable(w[i], nv, i);
  const VecXT<Dual> next = rk4_step<Dual>(chain, VecXT<Dual>(wa.head(18)), VecXT<Dual>(wa.segment(18, 7)),
                                          BeamParamsT<Dual>::from_vector(wa.segment(25, 7)), wa[32], dt);
  const VectorXd base = step(w);
  for (int j = 0; j < nv; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(w[j]));
    VectorXd wp = w, wm = w;
    wp[j] += h;
    wm[j] -= h;
    const VectorXd fd = (step(wp) - step(wm)) / (2 * h);
    VectorXd ad(18);
    for (int i = 0; i < 18; ++i) {
      ad[i] = next[i].derivative(j);
      EXPECT_DOUBLE_EQ(next[i].value(), base[i]);
    }
    EXPECT_LT((ad - fd).norm() / std::max(1.0, fd.norm()), 1e-5) << "variable " << j;
  }
}

TEST(Equilibrium, ZeroWhenGravityAlongPendulumAxis) {
  const BeamParams p = sample_params();
  EXPECT_EQ(pendulum_equilibrium(panda_chain(), panda_start_configuration(), p), 0.0);
}

TEST(Equilibrium, MatchesPotentialMinimumGridSearch) {
  const KinematicChain chain = vertical_plane_chain(0.5);
  for (const double k : {0.2, 1.0, 5.0}) {
    BeamParams p = sample_params();
    p.k = k;
    p.m = 1.0;
    p.l = 0.4;
    for (const double q : {0.0, 0.7, -2.0}) {
      const VectorXd qv = VectorXd::Constant(1, q);
      const FramePose pose = forward_kinematics(chain, qv);
      auto potential = [&](double th) {
        const Vector3d r = pose.position + pose.rotation * Vector3d(p.l * std::cos(th), p.l * std::sin(th), 0.0);
        return 0.5 * p.k * th * th - p.m * gravity_vector().dot(r);
      };
      const int n = 1000000;
      const double hgrid = 2 * kPi / n;
      double best = std::numeric_limits<double>::quiet_NaN();
      for (int i = 1; i < n - 1; ++i) {
        const double th = -kPi + i * hgrid;
        const double v0 = potential(th - hgrid), v1 = potential(th), v2 = potential(th + hgrid);
        if (v1 <= v0 && v1 < v2) {
          const double refined = th + 0.5 * hgrid * (v0 - v2) / (v0 - 2 * v1 + v2);
          if (std::isnan(best) || std::abs(refined) < std::abs(best)) best = refined;
        }
      }
      const double th_eq = pendulum_equilibrium(chain, qv, p);
      EXPECT_NEAR(th_eq, best, 1e-8) << "k=" << k << " q=" << q;
      EXPECT_LT(std::abs(pendulum_static_residual(body_gravity(chain, qv), th_eq, p)), 1e-12);
    }
  }
}

TEST(Equilibrium, KnownHangingAngle) {
  // Unit mass on a 0.4 m arm with unit stiffness, gravity along -y_b:
  // k theta = -m g l cos(theta).
  BeamParams p = sample_params();
  p.k = 1.0;
  p.m = 1.0;
  p.l = 0.4;
  const double th = pendulum_equilibrium(vertical_plane_chain(), VectorXd::Zero(1), p);
  EXPECT_NEAR(th + kGravity * 0.4 * std::cos(th), 0.0, 1e-12);
  EXPECT_NEAR(th, -1.2473, 1e-4);
}

TEST(Params, ValidationAndVectorRoundTrip) {
  const BeamParams p = sample_params();
  const BeamParams back = BeamParams::from_vector(p.to_vector());
  for (int i = 0; i < BeamParams::kSize; ++i) EXPECT_EQ(back[i], p[i]);
  EXPECT_THROW(BeamParams::from_vector(VectorXd::Zero(6)), DimensionError);
  BeamParams bad = p;
  bad.l = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = p;
  bad.c = -1e-3;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  EXPECT_THROW(p[7], std::out_of_range);
}

TEST(AnalyticInit, SteelStripValues) {
  const BeamGeometry g;
  EXPECT_NEAR(g.mass(), 0.2268, 1e-12);
  // Independent evaluation: w1 = (beta1 L)^2 sqrt(EI / (rho A L^4)).
  const double rho_a = 6300.0 * 0.06 * 0.001;
  const double w1 = 1.8751 * 1.8751 * std::sqrt(1.267 / (rho_a * 0.6 * 0.6 * 0.6 * 0.6));
  EXPECT_NEAR(cantilever_first_frequency(g), w1, 1e-12);
  EXPECT_NEAR(cantilever_first_frequency(g), 17.9, 0.1);

  const BeamParams p = analytic_init_params(g);
  EXPECT_NEAR(p.l, 0.4, 1e-15);
  EXPECT_NEAR(p.m, 0.08505, 1e-12);
  EXPECT_NEAR(std::sqrt(p.k / (p.m * p.l * p.l)), w1, 1e-10);
  EXPECT_NEAR(p.c / (2 * std::sqrt(p.k * p.m * p.l * p.l)), 0.01, 1e-12);
  EXPECT_EQ(p.a, 50.0);
  EXPECT_EQ(p.b, 2.0);
  EXPECT_EQ(p.tau_e0, 0.0);
  BeamGeometry bad;
  bad.density = 0.0;
  EXPECT_THROW(analytic_init_params(bad), InvalidArgument);
}

TEST(Integrator, ScalarLinearStep) {
  auto f = [](const VectorXd& x) -> VectorXd { return -x; };
  const double one = rk4<double>(f, VectorXd::Ones(1), 0.1)[0];
  EXPECT_NEAR(one, 0.9048375, 1e-7);
  EXPECT_NEAR(one, std::exp(-0.1), 1e-7);
}

TEST(Integrator, DampingNeverAddsEnergy) {
  const KinematicChain chain = vertical_plane_chain(0.3);
  const BeamParams p = sample_params();
  const MatrixXd xs = rollout(chain, rest_state(chain, VectorXd::Zero(1), 1.0, 0.0, 0.0), MatrixXd::Zero(3000, 1), p,
                              VectorXd(), 1e-3);
  double prev = pendulum_energy(chain, VectorXd(xs.row(0).transpose()), p);
  for (int k = 1; k < xs.rows(); ++k) {
    const double e = pendulum_energy(chain, VectorXd(xs.row(k).transpose()), p);
    EXPECT_LE(e, prev + 1e-12);
    prev = e;
  }
}

TEST(SetupOde, RestFixedPointAndConstantOutput) {
  // Estimation grid at rest: equilibrium angle, tau_hat = -k theta_eq, no bias.
  const KinematicChain chain = panda_chain();
  const BeamParams p = sample_params();
  const VectorXd q0 = panda_start_configuration();
  const double th = pendulum_equilibrium(chain, q0, p);
  const VectorXd x0 = rest_state(chain, q0, th, -p.k * th, 0.0);
  EXPECT_LT(setup_ode(chain, x0, VectorXd::Zero(7), p, 0.0).norm(), 1e-14);
  EXPECT_NEAR(pendulum_accel(chain, q0, VectorXd::Zero(7), VectorXd::Zero(7), th, 0.0, p), 0.0, 1e-12);
  const MatrixXd xs = rollout(chain, x0, MatrixXd::Zero(240, 7), p, VectorXd(), 6e-3);
  const StateLayout s{7};
  for (int k = 0; k <= 240; ++k) {
    EXPECT_NEAR(output_map<double>(chain, VectorXd(xs.row(k).transpose())), x0[s.tau_hat()], 1e-15);
  }
}

TEST(SetupOde, IntegratorStructureAndAffineInputs) {
  const KinematicChain chain = panda_chain();
  const BeamParams p = sample_params();
  const StateLayout s{7};
  std::mt19937_64 rng(47);
  const VectorXd x = random_vector(rng, 18, 1.0);
  const VectorXd u1 = random_vector(rng, 7, 2.0), u2 = random_vector(rng, 7, 2.0);
  const VectorXd f1 = setup_ode(chain, x, u1, p, 0.1);
  EXPECT_EQ(VectorXd(f1.segment(s.q(), 7)), VectorXd(x.segment(s.qd(), 7)));
  EXPECT_EQ(VectorXd(f1.segment(s.qd(), 7)), u1);
  EXPECT_EQ(f1[s.theta()], x[s.theta_d()]);
  // Affine in u and in d: f(mid) = (f(a) + f(b)) / 2.
  const VectorXd fu = setup_ode(chain, x, 0.5 * (u1 + u2), p, 0.1);
  EXPECT_LT((fu - 0.5 * (f1 + setup_ode(chain, x, u2, p, 0.1))).norm(), 1e-12);
  const VectorXd fd = setup_ode(chain, x, u1, p, 0.2);
  EXPECT_LT((fd - 0.5 * (setup_ode(chain, x, u1, p, 0.1) + setup_ode(chain, x, u1, p, 0.3))).norm(), 1e-12);
}

TEST(Measurement, FastFilterTracksTorque) {
  // a = 1000 against a 1.3 Hz torque: the filter lag is about a percent of
  // the amplitude at most.
  const KinematicChain chain = lever_chain(0.5);
  BeamParams p = sample_params();
  p.a = 1000.0;
  const double dt = 1e-4;
  const int steps = 20000;
  VectorXd d(steps);
  for (int k = 0; k < steps; ++k) d[k] = 0.5 * std::sin(2 * kPi * 1.3 * k * dt);
  const VectorXd x0 = rest_state(chain, VectorXd::Zero(1), 0.0, 0.0, p.tau_e0);
  const MatrixXd xs = rollout(chain, x0, MatrixXd::Zero(steps, 1), p, d, dt);
  const StateLayout s{1};
  double worst = 0.0;
  for (int k = 1000; k < steps; ++k) {
    worst = std::max(worst, std::abs(xs(k, s.tau_hat()) - (d[k - 1] + xs(k, s.tau_e()))));
  }
  EXPECT_LT(worst, 0.01 * 0.5);
}

TEST(Equilibrium, StiffSpringStaysNearZero) {
  BeamParams p = sample_params();
  p.k = 1e6;
  p.m = 1.0;
  p.l = 0.4;
  EXPECT_LT(std::abs(pendulum_equilibrium(vertical_plane_chain(), VectorXd::Zero(1), p)), 1e-5);
}

TEST(AnalyticInit, StiffnessScaling) {
  BeamGeometry g;
  const BeamParams base = analytic_init_params(g);
  g.bending_stiffness *= 4.0;
  const BeamParams stiff = analytic_init_params(g);
  EXPECT_NEAR(cantilever_first_frequency(g), 2.0 * cantilever_first_frequency(BeamGeometry{}), 1e-12);
  EXPECT_NEAR(stiff.k, 4.0 * base.k, 1e-12 * stiff.k);
  EXPECT_EQ(stiff.m, base.m);
  EXPECT_EQ(stiff.l, base.l);
}
