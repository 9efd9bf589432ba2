#include "beamilc/plant.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <complex>
#include <numbers>

using namespace beamilc;
using namespace beamilc::testing;

namespace {

constexpr double kPi = std::numbers::pi;

BeamParams steel_strip_prior() {
  return analytic_init_params(BeamGeometry{0.6, 0.06, 0.001, 6300.0, 1.267});
}

PlantConfig quiet_single(const BeamParams& p) {
  PlantConfig cfg;
  cfg.kind = TruthKind::perturbed_single_pendulum;
  cfg.nominal = p;
  cfg.a_true = p.a;
  cfg.b_true = p.b;
  cfg.tau_e0_true = 0.0;
  cfg.noise_std = 0.0;
  return cfg;
}

Trajectory zero_input(int dof, long rows) { return Trajectory::zeros(0.01, rows, dof, "u"); }

// Integrates the truth chain (angles only) on a stationary or moving chain
// with RK4 at step dt; u(t) gives joint accelerations.
template <class U>
VectorXd integrate_truth(const KinematicChain& chain, const std::vector<SegmentParams>& seg, VectorXd x, double dt,
                         long steps, U u_of_t) {
  for (long i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    const VectorXd u = u_of_t(t);
    auto f = [&](const VectorXd& xs) { return truth_ode(chain, seg, 10.0, 1.0, xs, u, 0.0); };
    const VectorXd k1 = f(x);
    const VectorXd k2 = f(x + 0.5 * dt * k1);
    const VectorXd k3 = f(x + 0.5 * dt * k2);
    const VectorXd k4 = f(x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

double chain_energy(const Vector3d& body_g, const VectorXd& th, const VectorXd& thd,
                    const std::vector<SegmentParams>& seg) {
  // Written out independently of segment_geometry.
  double e = 0.0, phi = 0.0, phid = 0.0;
  Vector3d pos = Vector3d::Zero(), vel = Vector3d::Zero();
  for (std::size_t j = 0; j < seg.size(); ++j) {
    phi += th[static_cast<long>(j)];
    phid += thd[static_cast<long>(j)];
    pos += seg[j].length * Vector3d(std::cos(phi), std::sin(phi), 0.0);
    vel += seg[j].length * phid * Vector3d(-std::sin(phi), std::cos(phi), 0.0);
    e += 0.5 * seg[j].mass * vel.squaredNorm() - seg[j].mass * body_g.dot(pos);
    e += 0.5 * seg[j].stiffness * th[static_cast<long>(j)] * th[static_cast<long>(j)];
  }
  return e;
}

}  // namespace

TEST(Plant, RestExperimentGivesStaticReactionTorque) {
  const KinematicChain chain = vertical_plane_chain();
  const VectorXd q0 = VectorXd::Zero(1);
  const BeamParams p = steel_strip_prior();
  const PlantConfig cfg = quiet_single(p);
  const double th_eq = pendulum_equilibrium(chain, q0, p);
  ASSERT_GT(std::abs(th_eq), 1e-3);
  const ExperimentResult r = run_experiment(cfg, chain, q0, zero_input(1, 10), 240, 0.006);
  ASSERT_EQ(r.measured.rows(), 240);
  for (long k = 0; k < 240; ++k) EXPECT_NEAR(r.measured.samples(k, 0), -p.k * th_eq, 1e-12);
}

TEST(Plant, TwoSegmentRestIsStationary) {
  const KinematicChain chain = vertical_plane_chain();
  const VectorXd q0 = VectorXd::Zero(1);
  PlantConfig cfg = default_plant_config(steel_strip_prior());
  cfg.noise_std = 0.0;
  cfg.tau_e0_true = 0.0;
  const ExperimentResult r = run_experiment(cfg, chain, q0, zero_input(1, 10), 100, 0.006);
  const double y0 = r.measured.samples(0, 0);
  EXPECT_GT(std::abs(y0), 1e-3);
  for (long k = 0; k < 100; ++k) EXPECT_NEAR(r.measured.samples(k, 0), y0, 1e-12);
}

TEST(Plant, EstimatorBiasDecaysThroughFilter) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  PlantConfig cfg = quiet_single(steel_strip_prior());
  cfg.tau_e0_true = 1.0;
  cfg.b_true = 2.0;
  cfg.a_true = 40.0;
  const ExperimentResult r = run_experiment(cfg, chain, q0, zero_input(7, 1), 500, 0.006);
  const double a = cfg.a_true, b = cfg.b_true;
  for (long k = 0; k < 500; ++k) {
    const double t = 0.006 * static_cast<double>(k);
    // e' = -a e + a e0 exp(-b t), e(0) = e0
    const double expected = (a * std::exp(-b * t) - b * std::exp(-a * t)) / (a - b);
    EXPECT_NEAR(r.measured.samples(k, 0), expected, 1e-8) << "k=" << k;
  }
}

TEST(Plant, NominalTruthMatchesSetupModelRollout) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p = steel_strip_prior();
  const PlantConfig cfg = quiet_single(p);
  const long rows = 40;
  Trajectory u = zero_input(7, rows);
  for (long k = 1; k < rows - 1; ++k) {
    for (int j = 0; j < 7; ++j) u.samples(k, j) = 0.8 * std::sin(0.3 * k + j) * (j % 2 ? 1.0 : -0.5);
  }
  const long samples = 150;
  const ExperimentResult r = run_experiment(cfg, chain, q0, u, samples, 0.006);

  const double dt = 1e-3;
  const long steps = (samples - 1) * 6;
  MatrixXd fine = MatrixXd::Zero(steps, 7);
  for (long i = 0; i < steps; ++i) {
    const long j = i / 10;
    if (j < rows) fine.row(i) = u.samples.row(j);
  }
  const double th = pendulum_equilibrium(chain, q0, p);
  const VectorXd x0 = rest_state(chain, q0, th, -p.k * th, 0.0);
  const MatrixXd states = rollout(chain, x0, fine, p, VectorXd(), dt);
  const StateLayout s{7};
  VectorXd y_model(samples), y_plant = r.measured.samples.col(0);
  for (long k = 0; k < samples; ++k) y_model[k] = states(6 * k, s.tau_hat());
  ASSERT_GT(y_model.cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT(relative_error(y_plant, y_model), 1e-6);
}

TEST(Plant, DeterministicGivenSeed) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  PlantConfig cfg = default_plant_config(steel_strip_prior());
  cfg.seed = 42;
  Trajectory u = zero_input(7, 20);
  u.samples(3, 0) = 2.0;
  u.samples(8, 0) = -2.0;
  const ExperimentResult r1 = run_experiment(cfg, chain, q0, u, 120, 0.006);
  const ExperimentResult r2 = run_experiment(cfg, chain, q0, u, 120, 0.006);
  for (long k = 0; k < 120; ++k) EXPECT_EQ(r1.measured.samples(k, 0), r2.measured.samples(k, 0));
  cfg.seed = 43;
  const ExperimentResult r3 = run_experiment(cfg, chain, q0, u, 120, 0.006);
  EXPECT_NE(r1.measured.samples(5, 0), r3.measured.samples(5, 0));
}

TEST(Plant, NoiseIndependentOfHorizon) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  PlantConfig cfg = default_plant_config(steel_strip_prior());
  const ExperimentResult short_run = run_experiment(cfg, chain, q0, zero_input(7, 5), 80, 0.006);
  const ExperimentResult long_run = run_experiment(cfg, chain, q0, zero_input(7, 5), 200, 0.006);
  for (long k = 0; k < 80; ++k) EXPECT_EQ(short_run.measured.samples(k, 0), long_run.measured.samples(k, 0));
}

TEST(Plant, NoiseHasConfiguredSpread) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  PlantConfig cfg = quiet_single(steel_strip_prior());
  cfg.noise_std = 0.005;
  const long n = 3000;
  const ExperimentResult r = run_experiment(cfg, chain, q0, zero_input(7, 1), n, 0.006);
  const VectorXd y = r.measured.samples.col(0);
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / static_cast<double>(n - 1));
  EXPECT_NEAR(mean, 0.0, 4.0 * 0.005 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(sd, 0.005, 0.1 * 0.005);
}

TEST(Plant, GridMismatchIsRejected) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const PlantConfig cfg = default_plant_config(steel_strip_prior());
  EXPECT_THROW(run_experiment(cfg, chain, q0, zero_input(7, 5), 10, 0.0065), GridMismatch);
  Trajectory u(0.0015, MatrixXd::Zero(5, 7), zero_input(7, 1).labels);
  EXPECT_THROW(run_experiment(cfg, chain, q0, u, 10, 0.006), GridMismatch);
  EXPECT_THROW(run_experiment(cfg, chain, q0, zero_input(6, 5), 10, 0.006), DimensionError);
}

TEST(Plant, InvalidConfigurationIsRejected) {
  PlantConfig cfg = default_plant_config(steel_strip_prior());
  cfg.noise_std = -1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = default_plant_config(steel_strip_prior());
  cfg.segments[1].mass = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = default_plant_config(steel_strip_prior());
  cfg.segments.pop_back();
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(TwoSegment, LinearizedModesMatchMassStiffnessEigenvalues) {
  const BeamParams prior = steel_strip_prior();
  const std::vector<SegmentParams> seg = default_two_segment(prior);
  // Independent linearization: M and K from the straight chain.
  const double m1 = seg[0].mass, m2 = seg[1].mass, l1 = seg[0].length, l2 = seg[1].length;
  Eigen::Matrix2d mass, stiff;
  mass << m1 * l1 * l1 + m2 * (l1 + l2) * (l1 + l2), m2 * l2 * (l1 + l2), m2 * l2 * (l1 + l2), m2 * l2 * l2;
  stiff << seg[0].stiffness, 0.0, 0.0, seg[1].stiffness;
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix2d> ges(stiff, mass);
  const Eigen::Vector2d w_oracle = ges.eigenvalues().cwiseSqrt();

  // Numerical linearization of the nonlinear chain on a stationary lever
  // (gravity out of plane).
  const KinematicChain chain = lever_chain(0.3);
  BodyExcitation<double> ex{body_gravity(chain, VectorXd::Zero(1)), Vector3d::Zero(), Vector3d::Zero()};
  std::vector<SegmentParams> undamped = seg;
  for (auto& s : undamped) s.damping = 0.0;
  Eigen::Matrix2d jac;
  for (int c = 0; c < 2; ++c) {
    VectorXd tp = VectorXd::Zero(2), tm = VectorXd::Zero(2);
    tp[c] = 1e-6;
    tm[c] = -1e-6;
    jac.col(c) = (segment_chain_accel(ex, tp, VectorXd::Zero(2), undamped) -
                  segment_chain_accel(ex, tm, VectorXd::Zero(2), undamped)) / 2e-6;
  }
  Eigen::EigenSolver<Eigen::Matrix2d> es(-jac);
  std::vector<double> w_model{std::sqrt(es.eigenvalues()[0].real()), std::sqrt(es.eigenvalues()[1].real())};
  std::sort(w_model.begin(), w_model.end());
  EXPECT_LT(relative_error(w_model[0], w_oracle[0]), 1e-2);
  EXPECT_LT(relative_error(w_model[1], w_oracle[1]), 1e-2);

  const double w1 = std::sqrt(prior.k / (prior.m * prior.l * prior.l));
  EXPECT_NEAR(w_oracle[0] / w1, 0.9, 1e-9);
  EXPECT_NEAR(w_oracle[1] / w1, 3.0, 1e-9);
  // segment 1 alone (segment 2 locked) stays near the prior frequency
  EXPECT_NEAR(std::sqrt(seg[0].stiffness / mass(0, 0)) / w1, 1.0, 0.05);
}

TEST(TwoSegment, EnergyConservedWithoutDamping) {
  const KinematicChain chain = vertical_plane_chain();
  std::vector<SegmentParams> seg = default_two_segment(steel_strip_prior());
  for (auto& s : seg) s.damping = 0.0;
  const TruthLayout s{1, 2};
  VectorXd x = VectorXd::Zero(s.size());
  const VectorXd th_eq = segment_equilibrium(chain, VectorXd::Zero(1), seg);
  x.segment(s.theta(), 2) = th_eq + Eigen::Vector2d(0.2, -0.15);
  const Vector3d g_b = body_gravity(chain, VectorXd::Zero(1));
  auto energy = [&](const VectorXd& xs) {
    return chain_energy(g_b, xs.segment(s.theta(), 2), xs.segment(s.theta_d(), 2), seg);
  };
  const double e0 = energy(x);
  const double e_rest = chain_energy(g_b, th_eq, VectorXd::Zero(2), seg);
  const VectorXd x1 = integrate_truth(chain, seg, x, 1e-3, 10000, [](double) { return VectorXd::Zero(1); });
  // Drift relative to the oscillation energy above the rest level.
  EXPECT_LT(std::abs(energy(x1) - e0) / (e0 - e_rest), 1e-3);
}

TEST(TwoSegment, StiffCouplingApproachesSinglePendulum) {
  // Z_b along the lever: the swing plane holds gravity and the tangential
  // acceleration.
  const KinematicChain chain = lever_chain(0.5, rot_y(kPi / 2));
  const BeamParams prior = steel_strip_prior();
  std::vector<SegmentParams> seg = default_two_segment(prior);
  seg[1].stiffness = 1e6;
  seg[1].damping = 0.0;
  // Rigid two-mass rod equals a point-mass pendulum with the same inertia
  // and static moment.
  const double l12 = seg[0].length + seg[1].length;
  const double inertia = seg[0].mass * seg[0].length * seg[0].length + seg[1].mass * l12 * l12;
  const double moment = seg[0].mass * seg[0].length + seg[1].mass * l12;
  BeamParams p = prior;
  p.m = moment * moment / inertia;
  p.l = inertia / moment;
  p.k = seg[0].stiffness;
  p.c = seg[0].damping;

  auto u_of_t = [](double t) { return VectorXd::Constant(1, t < 0.2 ? 6.0 : (t < 0.4 ? -6.0 : 0.0)); };
  const double dt = 2e-5;
  const long steps = 40000;  // 0.8 s
  const TruthLayout ts{1, 2};
  VectorXd xt = VectorXd::Zero(ts.size());
  xt.segment(ts.theta(), 2) = segment_equilibrium(chain, VectorXd::Zero(1), seg);
  const double th_eq = pendulum_equilibrium(chain, VectorXd::Zero(1), p);
  VectorXd xs = rest_state(chain, VectorXd::Zero(1), th_eq, 0.0, 0.0);
  ASSERT_NEAR(xt[ts.theta()], th_eq, 1e-4);

  const StateLayout ss{1};
  double max_diff = 0.0, max_swing = 0.0;
  for (long i = 0; i < steps; i += 500) {
    xt = integrate_truth(chain, seg, xt, dt, 500, [&](double t) { return u_of_t(t + i * dt); });
    for (long k = 0; k < 500; ++k) xs = rk4_step(chain, xs, u_of_t((i + k) * dt), p, 0.0, dt);
    max_diff = std::max(max_diff, std::abs(xt[ts.theta()] + xt[ts.theta() + 1] - xs[ss.theta()]));
    max_swing = std::max(max_swing, std::abs(xs[ss.theta()] - th_eq));
  }
  ASSERT_GT(max_swing, 1e-2);
  EXPECT_LT(max_diff / max_swing, 1e-3);
}

TEST(TwoSegment, ResidualOutputShowsTwoSpectralPeaks) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams prior = steel_strip_prior();
  PlantConfig cfg = default_plant_config(prior);
  // Short base-joint bang-bang, 30 ms each way, so the pulse spectrum has
  // no zero near either mode.
  Trajectory u = zero_input(7, 20);
  for (long k = 0; k < 3; ++k) u.samples(k, 0) = 20.0;
  for (long k = 3; k < 6; ++k) u.samples(k, 0) = -20.0;
  const long n = 1200;
  const ExperimentResult r = run_experiment(cfg, chain, q0, u, n, 0.006);
  const long start = 10;  // motion ends at 0.06 s
  const VectorXd y = r.measured.samples.col(0).segment(start, n - start);
  const VectorXd yc = y.array() - y.mean();

  const double w1 = std::sqrt(prior.k / (prior.m * prior.l * prior.l));
  auto amplitude = [&](double w) {
    std::complex<double> acc = 0.0;
    for (long k = 0; k < yc.size(); ++k) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * k / (yc.size() - 1));
      acc += hann * yc[k] * std::polar(1.0, -w * 0.006 * k);
    }
    return std::abs(acc);
  };
  auto peak_near = [&](double w_center, double& w_peak) {
    double best = 0.0;
    for (double w = 0.8 * w_center; w <= 1.2 * w_center; w += 0.002 * w_center) {
      const double a = amplitude(w);
      if (a > best) {
        best = a;
        w_peak = w;
      }
    }
    return best;
  };
  double w_a = 0.0, w_b = 0.0;
  const double a1 = peak_near(0.9 * w1, w_a);
  const double a2 = peak_near(3.0 * w1, w_b);
  EXPECT_NEAR(w_a / w1, 0.9, 0.05);
  EXPECT_NEAR(w_b / w1, 3.0, 0.15);
  // Both peaks stand out against the broadband floor between them.
  const double floor = std::max(amplitude(1.9 * w1), amplitude(5.0 * w1));
  EXPECT_GT(a1, 10.0 * floor);
  EXPECT_GT(a2, 3.0 * floor);
}
