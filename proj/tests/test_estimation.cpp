#include "beamilc/estimation.hpp"
#include "beamilc/nlp/derivative_check.hpp"
#include "beamilc/plant.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace beamilc;
using namespace beamilc::testing;

namespace {

constexpr double kPi = std::numbers::pi;

BeamParams prior() { return analytic_init_params(BeamGeometry{0.6, 0.06, 0.001, 6300.0, 1.267}); }

BeamParams shifted(const BeamParams& p) {
  BeamParams q = p;
  q.k *= 1.15;
  q.c *= 1.5;
  q.m *= 0.9;
  q.l *= 1.05;
  q.a *= 0.8;
  q.b *= 1.2;
  q.tau_e0 = 0.03;
  return q;
}

// Rest-to-rest bang-bang on three joints over 0.48 s (10 ms rows).
Trajectory excitation(long rows = 48) {
  Trajectory u = Trajectory::zeros(0.01, rows, 7, "u");
  const double amp[7] = {3.0, -2.0, 0.0, 2.5, 0.0, 1.5, 0.0};
  for (long k = 1; k < rows - 1; ++k) {
    const double sign = k < rows / 2 ? 1.0 : -1.0;
    for (int j = 0; j < 7; ++j) u.samples(k, j) = sign * amp[j];
  }
  return u;
}

Trajectory model_data(const KinematicChain& chain, const VectorXd& q0, const Trajectory& u, const BeamParams& p,
                      const InitialCondition& ic, const VectorXd& d, long samples, double dt = 0.006) {
  const VectorXd y = predict_output(chain, q0, u, p, ic, d, dt, samples);
  return Trajectory(dt, MatrixXd(y), {"y"});
}

InitialCondition rest_init(const KinematicChain& chain, const VectorXd& q0, const BeamParams& p, double tau_hat_offset) {
  const double th = pendulum_equilibrium(chain, q0, p);
  return {th, -p.k * th + tau_hat_offset, p.tau_e0};
}

EstimationConfig unregularized(const BeamParams& p0) {
  EstimationConfig cfg = EstimationConfig::defaults(p0);
  cfg.v1.setZero();
  cfg.v2.setZero();
  return cfg;
}

}  // namespace

TEST(HoldAverage, ExactOverlapWeights) {
  Trajectory u(0.01, (MatrixXd(3, 1) << 1.0, 2.0, 4.0).finished(), {"u"});
  const MatrixXd a = hold_average(u, 0.006, 6);
  EXPECT_NEAR(a(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(a(1, 0), (0.004 * 1.0 + 0.002 * 2.0) / 0.006, 1e-14);
  EXPECT_NEAR(a(2, 0), 2.0, 1e-14);
  EXPECT_NEAR(a(3, 0), (0.002 * 2.0 + 0.004 * 4.0) / 0.006, 1e-14);
  EXPECT_NEAR(a(4, 0), (0.006 * 4.0) / 0.006, 1e-14);
  EXPECT_NEAR(a(5, 0), 0.0, 1e-14);  // [0.030, 0.036) lies past the input
  // Integral preserved.
  EXPECT_NEAR(a.sum() * 0.006, (1.0 + 2.0 + 4.0) * 0.01, 1e-14);
}

TEST(ParameterEstimation, RecoversNominalParameters) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const BeamParams truth = shifted(p0);
  const Trajectory u = excitation();
  const Trajectory y = model_data(chain, q0, u, truth, rest_init(chain, q0, truth, 0.03), VectorXd(), 240);
  const ParameterEstimate est = estimate_parameters(chain, y, u, p0, q0, unregularized(p0));
  ASSERT_FALSE(est.fallback) << est.message;
  EXPECT_LT(relative_error(est.p.k, truth.k), 1e-4);
  EXPECT_LT(relative_error(est.p.c, truth.c), 1e-4);
  EXPECT_LT(relative_error(est.p.m * est.p.l * est.p.l, truth.m * truth.l * truth.l), 1e-4);
  EXPECT_LT(relative_error(est.p.l, truth.l), 1e-4);
  EXPECT_LT(relative_error(est.p.a, truth.a), 1e-4);
  EXPECT_LT(est.rmse_after, 1e-6);
  EXPECT_LT(est.rmse_after, est.rmse_before);
}

TEST(ParameterEstimation, HeavyChangePenaltyKeepsPreviousEstimate) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const BeamParams truth = shifted(p0);
  const Trajectory u = excitation();
  const Trajectory y = model_data(chain, q0, u, truth, rest_init(chain, q0, truth, 0.03), VectorXd(), 240);
  EstimationConfig cfg = EstimationConfig::defaults(p0);
  cfg.v2 = 1e9 * EstimationConfig::parameter_scale(p0).cwiseAbs2().cwiseInverse();
  const ParameterEstimate est = estimate_parameters(chain, y, u, p0, q0, cfg);
  ASSERT_FALSE(est.fallback) << est.message;
  for (int i = 0; i < 7; ++i) {
    EXPECT_LT(std::abs(est.p[i] - p0[i]) / EstimationConfig::parameter_scale(p0)[i], 1e-6) << BeamParams::kNames[i];
  }
}

TEST(ParameterEstimation, RestDataIsFlaggedAsUnexcited) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const Trajectory u = Trajectory::zeros(0.01, 48, 7, "u");
  const Trajectory y = model_data(chain, q0, u, p0, rest_init(chain, q0, p0, 0.0), VectorXd(), 240);
  const EstimationConfig cfg = EstimationConfig::defaults(p0);
  const ParameterEstimate est = estimate_parameters(chain, y, u, p0, q0, cfg);
  for (int i = 0; i < 7; ++i) {
    EXPECT_GE(est.p[i], cfg.p_lower[i]);
    EXPECT_LE(est.p[i], cfg.p_upper[i]);
  }
  const ParameterEstimate excited =
      estimate_parameters(chain, model_data(chain, q0, excitation(), p0, rest_init(chain, q0, p0, 0.0), VectorXd(), 240),
                          excitation(), p0, q0, cfg);
  EXPECT_GT(est.condition, 1e10);
  EXPECT_GT(est.condition, 1e4 * excited.condition);
}

TEST(ParameterEstimation, GravityFreeSwingOnlyFixesInertia) {
  // Stationary arm with Z_b along gravity: only m l^2 enters the output.
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  BeamParams p = prior();
  BeamParams q = p;
  q.m *= 4.0;
  q.l /= 2.0;
  const Trajectory u = Trajectory::zeros(0.01, 10, 7, "u");
  const InitialCondition ic{0.2, 0.0, 0.0};
  const VectorXd y1 = predict_output(chain, q0, u, p, ic, VectorXd(), 0.006, 200);
  const VectorXd y2 = predict_output(chain, q0, u, q, ic, VectorXd(), 0.006, 200);
  ASSERT_GT(y1.cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT(relative_error(y1, y2), 1e-12);
}

TEST(ParameterEstimation, RejectsGridMismatch) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const Trajectory y = Trajectory::zeros(0.005, 240, 1, "y");
  EXPECT_THROW(estimate_parameters(chain, y, excitation(), p0, q0, EstimationConfig::defaults(p0)), GridMismatch);
  const Trajectory short_y = Trajectory::zeros(0.006, 100, 1, "y");
  EXPECT_THROW(estimate_parameters(chain, short_y, excitation(), p0, q0, EstimationConfig::defaults(p0)),
               InvalidArgument);
}

TEST(ParameterEstimation, ProblemDerivativesMatchFiniteDifferences) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const int intervals = 12;
  const nlp::ShootingSpec spec = setup_shooting_spec(chain, 0.006, intervals, "");
  nlp::NlpProblem prob;
  const nlp::ShootingLayout lay = nlp::transcribe_shooting(prob, spec);
  std::mt19937_64 rng(7);
  const MatrixXd v = setup_inputs(hold_average(excitation(), 0.006, intervals), random_vector(rng, intervals, 0.05));
  const MatrixXd xs = nlp::simulate_shooting(spec, initial_state(chain, q0, {0.05, 0.1, 0.02}), v, p0.to_vector());
  MatrixXd noisy = xs;
  noisy += 0.01 * MatrixXd::Random(xs.rows(), xs.cols());
  nlp::set_shooting_guess(prob, lay, noisy, v, p0.to_vector());
  const nlp::DerivativeReport rep = nlp::check_problem_derivatives(prob, prob.initial(), 1e-6);
  EXPECT_LT(rep.max_error, 1e-5) << rep.where;
}

TEST(DisturbanceEstimation, NoMismatchGivesNearZeroDisturbance) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const Trajectory u = excitation();
  const InitialCondition ic = rest_init(chain, q0, p0, 0.0);
  const Trajectory y = model_data(chain, q0, u, p0, ic, VectorXd(), 240);
  const EstimationConfig cfg = EstimationConfig::defaults(p0);
  const DisturbanceEstimate est = estimate_disturbance(chain, y, u, p0, ic, Trajectory(), q0, cfg);
  ASSERT_FALSE(est.fallback) << est.message;
  EXPECT_LT(est.d.samples.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(est.rmse_after, 1e-8);
}

TEST(DisturbanceEstimation, RecoversInjectedSinusoid) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  PlantConfig plant;
  plant.kind = TruthKind::perturbed_single_pendulum;
  plant.nominal = p0;
  plant.a_true = p0.a;
  plant.b_true = p0.b;
  plant.tau_e0_true = 0.0;
  plant.noise_std = 0.0;
  plant.injected_torque = [](double t) { return 0.1 * std::sin(2.0 * kPi * t); };
  const Trajectory u = excitation();
  const ExperimentResult exp = run_experiment(plant, chain, q0, u, 240, 0.006);
  EstimationConfig cfg = EstimationConfig::defaults(p0);
  cfg.w1 = 1e-8;
  cfg.w2 = 0.0;
  cfg.w3 = 0.0;
  const InitialCondition ic{pendulum_equilibrium(chain, q0, p0), exp.measured.samples(0, 0), 0.0};
  const DisturbanceEstimate est = estimate_disturbance(chain, exp.measured, u, p0, ic, Trajectory(), q0, cfg);
  ASSERT_FALSE(est.fallback) << est.message;
  // The last sample only drives the state after the data window.
  double sq = 0.0;
  for (long k = 0; k < 239; ++k) {
    const double e = est.d.samples(k, 0) - 0.1 * std::sin(2.0 * kPi * 0.006 * static_cast<double>(k));
    sq += e * e;
  }
  EXPECT_LT(std::sqrt(sq / 239.0), 0.05 * 0.1);
}

TEST(DisturbanceEstimation, HeavySmoothingFlattensDisturbance) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const BeamParams truth = shifted(p0);
  const Trajectory u = excitation();
  const Trajectory y = model_data(chain, q0, u, truth, rest_init(chain, q0, truth, 0.0), VectorXd(), 240);
  auto spread = [&](double w3) {
    EstimationConfig cfg = EstimationConfig::defaults(p0);
    cfg.w3 = w3;
    const DisturbanceEstimate est =
        estimate_disturbance(chain, y, u, p0, rest_init(chain, q0, p0, 0.0), Trajectory(), q0, cfg);
    EXPECT_FALSE(est.fallback) << est.message;
    const VectorXd d = est.d.samples.col(0);
    return (d.array() - d.mean()).abs().maxCoeff();
  };
  const double s4 = spread(1e4), s6 = spread(1e6);
  // the smoothing penalty dominates: spread falls like 1/w3
  EXPECT_LT(s6, 0.03 * s4);
  EXPECT_LT(s6, 1e-3 * 0.1);
}

TEST(Learning, OutputFitNeverWorsensAcrossSteps) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  PlantConfig plant = default_plant_config(p0);
  const Trajectory u = excitation();
  const ExperimentResult exp = run_experiment(plant, chain, q0, u, 240, 0.006);
  const EstimationConfig cfg = EstimationConfig::defaults(p0);
  const LearnedModel m = learn(chain, exp.measured, u, p0, Trajectory(), q0, cfg);
  ASSERT_FALSE(m.parameter_step.fallback) << m.parameter_step.message;
  ASSERT_FALSE(m.disturbance_step.fallback) << m.disturbance_step.message;
  EXPECT_LE(m.parameter_step.rmse_after, m.parameter_step.rmse_before + 1e-9);
  EXPECT_LE(m.disturbance_step.rmse_after, m.parameter_step.rmse_after + 1e-9);
  EXPECT_NEAR(m.disturbance_step.rmse_before, m.parameter_step.rmse_after, 1e-12);
}

TEST(Learning, NominalPlantIsPredictedExactly) {
  const KinematicChain chain = panda_chain();
  const VectorXd q0 = panda_start_configuration();
  const BeamParams p0 = prior();
  const Trajectory u = excitation();
  const Trajectory y = model_data(chain, q0, u, p0, rest_init(chain, q0, p0, 0.0), VectorXd(), 240);
  const LearnedModel m = learn(chain, y, u, p0, Trajectory(), q0, EstimationConfig::defaults(p0));
  const VectorXd pred = predict_output(chain, q0, u, m.p, m.init, m.d.samples.col(0), 0.006, 240);
  EXPECT_LT(std::sqrt((pred - y.samples.col(0)).squaredNorm() / 240.0), 1e-6);
}
