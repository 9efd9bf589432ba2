#pragma once

#include "beamilc/dynamics.hpp"
#include "beamilc/kinematics.hpp"

#include <random>

namespace beamilc::testing {

inline JointLimits wide_limits(int n) {
  JointLimits lim;
  lim.q_min = VectorXd::Constant(n, -10.0);
  lim.q_max = VectorXd::Constant(n, 10.0);
  lim.qd_max = VectorXd::Constant(n, 10.0);
  lim.qdd_max = VectorXd::Constant(n, 50.0);
  lim.jerk_max = VectorXd::Constant(n, 1e4);
  return lim;
}

/// Two revolute joints about z with 1 m links in the base xy-plane.
inline KinematicChain planar_2r_chain() {
  Joint j1;
  Joint j2;
  j2.translation = Vector3d(1.0, 0.0, 0.0);
  return KinematicChain({j1, j2}, Vector3d(1.0, 0.0, 0.0), Matrix3d::Identity(), wide_limits(2));
}

/// One revolute joint about the vertical z axis with frame {b} at `radius`
/// along x; Z_b stays parallel to gravity.
inline KinematicChain lever_chain(double radius, const Matrix3d& tool_rotation = Matrix3d::Identity()) {
  return KinematicChain({Joint{}}, Vector3d(radius, 0.0, 0.0), tool_rotation, wide_limits(1));
}

/// Lever whose frame {b} is tilted so that Z_b is horizontal: the
/// pendulum swings in a vertical plane and feels gravity.
inline KinematicChain vertical_plane_chain(double radius = 0.5) {
  return lever_chain(radius, rot_x(std::numbers::pi / 2));
}

inline VectorXd panda_start_configuration() {
  constexpr double pi = std::numbers::pi;
  VectorXd q(7);
  q << -pi / 2, -pi / 6, 0.0, -2 * pi / 3, 0.0, pi / 2, pi / 4;
  return q;
}

inline VectorXd random_vector(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

inline Matrix3d random_rotation(std::mt19937_64& rng) {
  Eigen::Vector4d q = random_vector(rng, 4, 1.0);
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
}

inline double relative_error(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <class Derived1, class Derived2>
double relative_error(const Eigen::MatrixBase<Derived1>& a, const Eigen::MatrixBase<Derived2>& b,
                      double floor = 1e-12) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

}  // namespace beamilc::testing
