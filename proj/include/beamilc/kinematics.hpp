#pragma once

#include "beamilc/dual.hpp"
#include "beamilc/error.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace beamilc {

template <class T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <class T>
using Mat3T = Eigen::Matrix<T, 3, 3>;
template <class T>
using VecXT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

template <class T>
Mat3T<T> skew(const Vec3T<T>& v) {
  Mat3T<T> s;
  s << T(0.0), -v.z(), v.y(), v.z(), T(0.0), -v.x(), -v.y(), v.x(), T(0.0);
  return s;
}

template <class T>
Vec3T<T> vee(const Mat3T<T>& m) {
  return Vec3T<T>(m(2, 1), m(0, 2), m(1, 0));
}

/// Rotation by `angle` about the unit vector `axis` (Rodrigues).
template <class T>
Mat3T<T> axis_angle_rotation(const Vector3d& axis, const T& angle) {
  using std::cos;
  using std::sin;
  const Matrix3d k = skew<double>(axis);
  const Matrix3d k2 = k * k;
  const T s = sin(angle);
  const T one_minus_c = 1.0 - cos(angle);
  Mat3T<T> r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r(i, j) = (i == j ? 1.0 : 0.0) + k(i, j) * s + k2(i, j) * one_minus_c;
    }
  }
  return r;
}

inline Matrix3d rot_x(double a) { return axis_angle_rotation<double>(Vector3d::UnitX(), a); }
inline Matrix3d rot_y(double a) { return axis_angle_rotation<double>(Vector3d::UnitY(), a); }
inline Matrix3d rot_z(double a) { return axis_angle_rotation<double>(Vector3d::UnitZ(), a); }

/// Fixed-axis roll-pitch-yaw: R = Rz(yaw) Ry(pitch) Rx(roll).
inline Matrix3d rpy_rotation(double roll, double pitch, double yaw) {
  return rot_z(yaw) * rot_y(pitch) * rot_x(roll);
}

inline bool is_rotation(const Matrix3d& r, double tol) {
  return (r.transpose() * r - Matrix3d::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

/// One revolute joint: a fixed placement relative to the previous joint
/// frame, followed by a rotation about `axis` (in the placed frame).
struct Joint {
  Vector3d translation = Vector3d::Zero();
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d axis = Vector3d::UnitZ();
};

struct JointLimits {
  VectorXd q_min;
  VectorXd q_max;
  VectorXd qd_max;
  VectorXd qdd_max;
  VectorXd jerk_max;
};

class KinematicChain {
 public:
  KinematicChain() = default;
  KinematicChain(std::vector<Joint> joints, Vector3d tool_translation, Matrix3d tool_rotation,
                 JointLimits limits)
      : joints_(std::move(joints)),
        tool_translation_(std::move(tool_translation)),
        tool_rotation_(std::move(tool_rotation)),
        limits_(std::move(limits)) {
    validate();
  }

  int dof() const { return static_cast<int>(joints_.size()); }
  const std::vector<Joint>& joints() const { return joints_; }
  const Vector3d& tool_translation() const { return tool_translation_; }
  const Matrix3d& tool_rotation() const { return tool_rotation_; }
  const JointLimits& limits() const { return limits_; }

  void validate() const {
    constexpr double kRotTol = 1e-10;
    constexpr double kAxisTol = 1e-12;
    if (joints_.empty()) throw InvalidArgument("kinematic chain has no joints");
    for (std::size_t j = 0; j < joints_.size(); ++j) {
      if (!is_rotation(joints_[j].rotation, kRotTol)) {
        throw InvalidArgument("joint " + std::to_string(j) + ": fixed rotation is not a proper rotation");
      }
      if (std::abs(joints_[j].axis.norm() - 1.0) > kAxisTol) {
        throw InvalidArgument("joint " + std::to_string(j) + ": axis is not a unit vector");
      }
    }
    if (!is_rotation(tool_rotation_, kRotTol)) {
      throw InvalidArgument("tool rotation is not a proper rotation");
    }
    const long n = dof();
    require_dim(limits_.q_min.size(), n, "q_min");
    require_dim(limits_.q_max.size(), n, "q_max");
    require_dim(limits_.qd_max.size(), n, "qd_max");
    require_dim(limits_.qdd_max.size(), n, "qdd_max");
    require_dim(limits_.jerk_max.size(), n, "jerk_max");
    for (long j = 0; j < n; ++j) {
      if (!(limits_.q_min[j] < limits_.q_max[j])) {
        throw InvalidArgument("joint " + std::to_string(j) + ": q_min must be below q_max");
      }
      if (!(limits_.qd_max[j] > 0 && limits_.qdd_max[j] > 0 && limits_.jerk_max[j] > 0)) {
        throw InvalidArgument("joint " + std::to_string(j) + ": rate limits must be positive");
      }
    }
  }

 private:
  std::vector<Joint> joints_;
  Vector3d tool_translation_ = Vector3d::Zero();
  Matrix3d tool_rotation_ = Matrix3d::Identity();
  JointLimits limits_;
};

/// Pose of frame {b} in the base frame {0}.
template <class T>
struct FramePoseT {
  Vec3T<T> position;
  Mat3T<T> rotation;
};
using FramePose = FramePoseT<double>;

/// Velocity and acceleration of frame {b}, all expressed in {0}.
template <class T>
struct FrameMotionT {
  Vec3T<T> linear_velocity;
  Vec3T<T> angular_velocity;
  Vec3T<T> linear_acceleration;
  Vec3T<T> angular_acceleration;
};
using FrameMotion = FrameMotionT<double>;

template <class T>
struct FrameStateT {
  FramePoseT<T> pose;
  FrameMotionT<T> motion;
};

template <class T>
FramePoseT<T> forward_kinematics(const KinematicChain& chain, const VecXT<T>& q) {
  require_dim(q.size(), chain.dof(), "forward_kinematics: q");
  Vec3T<T> p = Vec3T<T>::Zero();
  Mat3T<T> r = Mat3T<T>::Identity();
  for (int j = 0; j < chain.dof(); ++j) {
    const Joint& joint = chain.joints()[j];
    p += r * joint.translation.cast<T>();
    r = (r * joint.rotation.cast<T>()).eval();
    r = (r * axis_angle_rotation<T>(joint.axis, q[j])).eval();
  }
  p += r * chain.tool_translation().cast<T>();
  r = (r * chain.tool_rotation().cast<T>()).eval();
  return {p, r};
}

inline FramePose forward_kinematics(const KinematicChain& chain, const VectorXd& q) {
  return forward_kinematics<double>(chain, q);
}

/// Pose and motion of {b} by the outward (forward) recursion of the
/// Newton-Euler algorithm, restricted to kinematic quantities.
template <class T>
FrameStateT<T> frame_state(const KinematicChain& chain, const VecXT<T>& q, const VecXT<T>& qd,
                           const VecXT<T>& qdd) {
  const int n = chain.dof();
  require_dim(q.size(), n, "frame_motion: q");
  require_dim(qd.size(), n, "frame_motion: qd");
  require_dim(qdd.size(), n, "frame_motion: qdd");

  Vec3T<T> p = Vec3T<T>::Zero();
  Mat3T<T> r = Mat3T<T>::Identity();
  Vec3T<T> w = Vec3T<T>::Zero();
  Vec3T<T> v = Vec3T<T>::Zero();
  Vec3T<T> wd = Vec3T<T>::Zero();
  Vec3T<T> a = Vec3T<T>::Zero();

  auto carry = [&](const Vec3T<T>& offset) {
    // Rigid transport of (v, a) over `offset` (expressed in {0}).
    a += wd.cross(offset) + w.cross(w.cross(offset));
    v += w.cross(offset);
    p += offset;
  };

  for (int j = 0; j < n; ++j) {
    const Joint& joint = chain.joints()[j];
    carry(r * joint.translation.cast<T>());
    r = (r * joint.rotation.cast<T>()).eval();
    const Vec3T<T> z = r * joint.axis.cast<T>();
    wd += z * qdd[j] + w.cross(z) * qd[j];
    w += z * qd[j];
    r = (r * axis_angle_rotation<T>(joint.axis, q[j])).eval();
  }
  carry(r * chain.tool_translation().cast<T>());
  r = (r * chain.tool_rotation().cast<T>()).eval();
  return {{p, r}, {v, w, a, wd}};
}

inline FrameMotion frame_motion(const KinematicChain& chain, const VectorXd& q, const VectorXd& qd,
                                const VectorXd& qdd) {
  return frame_state<double>(chain, q, qd, qdd).motion;
}

/// Geometric Jacobian of {b} expressed in {b}: rows are (linear, angular),
/// so that [R_b^T pdot_b; R_b^T omega_b] = J qdot.
inline MatrixXd geometric_jacobian(const KinematicChain& chain, const VectorXd& q) {
  const int n = chain.dof();
  require_dim(q.size(), n, "geometric_jacobian: q");
  std::vector<Vector3d> origins(n);
  std::vector<Vector3d> axes(n);
  Vector3d p = Vector3d::Zero();
  Matrix3d r = Matrix3d::Identity();
  for (int j = 0; j < n; ++j) {
    const Joint& joint = chain.joints()[j];
    p += r * joint.translation;
    r = r * joint.rotation;
    origins[j] = p;
    axes[j] = r * joint.axis;
    r = r * axis_angle_rotation<double>(joint.axis, q[j]);
  }
  p += r * chain.tool_translation();
  r = r * chain.tool_rotation();

  MatrixXd jac(6, n);
  for (int j = 0; j < n; ++j) {
    jac.block<3, 1>(0, j) = r.transpose() * axes[j].cross(p - origins[j]);
    jac.block<3, 1>(3, j) = r.transpose() * axes[j];
  }
  return jac;
}

/// Orientation error e_O = vee(log(R_des^T R)), expressed in the R_des frame.
/// Zero iff R == R_des; |e_O| is the geodesic angle between the rotations.
template <class T>
Vec3T<T> orientation_error(const Mat3T<T>& r, const Mat3T<T>& r_des) {
  using std::atan2;
  using std::sqrt;
  const Mat3T<T> e = r_des.transpose() * r;
  const Vec3T<T> w = vee<T>(Mat3T<T>(e - e.transpose())) * 0.5;  // sin(phi) * axis
  const T cos_phi = (e.trace() - 1.0) * 0.5;
  const T s2 = w.squaredNorm();
  const double s2v = value_of(s2);
  const double cv = value_of(cos_phi);

  if (cv > 0.0 && s2v < 1e-8) {
    // phi / sin(phi) as a series in sin^2(phi); smooth through the identity.
    const T factor = 1.0 + s2 / 6.0 + s2 * s2 * (3.0 / 40.0);
    return w * factor;
  }
  if (cv > -0.99) {
    const T s = sqrt(s2);
    const T phi = atan2(s, cos_phi);
    return w * (phi / s);
  }
  // Near phi = pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part (e + e^T)/2 = cos(phi) I + (1 - cos(phi)) a a^T.
  const Mat3T<T> b = (e + e.transpose()) * 0.5;
  int col = 0;
  for (int i = 1; i < 3; ++i) {
    if (value_of(b(i, i)) > value_of(b(col, col))) col = i;
  }
  Vec3T<T> axis;
  for (int i = 0; i < 3; ++i) axis[i] = b(i, col) - (i == col ? cos_phi : T(0.0));
  axis = axis / sqrt(axis.squaredNorm());
  if (value_of(axis.dot(w)) < 0.0) axis = -axis;
  const T s = sqrt(s2);
  const T phi = atan2(s, cos_phi);
  return axis * phi;
}

inline Vector3d orientation_error(const Matrix3d& r, const Matrix3d& r_des) {
  constexpr double kTol = 1e-8;
  if (!is_rotation(r, kTol) || !is_rotation(r_des, kTol)) {
    throw InvalidArgument("orientation_error: input is not a proper rotation");
  }
  return orientation_error<double>(r, r_des);
}

/// Seven-joint arm with the published Franka Emika Panda geometry (modified
/// Denavit-Hartenberg table) and datasheet limits; frame {b} is the flange.
/// External data: the exact tool offset used on hardware is unknown.
inline KinematicChain panda_chain() {
  constexpr double pi = std::numbers::pi;
  struct Row {
    double a, d, alpha;
  };
  const Row rows[7] = {{0.0, 0.333, 0.0},       {0.0, 0.0, -pi / 2}, {0.0, 0.316, pi / 2},
                       {0.0825, 0.0, pi / 2},   {-0.0825, 0.384, -pi / 2},
                       {0.0, 0.0, pi / 2},      {0.088, 0.0, pi / 2}};
  std::vector<Joint> joints;
  for (const Row& row : rows) {
    Joint j;
    j.rotation = rot_x(row.alpha);
    j.translation = Vector3d(row.a, 0.0, 0.0) + j.rotation * Vector3d(0.0, 0.0, row.d);
    j.axis = Vector3d::UnitZ();
    joints.push_back(j);
  }
  JointLimits lim;
  lim.q_min.resize(7);
  lim.q_max.resize(7);
  lim.qd_max.resize(7);
  lim.qdd_max.resize(7);
  lim.jerk_max.resize(7);
  lim.q_min << -2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973;
  lim.q_max << 2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973;
  lim.qd_max << 2.1750, 2.1750, 2.1750, 2.1750, 2.6100, 2.6100, 2.6100;
  lim.qdd_max << 15.0, 7.5, 10.0, 12.5, 15.0, 20.0, 20.0;
  lim.jerk_max << 7500.0, 3750.0, 5000.0, 6250.0, 7500.0, 10000.0, 10000.0;
  return KinematicChain(std::move(joints), Vector3d(0.0, 0.0, 0.107), Matrix3d::Identity(), lim);
}

}  // namespace beamilc
