#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "json.hpp"

namespace fasm::kinematics {

/// Standard Denavit-Hartenberg row of a revolute joint:
///   T = Rot_z(theta + theta_offset) * Trans_z(d) * Trans_x(a) * Rot_x(alpha)
struct DhRow {
  double a = 0.0;      // m
  double alpha = 0.0;  // rad
  double d = 0.0;      // m
  double theta_offset = 0.0;
};

/// A point rigidly attached to a link, expressed in that link's distal frame.
struct CriticalPoint {
  std::size_t link = 0;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  std::string id;
};

struct JointLimits {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  bool empty() const { return lower.size() == 0; }
  bool contains(const Eigen::VectorXd& theta, double tol = 0.0) const;
};

class KinematicChain {
 public:
  KinematicChain(std::vector<DhRow> joints, std::vector<CriticalPoint> points,
                 JointLimits limits = {});

  std::size_t dof() const { return joints_.size(); }
  const std::vector<DhRow>& joints() const { return joints_; }
  const std::vector<CriticalPoint>& critical_points() const { return points_; }
  const JointLimits& limits() const { return limits_; }

  /// Index of a critical point; throws std::out_of_range for unknown ids.
  std::size_t point_index(const std::string& id) const;

  /// Base-to-frame transforms T_0^0 (identity) .. T_0^n.
  std::vector<Eigen::Isometry3d> frames(const Eigen::VectorXd& theta) const;

 private:
  std::vector<DhRow> joints_;
  std::vector<CriticalPoint> points_;
  JointLimits limits_;
};

struct JointState {
  Eigen::VectorXd theta;
  double t = 0.0;
};

/// End-effector pose: position and unit quaternion in (w, x, y, z) order.
struct Pose7 {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector4d q{1.0, 0.0, 0.0, 0.0};

  Eigen::Matrix<double, 7, 1> vector() const;
  static Pose7 from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);
};

/// Flip the quaternion so that w >= 0.
Eigen::Vector4d canonical_quaternion(const Eigen::Vector4d& q);
Pose7 canonical(Pose7 pose);
/// Renormalizes the quaternion part of a pose to unit length.
Pose7 normalized(Pose7 pose);

/// 3xn (point) or 7xn (end effector) Jacobian.
using PointJacobian = Eigen::MatrixXd;

Eigen::Vector3d forward_point(const KinematicChain& chain, const JointState& state,
                              const std::string& point_id);
/// Positions of every critical point, in declaration order.
std::vector<Eigen::Vector3d> forward_points(const KinematicChain& chain,
                                            const JointState& state);

/// Tool-frame pose; the quaternion is returned with w >= 0.
Pose7 ee_pose(const KinematicChain& chain, const JointState& state);

PointJacobian point_jacobian(const KinematicChain& chain, const JointState& state,
                             const std::string& point_id);

/// Rows 0-2: translational Jacobian of the tool origin. Rows 3-6: quaternion rate
/// dq/dt = 1/2 * G(q) * omega, with omega the world-frame angular velocity.
PointJacobian ee_jacobian(const KinematicChain& chain, const JointState& state);

/// 4x3 map from world-frame angular velocity to quaternion rate (w, x, y, z).
Eigen::Matrix<double, 4, 3> quaternion_rate_map(const Eigen::Vector4d& q);

JointState integrate_joints(const JointState& state, const Eigen::VectorXd& u, double t_s);

/// x' = x + t_s * J * u. No renormalization; this is the prediction model.
Eigen::VectorXd predict_point(const Eigen::VectorXd& x, const Eigen::MatrixXd& J,
                              const Eigen::VectorXd& u, double t_s);

/// Parses a chain description:
///   {dh: [[a, alpha, d, theta_offset], ...],
///    critical_points: [{link, offset: [x, y, z], id}],
///    joint_limits: [[min, max], ...], length_unit: "m" | "cm"}
/// When critical_points is absent, one point is placed at each distal frame origin.
KinematicChain chain_from_json(const nlohmann::json& j);
KinematicChain load_chain(const std::string& path);

}  // namespace fasm::kinematics
