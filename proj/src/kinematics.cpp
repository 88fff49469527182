#include "fasm/kinematics.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fasm/errors.hpp"

namespace fasm::kinematics {

namespace {

Eigen::Isometry3d dh_transform(const DhRow& row, double theta) {
  const double th = theta + row.theta_offset;
  const double ct = std::cos(th), st = std::sin(th);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  Eigen::Matrix4d m;
  m << ct, -st * ca, st * sa, row.a * ct,
       st, ct * ca, -ct * sa, row.a * st,
       0.0, sa, ca, row.d,
       0.0, 0.0, 0.0, 1.0;
  return Eigen::Isometry3d(m);
}

void check_theta(const KinematicChain& chain, const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != chain.dof()) {
    throw std::invalid_argument("joint vector has length " + std::to_string(theta.size()) +
                                ", chain has " + std::to_string(chain.dof()) + " joints");
  }
}

Eigen::Vector3d point_position(const std::vector<Eigen::Isometry3d>& frames,
                               const CriticalPoint& cp) {
  return frames[cp.link + 1] * cp.offset;
}

// Translational Jacobian of a world point rigidly attached to the distal frame of `link`.
Eigen::MatrixXd translational_jacobian(const std::vector<Eigen::Isometry3d>& frames,
                                       std::size_t link, const Eigen::Vector3d& p) {
  const std::size_t n = frames.size() - 1;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i <= link; ++i) {
    const Eigen::Vector3d axis = frames[i].linear().col(2);
    const Eigen::Vector3d origin = frames[i].translation();
    J.col(static_cast<Eigen::Index>(i)) = axis.cross(p - origin);
  }
  return J;
}

}  // namespace

bool JointLimits::contains(const Eigen::VectorXd& theta, double tol) const {
  if (empty()) return true;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (theta[i] < lower[i] - tol || theta[i] > upper[i] + tol) return false;
  }
  return true;
}

KinematicChain::KinematicChain(std::vector<DhRow> joints, std::vector<CriticalPoint> points,
                               JointLimits limits)
    : joints_(std::move(joints)), points_(std::move(points)), limits_(std::move(limits)) {
  if (joints_.empty()) throw std::invalid_argument("chain needs at least one joint");
  for (const auto& cp : points_) {
    if (cp.link >= joints_.size()) {
      throw std::invalid_argument("critical point '" + cp.id + "' references link " +
                                  std::to_string(cp.link) + " of a " +
                                  std::to_string(joints_.size()) + "-joint chain");
    }
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    for (std::size_t j = i + 1; j < points_.size(); ++j) {
      if (points_[i].id == points_[j].id) {
        throw std::invalid_argument("duplicate critical point id '" + points_[i].id + "'");
      }
    }
  }
  if (!limits_.empty()) {
    const auto n = static_cast<Eigen::Index>(joints_.size());
    if (limits_.lower.size() != n || limits_.upper.size() != n) {
      throw std::invalid_argument("joint limits must have one entry per joint");
    }
    if ((limits_.lower.array() > limits_.upper.array()).any()) {
      throw std::invalid_argument("joint limit lower bound exceeds upper bound");
    }
  }
}

std::size_t KinematicChain::point_index(const std::string& id) const {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (points_[i].id == id) return i;
  }
  throw std::out_of_range("unknown critical point '" + id + "'");
}

std::vector<Eigen::Isometry3d> KinematicChain::frames(const Eigen::VectorXd& theta) const {
  check_theta(*this, theta);
  std::vector<Eigen::Isometry3d> out;
  out.reserve(joints_.size() + 1);
  out.push_back(Eigen::Isometry3d::Identity());
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    out.push_back(out.back() * dh_transform(joints_[i], theta[static_cast<Eigen::Index>(i)]));
  }
  return out;
}

Eigen::Matrix<double, 7, 1> Pose7::vector() const {
  Eigen::Matrix<double, 7, 1> v;
  v << p, q;
  return v;
}

Pose7 Pose7::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != 7) throw std::invalid_argument("pose vector must have 7 entries");
  Pose7 pose;
  pose.p = v.head<3>();
  pose.q = v.tail<4>();
  return pose;
}

Eigen::Vector4d canonical_quaternion(const Eigen::Vector4d& q) {
  return q[0] < 0.0 ? Eigen::Vector4d(-q) : q;
}

Pose7 canonical(Pose7 pose) {
  pose.q = canonical_quaternion(pose.q);
  return pose;
}

Pose7 normalized(Pose7 pose) {
  const double norm = pose.q.norm();
  if (norm == 0.0) throw std::invalid_argument("zero quaternion");
  pose.q /= norm;
  return pose;
}

Eigen::Vector3d forward_point(const KinematicChain& chain, const JointState& state,
                              const std::string& point_id) {
  const auto& cp = chain.critical_points()[chain.point_index(point_id)];
  return point_position(chain.frames(state.theta), cp);
}

std::vector<Eigen::Vector3d> forward_points(const KinematicChain& chain,
                                            const JointState& state) {
  const auto frames = chain.frames(state.theta);
  std::vector<Eigen::Vector3d> out;
  out.reserve(chain.critical_points().size());
  for (const auto& cp : chain.critical_points()) out.push_back(point_position(frames, cp));
  return out;
}

Pose7 ee_pose(const KinematicChain& chain, const JointState& state) {
  const auto frames = chain.frames(state.theta);
  const Eigen::Isometry3d& tool = frames.back();
  const Eigen::Quaterniond quat(tool.linear());
  Pose7 pose;
  pose.p = tool.translation();
  pose.q = canonical_quaternion(Eigen::Vector4d(quat.w(), quat.x(), quat.y(), quat.z()));
  return normalized(pose);
}

PointJacobian point_jacobian(const KinematicChain& chain, const JointState& state,
                             const std::string& point_id) {
  const auto& cp = chain.critical_points()[chain.point_index(point_id)];
  const auto frames = chain.frames(state.theta);
  return translational_jacobian(frames, cp.link, point_position(frames, cp));
}

Eigen::Matrix<double, 4, 3> quaternion_rate_map(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix<double, 4, 3> g;
  g << -x, -y, -z,
        w,  z, -y,
       -z,  w,  x,
        y, -x,  w;
  return 0.5 * g;
}

PointJacobian ee_jacobian(const KinematicChain& chain, const JointState& state) {
  const auto frames = chain.frames(state.theta);
  const std::size_t n = chain.dof();
  const Eigen::Isometry3d& tool = frames.back();

  Eigen::MatrixXd angular(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    angular.col(static_cast<Eigen::Index>(i)) = frames[i].linear().col(2);
  }
  const Eigen::Quaterniond quat(tool.linear());
  const Eigen::Vector4d q =
      canonical_quaternion(Eigen::Vector4d(quat.w(), quat.x(), quat.y(), quat.z())).normalized();

  PointJacobian J(7, static_cast<Eigen::Index>(n));
  J.topRows<3>() = translational_jacobian(frames, n - 1, tool.translation());
  J.bottomRows<4>() = quaternion_rate_map(q) * angular;
  return J;
}

JointState integrate_joints(const JointState& state, const Eigen::VectorXd& u, double t_s) {
  if (u.size() != state.theta.size()) {
    throw std::invalid_argument("joint velocity has length " + std::to_string(u.size()) +
                                ", expected " + std::to_string(state.theta.size()));
  }
  return JointState{state.theta + t_s * u, state.t + t_s};
}

Eigen::VectorXd predict_point(const Eigen::VectorXd& x, const Eigen::MatrixXd& J,
                              const Eigen::VectorXd& u, double t_s) {
  if (J.cols() != u.size() || J.rows() != x.size()) {
    throw std::invalid_argument("predict_point: Jacobian is " + std::to_string(J.rows()) + "x" +
                                std::to_string(J.cols()) + ", state has " +
                                std::to_string(x.size()) + " rows, input has " +
                                std::to_string(u.size()));
  }
  return x + t_s * (J * u);
}

KinematicChain chain_from_json(const nlohmann::json& j) {
  try {
    double scale = 1.0;
    if (j.contains("length_unit")) {
      const auto unit = j.at("length_unit").get<std::string>();
      if (unit == "cm") {
        scale = 0.01;
      } else if (unit != "m") {
        throw ConfigError("length_unit must be \"m\" or \"cm\", got \"" + unit + "\"");
      }
    }

    std::vector<DhRow> rows;
    for (const auto& r : j.at("dh")) {
      if (r.size() != 4) throw ConfigError("each dh row needs [a, alpha, d, theta_offset]");
      rows.push_back({r[0].get<double>() * scale, r[1].get<double>(), r[2].get<double>() * scale,
                      r[3].get<double>()});
    }
    if (rows.empty()) throw ConfigError("chain has no joints");

    std::vector<CriticalPoint> points;
    if (j.contains("critical_points")) {
      for (const auto& p : j.at("critical_points")) {
        CriticalPoint cp;
        cp.link = p.at("link").get<std::size_t>();
        const auto off = p.value("offset", std::vector<double>{0.0, 0.0, 0.0});
        if (off.size() != 3) throw ConfigError("critical point offset needs 3 entries");
        cp.offset = Eigen::Vector3d(off[0], off[1], off[2]) * scale;
        cp.id = p.at("id").get<std::string>();
        points.push_back(std::move(cp));
      }
    } else {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        points.push_back({i, Eigen::Vector3d::Zero(), "link" + std::to_string(i + 1)});
      }
    }

    JointLimits limits;
    if (j.contains("joint_limits")) {
      const auto& jl = j.at("joint_limits");
      if (jl.size() != rows.size()) throw ConfigError("joint_limits needs one [min, max] per joint");
      limits.lower.resize(static_cast<Eigen::Index>(rows.size()));
      limits.upper.resize(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        limits.lower[static_cast<Eigen::Index>(i)] = jl[i].at(0).get<double>();
        limits.upper[static_cast<Eigen::Index>(i)] = jl[i].at(1).get<double>();
      }
    }
    return KinematicChain(std::move(rows), std::move(points), std::move(limits));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("chain description: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("chain description: ") + e.what());
  }
}

KinematicChain load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open chain file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("chain file '" + path + "': " + e.what());
  }
  return chain_from_json(j);
}

}  // namespace fasm::kinematics
