#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fasm/kinematics.hpp"
#include "fasm/mpc.hpp"
#include "fasm/observer.hpp"
#include "json.hpp"

namespace fasm::scenario {

/// Reference pose that becomes active at time `start` and holds until the next one.
struct Waypoint {
  kinematics::Pose7 pose;
  double start = 0.0;
};

struct ObstacleSpec {
  std::string shape = "sphere";  // sphere | box
  Eigen::Vector3d dims = Eigen::Vector3d::Zero();
  double radius = 0.0;  // bounding radius, filled for both shapes
  Eigen::Vector3d start = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
};

struct ScenarioConfig {
  std::string name;
  std::filesystem::path chain_path;
  std::shared_ptr<const kinematics::KinematicChain> chain;
  double t_s = 0.04;
  double duration = 0.0;
  std::uint64_t seed = 0;
  Eigen::VectorXd initial_joints;
  std::vector<Waypoint> reference;

  observer::GpioConfig observer;
  std::optional<Eigen::MatrixX3d> observer_init;  // empty = truth-initialized

  double d_min = 0.0;
  std::vector<ObstacleSpec> obstacles;
  std::optional<double> r_d_fixed;  // empty = delta * phi_0
  double noise_std = 0.0;

  mpc::ControllerSettings controller;

  nlohmann::json source;  // document after overrides

  /// Tolerance distance used by every obstacle.
  double r_d() const;
  /// Reference pose active at time t.
  const kinematics::Pose7& reference_at(double t) const;
  std::size_t num_steps() const;
};

/// Applies "dotted.key=value"; the value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Builds and validates a scenario; relative file paths resolve against base_dir.
/// Throws fasm::ConfigError.
ScenarioConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

ScenarioConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace fasm::scenario
