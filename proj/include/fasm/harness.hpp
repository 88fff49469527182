#pragma once

#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fasm/kinematics.hpp"
#include "fasm/mpc.hpp"
#include "fasm/scenario.hpp"
#include "json.hpp"

namespace fasm::harness {

struct ObstacleTruth {
  Eigen::Vector3d position;
  Eigen::Vector3d velocity;
};

/// Constant-velocity truth: o(t) = start + velocity * t.
ObstacleTruth obstacle_truth(double t, const scenario::ObstacleSpec& spec);

struct StepRecord {
  int k = 0;
  double t = 0.0;
  Eigen::VectorXd theta;
  Eigen::VectorXd u;
  kinematics::Pose7 ee;
  kinematics::Pose7 reference;
  std::vector<Eigen::Vector3d> points;
  // First obstacle; NaN when the scene has none.
  Eigen::Vector3d obs = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN());
  Eigen::Vector3d obs_hat = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN());
  Eigen::Vector3d vhat = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN());
  // True clearances h, minimum over obstacles; +inf without obstacles.
  double h_e = 0.0;
  double h_min_crit = 0.0;
  std::vector<double> h_points;
  double gamma_e = 0.0;
  Eigen::VectorXd gamma_j;
  double gamma_j_min = 0.0;
  double cost = 0.0;
  mpc::SolveStatus status = mpc::SolveStatus::kOptimal;
  double solve_ms = std::numeric_limits<double>::quiet_NaN();
  bool any_active = false;
  bool fallback = false;
};

struct TrajectoryLog {
  std::string name;
  std::string mode;
  int dof = 0;
  double t_s = 0.0;
  double duration = 0.0;
  double u_max = 0.0;
  bool guards_points = true;  // critical points carry obstacle constraints
  Eigen::VectorXd theta_min;
  Eigen::VectorXd theta_max;
  std::vector<std::string> point_ids;
  std::vector<StepRecord> steps;

  static std::string csv_header(int dof);
  void write_csv(std::ostream& out) const;
  std::string csv() const;
};

struct RunOptions {
  bool record_timing = false;
};

/// Closed loop: measure, build, solve, apply the first action, integrate, update the observer.
/// Solver failures fall back to u = 0 for that step and never abort the run.
TrajectoryLog run_scenario(const scenario::ScenarioConfig& config, const RunOptions& options = {});

/// Same scenario without obstacles.
scenario::ScenarioConfig obstacle_free(const scenario::ScenarioConfig& config);

struct Metrics {
  double min_clearance = 0.0;          // over the end effector and every critical point
  double min_guarded_clearance = 0.0;  // over the points the controller constrains
  double highest_altitude = 0.0;
  std::optional<double> trigger_moment;     // first step deviating from the obstacle-free twin
  std::optional<double> activation_moment;  // first step with an active criterion at the optimum
  double max_gamma = 0.0;
  double final_position_error = 0.0;
  double final_quaternion_error = 0.0;
  bool collision = false;
  int infeasible_steps = 0;
  int max_iter_steps = 0;
  bool all_optimal = true;
  double max_abs_u = 0.0;
  bool joints_in_box = true;

  nlohmann::json to_json() const;
};

inline constexpr double kDeviationThreshold = 1e-3;  // m

Metrics compute_metrics(const TrajectoryLog& log);

/// Fills trigger_moment from an obstacle-free run on the same time grid.
void attach_twin(Metrics& metrics, const TrajectoryLog& log, const TrajectoryLog& twin,
                 double threshold = kDeviationThreshold);

struct RunResult {
  std::string name;
  TrajectoryLog log;
  Metrics metrics;
};

/// Runs a scenario and its obstacle-free twin.
RunResult run_with_metrics(const scenario::ScenarioConfig& config, const RunOptions& options = {});

/// Runs every configuration on its own thread. Throws fasm::ConfigError unless all share
/// t_s and duration.
std::vector<RunResult> compare_runs(const std::vector<scenario::ScenarioConfig>& configs,
                                    const RunOptions& options = {});

nlohmann::json comparison_table(const std::vector<RunResult>& runs);

}  // namespace fasm::harness
