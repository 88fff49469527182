#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fasm/cbf.hpp"
#include "fasm/kinematics.hpp"
#include "fasm/observer.hpp"
#include "fasm/sqp.hpp"

namespace fasm::mpc {

struct Weights {
  Eigen::MatrixXd Q;     // 7x7 on (position, quaternion) tracking error
  Eigen::MatrixXd R;     // n x n on joint velocities
  double P_gamma = 0.0;  // end-effector decay-rate penalty
  Eigen::VectorXd P_j;   // one decay-rate penalty per critical point

  static Weights uniform(double q, double r, double p_gamma, double p_j, int dof, int num_points);
  /// Throws std::invalid_argument unless Q, R are symmetric positive definite and the
  /// penalties are positive.
  void validate(int dof, int num_points) const;
  Weights scaled(double factor) const;
};

/// ||x_e - s||_Q^2 + ||u||_R^2 + P_gamma * gamma_e^2 + sum_j P_j * gamma_j^2
double stage_cost(const Eigen::VectorXd& x_e, const Eigen::VectorXd& u, double gamma_e,
                  const Eigen::VectorXd& gamma_j, const Eigen::VectorXd& s, const Weights& w);

enum class Mode { kFasm, kBaseline };

struct ControllerSettings {
  int N = 1;
  double t_s = 0.04;
  Weights weights;
  double u_max = 0.6;
  kinematics::JointLimits theta_box;
  double gamma_min = cbf::kGammaMin;
  double gamma_init = 0.001;
  Mode mode = Mode::kFasm;
  /// Baseline rows on the critical points as well; by default only the end effector is guarded.
  bool baseline_guards_points = false;
  sqp::SqpOptions solver;
};

/// Point subject to an obstacle constraint; the Jacobian is frozen over the horizon.
struct BarrierPoint {
  std::string id;
  Eigen::Vector3d x0;
  Eigen::MatrixXd J;  // 3 x n
};

struct ObstacleInput {
  observer::GpioState estimate;
  observer::ObstacleModel model;
  cbf::SafetySpec safety;
};

struct ObstacleForecast {
  cbf::SafetySpec safety;
  observer::GpioState estimate;
  std::vector<Eigen::Vector3d> predicted;  // o_hat_{i|k}, i = 0..N+1
};

struct MpcProblem {
  int N = 1;
  double t_s = 0.04;
  Eigen::Matrix<double, 7, 1> x_e0;
  Eigen::MatrixXd J_e;  // 7 x n
  Eigen::Matrix<double, 7, 1> reference;
  BarrierPoint ee;                   // end-effector position barrier (rows 0-2 of J_e)
  std::vector<BarrierPoint> points;  // critical points
  std::vector<ObstacleForecast> obstacles;
  Weights weights;
  double u_max = 0.6;
  Eigen::VectorXd theta_k;
  Eigen::VectorXd theta_min;
  Eigen::VectorXd theta_max;
  double gamma_min = cbf::kGammaMin;
  double gamma_init = 0.001;
  sqp::SqpOptions solver;

  bool baseline_guards_points = false;
  bool joints_pre_violated = false;
  bool initially_unsafe = false;  // some H(x_{0|k}, o_hat_{0|k}) < 0

  int dof() const { return static_cast<int>(J_e.cols()); }
  int num_points() const { return static_cast<int>(points.size()); }
  int num_barriers() const { return 1 + num_points(); }
  /// (N+1) * n controls + one decay rate per barrier.
  int num_variables() const { return (N + 1) * dof() + num_barriers(); }
  /// One criterion per stage, barrier and obstacle.
  int num_cbfsc() const { return (N + 1) * num_barriers() * static_cast<int>(obstacles.size()); }
  /// Barriers constrained by solve_baseline: the end effector, plus the critical points when guarded.
  int baseline_barriers() const { return baseline_guards_points ? num_barriers() : 1; }
  const BarrierPoint& barrier(int b) const { return b == 0 ? ee : points[static_cast<std::size_t>(b - 1)]; }
};

MpcProblem build_problem(const kinematics::KinematicChain& chain,
                         const kinematics::JointState& state, const kinematics::Pose7& reference,
                         const std::vector<ObstacleInput>& obstacles,
                         const ControllerSettings& settings);

enum class SolveStatus { kOptimal, kMaxIter, kInfeasible };
std::string to_string(SolveStatus s);

struct ConstraintInfo {
  int stage = 0;
  int barrier = 0;  // 0 = end effector, j >= 1 = critical point j-1
  int obstacle = 0;
  double residual = 0.0;
  double multiplier = 0.0;
  bool active = false;
};

struct MpcSolution {
  Eigen::MatrixXd u_seq;  // (N+1) x n
  double gamma_e = 0.0;
  Eigen::VectorXd gamma_j;
  double cost = 0.0;
  SolveStatus status = SolveStatus::kInfeasible;
  double kkt_residual = 0.0;
  double max_constraint_violation = 0.0;
  int iterations = 0;
  std::string most_violated;
  std::vector<ConstraintInfo> constraints;

  Eigen::VectorXd first_action() const { return u_seq.row(0).transpose(); }
  bool any_active() const;
  /// Drops the first stage and repeats the last one.
  MpcSolution shifted() const;
};

inline constexpr double kActivationTol = 1e-5;

/// Decision vector in solver layout [u_0 .. u_N, gamma_e, gamma_1 .. gamma_P].
Eigen::VectorXd pack(const MpcProblem& p, const MpcSolution& s);

/// Objective J_k of the flexible problem at a decision vector.
double fasm_cost(const MpcProblem& p, const Eigen::VectorXd& z);
/// Criterion residuals at a decision vector, ordered (obstacle, barrier, stage).
Eigen::VectorXd fasm_residuals(const MpcProblem& p, const Eigen::VectorXd& z);
/// H(x_{i|k}, o_hat_{i|k}) for i = 0..N+1 at a control sequence, ordered (obstacle, barrier, stage).
Eigen::VectorXd stage_surplus(const MpcProblem& p, const Eigen::MatrixXd& u_seq);

MpcSolution solve(const MpcProblem& problem, const std::optional<MpcSolution>& warm_start = {});

/// Same problem with each criterion replaced by H(x_{i+1|k}, o_hat_{i+1|k}) >= 0 for
/// i = 0..N (the flexible criterion with gamma pinned at 1) and without decay-rate variables.
/// Rows exist for problem.baseline_barriers() barriers.
MpcSolution solve_baseline(const MpcProblem& problem,
                           const std::optional<MpcSolution>& warm_start = {});

}  // namespace fasm::mpc
