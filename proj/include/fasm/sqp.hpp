#pragma once

#include <functional>

#include <Eigen/Dense>

namespace fasm::sqp {

/// minimize   0.5 z^T P z + q^T z + c0
/// subject to g(z) >= 0          (nonlinear)
///            A z >= b           (linear)
///            lower <= z <= upper
struct NlpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  double c0 = 0.0;

  int num_nonlinear = 0;
  /// Fills g (num_nonlinear) and its Jacobian (num_nonlinear x dim).
  std::function<void(const Eigen::VectorXd& z, Eigen::VectorXd& g, Eigen::MatrixXd& jac)>
      constraints;
  /// Adds sum_i w_i * Hessian(g_i)(z) into H.
  std::function<void(const Eigen::VectorXd& z, const Eigen::VectorXd& w, Eigen::MatrixXd& H)>
      constraint_hessian;

  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::Index dim() const { return P.rows(); }
  double objective(const Eigen::VectorXd& z) const { return 0.5 * z.dot(P * z) + q.dot(z) + c0; }
};

enum class SqpStatus { kOptimal, kMaxIter, kInfeasible };

struct SqpOptions {
  double feas_tol = 1e-6;
  double opt_tol = 1e-6;
  int max_iter = 200;
};

struct SqpResult {
  SqpStatus status = SqpStatus::kMaxIter;
  Eigen::VectorXd z;
  Eigen::VectorXd g;       // nonlinear constraint values at z
  Eigen::VectorXd lambda;  // nonlinear constraint multipliers
  double objective = 0.0;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  int most_violated = -1;  // nonlinear row index, -1 when all satisfied
};

SqpResult solve(const NlpProblem& problem, const Eigen::VectorXd& z0, const SqpOptions& options = {});

}  // namespace fasm::sqp
