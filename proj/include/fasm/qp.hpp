#pragma once

#include <vector>

#include <Eigen/Dense>

namespace fasm::qp {

enum class QpStatus { kOptimal, kInfeasible, kMaxIter };

struct QpResult {
  QpStatus status = QpStatus::kInfeasible;
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // one per inequality row, >= 0
  std::vector<int> active;      // indices of rows in the final active set
  double objective = 0.0;
  int iterations = 0;
  int blocking_row = -1;  // row that proved infeasibility, if any
};

/// Dense strictly convex QP
///   minimize 0.5 x^T G x + c^T x   subject to   A x >= b
/// solved with the Goldfarb-Idnani dual active-set method. G must be positive definite.
QpResult solve_qp(const Eigen::MatrixXd& G, const Eigen::VectorXd& c, const Eigen::MatrixXd& A,
                  const Eigen::VectorXd& b, int max_iter = 0);

}  // namespace fasm::qp
