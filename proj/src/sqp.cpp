#include "fasm/sqp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fasm/qp.hpp"

namespace fasm::sqp {

namespace {

struct Evaluation {
  Eigen::VectorXd g;
  Eigen::MatrixXd jac;
};

Evaluation evaluate(const NlpProblem& nlp, const Eigen::VectorXd& z) {
  Evaluation ev;
  ev.g.resize(nlp.num_nonlinear);
  ev.jac.resize(nlp.num_nonlinear, nlp.dim());
  if (nlp.num_nonlinear > 0) nlp.constraints(z, ev.g, ev.jac);
  return ev;
}

double violation_sum(const Eigen::VectorXd& g) { return (-g).cwiseMax(0.0).sum(); }

double violation_max(const Eigen::VectorXd& g) {
  return g.size() == 0 ? 0.0 : std::max(0.0, -g.minCoeff());
}

// Positive definite stand-in for the Lagrangian Hessian.
Eigen::MatrixXd convexify(Eigen::MatrixXd B, double floor) {
  B = 0.5 * (B + B.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(B);
  if (llt.info() == Eigen::Success) {
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    if (diag.minCoeff() * diag.minCoeff() > floor) return B;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Rows of the QP in the step d: linearized nonlinear rows, linear rows, finite bounds.
struct QpRows {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::vector<int> nonlinear_rows;  // QP row -> nonlinear index
  Eigen::Index linear_begin = 0;
  Eigen::Index bound_begin = 0;
  std::vector<std::pair<Eigen::Index, double>> bound_rows;  // (variable, +1 lower / -1 upper)
};

QpRows build_rows(const NlpProblem& nlp, const Eigen::VectorXd& z, const Evaluation& ev,
                  const std::vector<char>& flat) {
  const Eigen::Index n = nlp.dim();
  QpRows rows;
  for (int i = 0; i < nlp.num_nonlinear; ++i) {
    if (!flat[static_cast<std::size_t>(i)]) rows.nonlinear_rows.push_back(i);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(nlp.lower[i])) rows.bound_rows.emplace_back(i, 1.0);
    if (std::isfinite(nlp.upper[i])) rows.bound_rows.emplace_back(i, -1.0);
  }
  const auto n_nl = static_cast<Eigen::Index>(rows.nonlinear_rows.size());
  const Eigen::Index n_lin = nlp.A.rows();
  const auto n_bd = static_cast<Eigen::Index>(rows.bound_rows.size());
  rows.A = Eigen::MatrixXd::Zero(n_nl + n_lin + n_bd, n);
  rows.b.resize(n_nl + n_lin + n_bd);
  for (Eigen::Index r = 0; r < n_nl; ++r) {
    const int i = rows.nonlinear_rows[static_cast<std::size_t>(r)];
    rows.A.row(r) = ev.jac.row(i);
    rows.b[r] = -ev.g[i];
  }
  rows.linear_begin = n_nl;
  if (n_lin > 0) {
    rows.A.middleRows(n_nl, n_lin) = nlp.A;
    rows.b.segment(n_nl, n_lin) = nlp.b - nlp.A * z;
  }
  rows.bound_begin = n_nl + n_lin;
  for (Eigen::Index r = 0; r < n_bd; ++r) {
    const auto [var, sign] = rows.bound_rows[static_cast<std::size_t>(r)];
    rows.A(rows.bound_begin + r, var) = sign;
    rows.b[rows.bound_begin + r] = sign > 0 ? nlp.lower[var] - z[var] : z[var] - nlp.upper[var];
  }
  return rows;
}

// Smallest step restoring the linear rows and bounds.
bool project_linear(const NlpProblem& nlp, Eigen::VectorXd& z) {
  const Eigen::Index n = nlp.dim();
  for (Eigen::Index i = 0; i < n; ++i) z[i] = std::clamp(z[i], nlp.lower[i], nlp.upper[i]);
  if (nlp.A.rows() == 0 || ((nlp.A * z - nlp.b).array() >= -1e-12).all()) return true;
  Evaluation none;
  none.g.resize(0);
  none.jac.resize(0, n);
  NlpProblem lin = nlp;
  lin.num_nonlinear = 0;
  const QpRows rows = build_rows(lin, z, none, {});
  const auto res = qp::solve_qp(Eigen::MatrixXd::Identity(n, n), Eigen::VectorXd::Zero(n), rows.A,
                                rows.b);
  if (res.status != qp::QpStatus::kOptimal) return false;
  z += res.x;
  for (Eigen::Index i = 0; i < n; ++i) z[i] = std::clamp(z[i], nlp.lower[i], nlp.upper[i]);
  return true;
}

}  // namespace

SqpResult solve(const NlpProblem& nlp, const Eigen::VectorXd& z0, const SqpOptions& options) {
  const Eigen::Index n = nlp.dim();
  if (z0.size() != n || nlp.q.size() != n || nlp.lower.size() != n || nlp.upper.size() != n ||
      (nlp.A.rows() > 0 && nlp.A.cols() != n) || nlp.b.size() != nlp.A.rows()) {
    throw std::invalid_argument("sqp::solve: inconsistent problem dimensions");
  }

  SqpResult out;
  Eigen::VectorXd z = z0;
  if (!project_linear(nlp, z)) {
    out.status = SqpStatus::kInfeasible;
    out.z = z;
    return out;
  }

  const double p_scale = std::max(1.0, nlp.P.cwiseAbs().maxCoeff());
  const double hess_floor = 1e-10 * p_scale;
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(nlp.num_nonlinear);
  double rho = 1.0;

  Evaluation ev = evaluate(nlp, z);

  auto finish = [&](SqpStatus status, int iterations, double kkt) {
    out.status = status;
    out.z = z;
    out.g = ev.g;
    out.lambda = lambda;
    out.objective = nlp.objective(z);
    out.kkt_residual = kkt;
    out.max_violation = violation_max(ev.g);
    out.iterations = iterations;
    out.most_violated = -1;
    if (out.max_violation > 0.0) {
      Eigen::Index idx;
      ev.g.minCoeff(&idx);
      out.most_violated = static_cast<int>(idx);
    }
    return out;
  };

  double kkt = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    const Eigen::VectorXd grad = nlp.P * z + nlp.q;

    Eigen::MatrixXd B = nlp.P;
    if (nlp.constraint_hessian && nlp.num_nonlinear > 0 && lambda.lpNorm<Eigen::Infinity>() > 0.0) {
      nlp.constraint_hessian(z, -lambda, B);
    }
    B = convexify(std::move(B), hess_floor);

    // Rows that are flat at z carry no first-order information; they stay out of the subproblem.
    std::vector<char> flat(static_cast<std::size_t>(nlp.num_nonlinear), 0);
    bool flat_violated = false;
    for (int i = 0; i < nlp.num_nonlinear; ++i) {
      flat[static_cast<std::size_t>(i)] = ev.jac.row(i).lpNorm<Eigen::Infinity>() == 0.0;
      if (flat[static_cast<std::size_t>(i)] && ev.g[i] < -options.feas_tol) flat_violated = true;
    }
    const QpRows rows = build_rows(nlp, z, ev, flat);
    const auto n_nl = static_cast<Eigen::Index>(rows.nonlinear_rows.size());
    auto res = qp::solve_qp(B, grad, rows.A, rows.b);

    Eigen::VectorXd d;
    Eigen::VectorXd qp_mult;
    bool elastic = false;
    if (res.status == qp::QpStatus::kOptimal) {
      d = res.x;
      qp_mult = res.multipliers;
    } else {
      // Elastic subproblem: nonlinear rows may be relaxed by t >= 0 at a steep quadratic price.
      elastic = true;
      const double mu = 1e6 * p_scale;
      const Eigen::Index m = rows.A.rows();
      Eigen::MatrixXd Be = Eigen::MatrixXd::Zero(n + n_nl, n + n_nl);
      Be.topLeftCorner(n, n) = B;
      Be.bottomRightCorner(n_nl, n_nl).diagonal().setConstant(mu);
      Eigen::VectorXd ge = Eigen::VectorXd::Zero(n + n_nl);
      ge.head(n) = grad;
      Eigen::MatrixXd Ae = Eigen::MatrixXd::Zero(m + n_nl, n + n_nl);
      Ae.topLeftCorner(m, n) = rows.A;
      Ae.block(0, n, n_nl, n_nl).setIdentity();
      Ae.bottomRightCorner(n_nl, n_nl).setIdentity();
      Eigen::VectorXd be = Eigen::VectorXd::Zero(m + n_nl);
      be.head(m) = rows.b;
      res = qp::solve_qp(Be, ge, Ae, be);
      if (res.status != qp::QpStatus::kOptimal) {
        return finish(SqpStatus::kInfeasible, iter, kkt);
      }
      d = res.x.head(n);
      qp_mult = res.multipliers.head(m);
    }

    // Multiplier estimates from the subproblem.
    Eigen::VectorXd lam_new = Eigen::VectorXd::Zero(nlp.num_nonlinear);
    for (Eigen::Index r = 0; r < n_nl; ++r) lam_new[rows.nonlinear_rows[static_cast<std::size_t>(r)]] = qp_mult[r];
    lambda = lam_new;

    // KKT residual at z with these multipliers.
    Eigen::VectorXd stat = grad - rows.A.transpose() * qp_mult;
    double compl_res = 0.0;
    for (int i = 0; i < nlp.num_nonlinear; ++i) compl_res = std::max(compl_res, std::abs(lambda[i] * ev.g[i]));
    for (Eigen::Index r = n_nl; r < rows.A.rows(); ++r) {
      compl_res = std::max(compl_res, std::abs(qp_mult[r] * rows.b[r]));
    }
    kkt = std::max(stat.lpNorm<Eigen::Infinity>(), compl_res);
    const double viol = violation_max(ev.g);
    if (!elastic && kkt <= options.opt_tol && viol <= options.feas_tol) {
      return finish(SqpStatus::kOptimal, iter, kkt);
    }
    if ((elastic || flat_violated) && d.lpNorm<Eigen::Infinity>() < 1e-12) {
      return finish(SqpStatus::kInfeasible, iter, kkt);
    }

    // l1 merit line search.
    rho = std::max(rho, 2.0 * (lambda.size() ? lambda.lpNorm<Eigen::Infinity>() : 0.0));
    const double phi0 = nlp.objective(z) + rho * violation_sum(ev.g);
    Eigen::VectorXd lin_g = ev.g + ev.jac * d;
    const double lin_viol = violation_sum(lin_g);
    double D = grad.dot(d) - rho * (violation_sum(ev.g) - lin_viol);
    if (D > 0.0) D = -d.dot(B * d);

    double alpha = 1.0;
    Evaluation trial;
    Eigen::VectorXd z_trial;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      z_trial = z + alpha * d;
      trial = evaluate(nlp, z_trial);
      const double phi = nlp.objective(z_trial) + rho * violation_sum(trial.g);
      if (phi <= phi0 + 1e-4 * alpha * D || std::abs(phi - phi0) <= 1e-15 * std::max(1.0, std::abs(phi0))) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      ++stalled;
      if (stalled > 3) {
        const SqpStatus st = viol <= options.feas_tol ? SqpStatus::kMaxIter : SqpStatus::kInfeasible;
        return finish(st, iter, kkt);
      }
      continue;
    }
    stalled = 0;
    for (Eigen::Index i = 0; i < n; ++i) z_trial[i] = std::clamp(z_trial[i], nlp.lower[i], nlp.upper[i]);
    z = std::move(z_trial);
    ev = evaluate(nlp, z);
  }

  const SqpStatus st =
      violation_max(ev.g) <= options.feas_tol ? SqpStatus::kMaxIter : SqpStatus::kInfeasible;
  return finish(st, options.max_iter, kkt);
}

}  // namespace fasm::sqp
