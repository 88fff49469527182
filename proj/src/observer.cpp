#include "fasm/observer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

namespace fasm::observer {

ObstacleModel build_system(int m, double t_s) {
  if (m < 2) throw std::invalid_argument("obstacle model order must be >= 2");
  if (!(t_s > 0.0)) throw std::invalid_argument("sampling period must be positive");
  ObstacleModel model;
  model.t_s = t_s;
  model.A = Eigen::MatrixXd::Identity(m, m);
  for (int i = 0; i + 1 < m; ++i) model.A(i, i + 1) = t_s;
  model.C = Eigen::RowVectorXd::Zero(m);
  model.C[0] = 1.0;
  return model;
}

Eigen::MatrixXd build_phi(const Eigen::VectorXd& alphas, double t_s) {
  const auto m = alphas.size();
  if (m < 1) throw std::invalid_argument("need at least one observer gain");
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    phi(i, 0) -= t_s * alphas[i];
    if (i + 1 < m) phi(i, i + 1) = t_s;
  }
  return phi;
}

double spectral_radius(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("spectral radius needs a square matrix");
  if (M.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigenvalue iteration failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double ErrorCertificate::phi(int k) const { return std::pow(eta, k) * phi0; }

ErrorCertificate lyapunov_certificate(const Eigen::MatrixXd& Phi, double eta) {
  if (Phi.rows() != Phi.cols()) throw std::invalid_argument("Phi must be square");
  if (!(eta < 1.0)) throw std::domain_error("eta must be < 1");
  const double rho = spectral_radius(Phi);
  if (!(rho < eta)) {
    throw std::domain_error("no certificate: rho(Phi) = " + std::to_string(rho) +
                            " is not below eta = " + std::to_string(eta));
  }
  const auto m = Phi.rows();
  const Eigen::MatrixXd S = Phi / eta;

  // vec(S^T W S) = (S^T kron S^T) vec(W); solve (I - S^T kron S^T) vec(W) = vec(I).
  const Eigen::Index mm = m * m;
  Eigen::MatrixXd K = Eigen::MatrixXd::Identity(mm, mm);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      K.block(i * m, j * m, m, m) -= S(j, i) * S.transpose();
    }
  }
  const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(
      Eigen::MatrixXd::Identity(m, m).eval().data(), mm);
  const Eigen::VectorXd w = K.fullPivLu().solve(rhs);
  Eigen::MatrixXd W = Eigen::Map<const Eigen::MatrixXd>(w.data(), m, m);
  W = 0.5 * (W + W.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W, Eigen::EigenvaluesOnly);
  ErrorCertificate cert;
  cert.Phi = Phi;
  cert.W = W;
  cert.eta = eta;
  cert.c1 = es.eigenvalues().minCoeff();
  cert.c2 = es.eigenvalues().maxCoeff();
  if (!(cert.c1 > 0.0)) throw std::runtime_error("Lyapunov solution is not positive definite");
  cert.phi0 = std::sqrt(cert.c2 / cert.c1);
  return cert;
}

double error_bound(const ErrorCertificate& cert, int k, double delta) {
  if (k < 0) throw std::invalid_argument("step index must be >= 0");
  return cert.phi(k) * delta;
}

void GpioConfig::validate() const {
  if (m < 2) throw std::invalid_argument("observer order m must be >= 2");
  if (alphas.size() != m) {
    throw std::invalid_argument("observer needs " + std::to_string(m) + " gains, got " +
                                std::to_string(alphas.size()));
  }
  if (!(t_s > 0.0)) throw std::invalid_argument("sampling period must be positive");
  if (!(delta >= 0.0)) throw std::invalid_argument("delta must be >= 0");
  if (!(eta < 1.0)) throw std::invalid_argument("eta must be < 1");
  const double rho = spectral_radius(build_phi(alphas, t_s));
  if (!(rho < eta)) {
    throw std::invalid_argument("observer gains give rho(Phi) = " + std::to_string(rho) +
                                ", which must be below eta = " + std::to_string(eta));
  }
}

ErrorCertificate GpioConfig::certificate() const {
  validate();
  return lyapunov_certificate(build_phi(alphas, t_s), eta);
}

GpioState truth_state(int m, const Eigen::Vector3d& position, const Eigen::Vector3d& velocity,
                      double t) {
  if (m < 2) throw std::invalid_argument("observer order m must be >= 2");
  GpioState s;
  s.xi = Eigen::MatrixX3d::Zero(m, 3);
  s.xi.row(0) = position.transpose();
  s.xi.row(1) = velocity.transpose();
  s.t = t;
  return s;
}

GpioState gpio_step(const GpioState& state, const Eigen::Vector3d& o_meas,
                    const GpioConfig& config) {
  const int m = config.m;
  if (state.xi.rows() != m || config.alphas.size() != m) {
    throw std::invalid_argument("observer state has " + std::to_string(state.xi.rows()) +
                                " blocks, config order is " + std::to_string(m));
  }
  const Eigen::RowVector3d innovation = o_meas.transpose() - state.xi.row(0);
  GpioState next;
  next.xi.resize(m, 3);
  for (int i = 0; i < m; ++i) {
    Eigen::RowVector3d rate = config.alphas[i] * innovation;
    if (i + 1 < m) rate += state.xi.row(i + 1);
    next.xi.row(i) = state.xi.row(i) + config.t_s * rate;
  }
  next.t = state.t + config.t_s;
  return next;
}

ObstaclePrediction predict_obstacle(const GpioState& state, int steps,
                                    const ObstacleModel& model) {
  if (steps < 0) throw std::invalid_argument("prediction steps must be >= 0");
  if (state.xi.rows() != model.A.rows()) {
    throw std::invalid_argument("observer state order does not match the obstacle model");
  }
  Eigen::MatrixX3d D = state.xi;
  for (int i = 0; i < steps; ++i) D = (model.A * D).eval();
  return {(model.C * D).transpose(), D};
}

}  // namespace fasm::observer
