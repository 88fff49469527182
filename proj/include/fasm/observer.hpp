#pragma once

#include <Eigen/Dense>

namespace fasm::observer {

/// Stacked-integrator model of the obstacle: D_{k+1} = A D_k, o_k = C D_k.
/// Each row of D is one 3-vector block (position, velocity, higher differences).
struct ObstacleModel {
  Eigen::MatrixXd A;
  Eigen::RowVectorXd C;
  double t_s = 0.0;
};

ObstacleModel build_system(int m, double t_s);

/// Estimation-error transition matrix of the GPIO: first column -t_s * alpha (plus the
/// identity on the diagonal), t_s on the superdiagonal.
Eigen::MatrixXd build_phi(const Eigen::VectorXd& alphas, double t_s);

/// Largest eigenvalue modulus of a small square matrix.
double spectral_radius(const Eigen::MatrixXd& M);

/// Quadratic-Lyapunov certificate for E_{k+1} = Phi E_k with decay rate eta:
/// W solves (Phi/eta)^T W (Phi/eta) - W = -I, so Phi^T W Phi - eta^2 W <= 0.
struct ErrorCertificate {
  Eigen::MatrixXd Phi;
  Eigen::MatrixXd W;
  double c1 = 0.0;  // lambda_min(W)
  double c2 = 0.0;  // lambda_max(W)
  double eta = 0.0;
  double phi0 = 0.0;  // sqrt(c2 / c1)

  /// phi_k = eta^k * sqrt(c2 / c1)
  double phi(int k) const;
};

/// Throws std::domain_error when rho(Phi) >= eta or eta >= 1.
ErrorCertificate lyapunov_certificate(const Eigen::MatrixXd& Phi, double eta);

/// Bound on ||E_k|| given ||E_0|| <= delta.
double error_bound(const ErrorCertificate& cert, int k, double delta);

struct GpioConfig {
  int m = 3;
  Eigen::VectorXd alphas;
  double t_s = 0.04;
  double eta = 0.9999;
  double delta = 0.0;

  /// Checks m >= 2, rho(Phi) < eta < 1, delta >= 0; throws std::invalid_argument.
  void validate() const;
  ErrorCertificate certificate() const;
};

/// Observer estimate: row 0 is the position estimate, row 1 the velocity estimate,
/// row i >= 2 the (i-1)-th higher difference.
struct GpioState {
  Eigen::MatrixX3d xi;
  double t = 0.0;

  Eigen::Vector3d position() const { return xi.row(0).transpose(); }
  Eigen::Vector3d velocity() const { return xi.row(1).transpose(); }
};

/// Initial state carrying the exact position and velocity, higher blocks zero.
GpioState truth_state(int m, const Eigen::Vector3d& position, const Eigen::Vector3d& velocity,
                      double t = 0.0);

/// One observer update driven by the measured obstacle position.
GpioState gpio_step(const GpioState& state, const Eigen::Vector3d& o_meas,
                    const GpioConfig& config);

struct ObstaclePrediction {
  Eigen::Vector3d position;
  Eigen::MatrixX3d stack;  // A^i D_hat
};

ObstaclePrediction predict_obstacle(const GpioState& state, int steps,
                                    const ObstacleModel& model);

}  // namespace fasm::observer
