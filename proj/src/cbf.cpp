#include "fasm/cbf.hpp"

#include <cmath>
#include <stdexcept>

namespace fasm::cbf {

double bounding_radius(const Eigen::Vector3d& box_dims) {
  if ((box_dims.array() < 0.0).any()) throw std::invalid_argument("box dimensions must be >= 0");
  return 0.5 * box_dims.norm();
}

double safe_radius(double d_min, double R_o, double r_d) {
  if (d_min < 0.0 || R_o < 0.0 || r_d < 0.0) {
    throw std::invalid_argument("safety distances must be >= 0");
  }
  return d_min + R_o + r_d;
}

SafetySpec::SafetySpec(double d_min_, double R_o_, double r_d_)
    : d_min(d_min_), R_o(R_o_), r_d(r_d_) {
  if (!(d_min >= 0.0 && R_o >= 0.0 && r_d >= 0.0)) {
    throw std::invalid_argument("safety distances must be >= 0");
  }
}

double clearance(const Eigen::Vector3d& x, const Eigen::Vector3d& o, double d_min, double R_o) {
  return (x - o).norm() - d_min - R_o;
}

double surplus_distance(const Eigen::Vector3d& x, const Eigen::Vector3d& o, double r_safe) {
  return (x - o).norm() - r_safe;
}

double cbfsc_residual(const Eigen::Vector3d& x_k, const Eigen::Vector3d& x_k1,
                      const Eigen::Vector3d& o_k, const Eigen::Vector3d& o_hat_k1,
                      double r_safe, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("decay rate must lie in (0, 1]");
  }
  return surplus_distance(x_k1, o_hat_k1, r_safe) - (1.0 - gamma) * surplus_distance(x_k, o_k, r_safe);
}

bool is_safe(const Eigen::Vector3d& x, const Eigen::Vector3d& o, double d_min, double R_o) {
  return clearance(x, o, d_min, R_o) >= 0.0;
}

BarrierEval evaluate(const std::string& point_id, const Eigen::Vector3d& x,
                     const Eigen::Vector3d& o, const SafetySpec& spec, double gamma) {
  const double h = clearance(x, o, spec.d_min, spec.R_o);
  return {point_id, h, h - spec.r_d, gamma};
}

}  // namespace fasm::cbf
