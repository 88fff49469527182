#pragma once

#include <string>

#include <Eigen/Dense>

namespace fasm::cbf {

/// Lower end of the decay-rate interval used by the solver; the open bound 0 < gamma
/// is closed off at this value.
inline constexpr double kGammaMin = 1e-4;

/// Radius of the sphere circumscribing an axis-aligned box with the given edge lengths.
double bounding_radius(const Eigen::Vector3d& box_dims);

/// r_safe = d_min + R_o + r_d
double safe_radius(double d_min, double R_o, double r_d);

struct SafetySpec {
  double d_min = 0.0;  // m
  double R_o = 0.0;    // obstacle bounding radius, m
  double r_d = 0.0;    // tolerance distance for estimation error, m

  SafetySpec() = default;
  /// Throws std::invalid_argument when any field is negative.
  SafetySpec(double d_min, double R_o, double r_d);

  double r_safe() const { return safe_radius(d_min, R_o, r_d); }
};

/// True clearance h = ||x - o|| - d_min - R_o.
double clearance(const Eigen::Vector3d& x, const Eigen::Vector3d& o, double d_min, double R_o);

/// Surplus distance H = ||x - o|| - r_safe; negative inside the enlarged sphere.
double surplus_distance(const Eigen::Vector3d& x, const Eigen::Vector3d& o, double r_safe);

/// H(x_{k+1}, o_hat_{k+1}) - (1 - gamma) * H(x_k, o_k); the criterion holds iff >= 0.
/// Throws std::invalid_argument for gamma outside (0, 1].
double cbfsc_residual(const Eigen::Vector3d& x_k, const Eigen::Vector3d& x_k1,
                      const Eigen::Vector3d& o_k, const Eigen::Vector3d& o_hat_k1,
                      double r_safe, double gamma);

bool is_safe(const Eigen::Vector3d& x, const Eigen::Vector3d& o, double d_min, double R_o);

struct BarrierEval {
  std::string point_id;
  double h = 0.0;
  double H = 0.0;
  double gamma = 0.0;
};

BarrierEval evaluate(const std::string& point_id, const Eigen::Vector3d& x,
                     const Eigen::Vector3d& o, const SafetySpec& spec, double gamma = 0.0);

}  // namespace fasm::cbf
