#pragma once

#include <string>

#include <Eigen/Dense>

#include "fasm/kinematics.hpp"

namespace fasm::test {

inline std::string source_path(const std::string& rel) { return std::string(FASM_SOURCE_DIR) + "/" + rel; }

inline const kinematics::KinematicChain& ur5() {
  static const kinematics::KinematicChain chain = kinematics::load_chain(source_path("config/ur5.json"));
  return chain;
}

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace fasm::test
