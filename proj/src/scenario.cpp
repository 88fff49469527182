#include "fasm/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fasm/cbf.hpp"
#include "fasm/errors.hpp"

namespace fasm::scenario {

namespace {

using nlohmann::json;

Eigen::Vector3d vec3(const json& j, double scale, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(what + " needs 3 numbers");
  return Eigen::Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>()) * scale;
}

Eigen::VectorXd vecn(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

// Scalar (times identity), diagonal vector, or full matrix.
Eigen::MatrixXd weight_matrix(const json& j, int dim, const std::string& what) {
  if (j.is_number()) return j.get<double>() * Eigen::MatrixXd::Identity(dim, dim);
  if (!j.is_array()) throw ConfigError(what + " must be a number, a diagonal or a matrix");
  if (j.size() != static_cast<std::size_t>(dim)) throw ConfigError(what + " has the wrong dimension");
  if (j[0].is_number()) return vecn(j, what).asDiagonal();
  Eigen::MatrixXd M(dim, dim);
  for (int r = 0; r < dim; ++r) {
    if (j[static_cast<std::size_t>(r)].size() != static_cast<std::size_t>(dim)) {
      throw ConfigError(what + " has the wrong dimension");
    }
    for (int c = 0; c < dim; ++c) M(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return M;
}

kinematics::Pose7 pose_from(const json& j, double scale) {
  const Eigen::VectorXd v = vecn(j, "reference pose");
  if (v.size() != 7) throw ConfigError("reference pose needs [x, y, z, qw, qx, qy, qz]");
  if (v.tail(4).norm() < 1e-12) throw ConfigError("reference quaternion has zero norm");
  kinematics::Pose7 p = kinematics::Pose7::from_vector(v);
  p.p *= scale;
  return kinematics::canonical(kinematics::normalized(p));
}

ObstacleSpec obstacle_from(const json& j, double scale) {
  ObstacleSpec o;
  o.shape = j.value("shape", std::string("sphere"));
  if (o.shape == "box") {
    o.dims = vec3(j.at("dims"), scale, "obstacle dims");
    if ((o.dims.array() < 0.0).any()) throw ConfigError("obstacle dims must be >= 0");
    o.radius = cbf::bounding_radius(o.dims);
  } else if (o.shape == "sphere") {
    o.radius = j.at("radius").get<double>() * scale;
    if (!(o.radius >= 0.0)) throw ConfigError("obstacle radius must be >= 0");
  } else {
    throw ConfigError("obstacle shape must be \"sphere\" or \"box\"");
  }
  o.start = vec3(j.at("start"), scale, "obstacle start");
  o.velocity = j.contains("velocity") ? vec3(j.at("velocity"), scale, "obstacle velocity")
                                      : Eigen::Vector3d::Zero();
  return o;
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

}  // namespace

double ScenarioConfig::r_d() const {
  if (r_d_fixed) return *r_d_fixed;
  return observer.delta * observer.certificate().phi0;
}

const kinematics::Pose7& ScenarioConfig::reference_at(double t) const {
  const Waypoint* active = &reference.front();
  for (const auto& w : reference) {
    if (w.start <= t + 1e-12) active = &w;
  }
  return active->pose;
}

std::size_t ScenarioConfig::num_steps() const {
  return static_cast<std::size_t>(std::max(1.0, std::round(duration / t_s)));
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("empty path segment in override key " + key);
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (const std::exception&) {
        throw ConfigError("override key " + key + " indexes an array with '" + part + "'");
      }
      if (idx >= node->size()) throw ConfigError("override index out of range in " + key);
      node = &(*node)[idx];
    } else {
      if (!node->is_object() && !node->is_null()) throw ConfigError("override key " + key + " descends into a scalar");
      node = &(*node)[part];
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  *node = parse_value(assignment.substr(eq + 1));
}

ScenarioConfig from_json(const json& doc, const std::filesystem::path& base_dir) {
  ScenarioConfig c;
  c.source = doc;
  try {
    double scale = 1.0;
    const std::string unit = doc.value("length_unit", std::string("m"));
    if (unit == "cm") {
      scale = 0.01;
    } else if (unit != "m") {
      throw ConfigError("length_unit must be \"m\" or \"cm\"");
    }

    c.name = doc.value("name", std::string("scenario"));
    c.chain_path = doc.at("chain").get<std::string>();
    if (c.chain_path.is_relative()) c.chain_path = base_dir / c.chain_path;
    if (!std::filesystem::exists(c.chain_path)) {
      throw ConfigError("chain file not found: " + c.chain_path.string());
    }
    c.chain = std::make_shared<const kinematics::KinematicChain>(kinematics::load_chain(c.chain_path.string()));
    const int n = static_cast<int>(c.chain->dof());
    const int n_points = static_cast<int>(c.chain->critical_points().size());

    c.t_s = doc.value("t_s", 0.04);
    if (!(c.t_s > 0.0)) throw ConfigError("t_s must be > 0");
    c.duration = doc.at("duration").get<double>();
    if (!(c.duration > 0.0)) throw ConfigError("duration must be > 0");
    c.seed = doc.value("seed", std::uint64_t{0});

    c.initial_joints = vecn(doc.at("initial_joints"), "initial_joints");
    if (c.initial_joints.size() != n) throw ConfigError("initial_joints needs one entry per joint");

    const json& ref = doc.at("reference");
    if (!ref.is_array() || ref.empty()) throw ConfigError("reference needs at least one waypoint");
    for (const auto& w : ref) {
      Waypoint wp;
      wp.pose = pose_from(w.at("pose"), scale);
      wp.start = w.value("start", 0.0);
      if (!c.reference.empty() && wp.start < c.reference.back().start) {
        throw ConfigError("reference waypoints must be ordered by start time");
      }
      c.reference.push_back(wp);
    }

    const json& ob = doc.at("observer");
    c.observer.m = ob.value("m", 3);
    c.observer.alphas = vecn(ob.at("alphas"), "observer.alphas");
    c.observer.t_s = c.t_s;
    c.observer.eta = ob.value("eta", 0.9999);
    c.observer.delta = ob.value("delta", 0.0) * scale;
    try {
      c.observer.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("observer: ") + e.what());
    }
    if (ob.contains("init") && !ob.at("init").is_string()) {
      const json& init = ob.at("init");
      if (init.size() != static_cast<std::size_t>(c.observer.m)) throw ConfigError("observer.init needs m rows");
      Eigen::MatrixX3d xi(c.observer.m, 3);
      for (int i = 0; i < c.observer.m; ++i) xi.row(i) = vec3(init[static_cast<std::size_t>(i)], scale, "observer.init row").transpose();
      c.observer_init = xi;
    } else if (ob.contains("init") && ob.at("init").get<std::string>() != "truth") {
      throw ConfigError("observer.init must be \"truth\" or a list of rows");
    }

    const json& sf = doc.at("safety");
    c.d_min = sf.value("d_min", 0.0) * scale;
    if (!(c.d_min >= 0.0)) throw ConfigError("safety.d_min must be >= 0");
    if (sf.contains("obstacle")) c.obstacles.push_back(obstacle_from(sf.at("obstacle"), scale));
    if (sf.contains("obstacles")) {
      for (const auto& o : sf.at("obstacles")) c.obstacles.push_back(obstacle_from(o, scale));
    }
    if (sf.contains("r_d_mode")) {
      const json& mode = sf.at("r_d_mode");
      if (mode.is_object()) {
        c.r_d_fixed = mode.at("fixed").get<double>() * scale;
        if (!(*c.r_d_fixed >= 0.0)) throw ConfigError("safety.r_d_mode.fixed must be >= 0");
      } else if (mode.get<std::string>() != "certificate") {
        throw ConfigError("safety.r_d_mode must be \"certificate\" or {\"fixed\": value}");
      }
    }

    if (doc.contains("measurement")) c.noise_std = doc.at("measurement").value("noise_std", 0.0) * scale;
    if (!(c.noise_std >= 0.0)) throw ConfigError("measurement.noise_std must be >= 0");

    const json& ct = doc.at("controller");
    mpc::ControllerSettings& s = c.controller;
    s.N = ct.value("N", 1);
    if (s.N < 1) throw ConfigError("controller.N must be >= 1");
    s.t_s = c.t_s;
    s.weights.Q = weight_matrix(ct.value("Q", json(2000.0)), 7, "controller.Q");
    s.weights.R = weight_matrix(ct.value("R", json(50.0)), n, "controller.R");
    s.weights.P_gamma = ct.value("P_gamma", 150.0);
    const json pj = ct.value("P_j", json(s.weights.P_gamma));
    if (pj.is_number()) {
      s.weights.P_j = Eigen::VectorXd::Constant(n_points, pj.get<double>());
    } else {
      s.weights.P_j = vecn(pj, "controller.P_j");
    }
    try {
      s.weights.validate(n, n_points);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("controller ") + e.what());
    }
    s.gamma_init = ct.value("gamma_init", 0.001);
    s.gamma_min = ct.value("gamma_min", cbf::kGammaMin);
    if (!(s.gamma_min > 0.0 && s.gamma_min <= 1.0)) throw ConfigError("controller.gamma_min must lie in (0, 1]");
    if (!(s.gamma_init > 0.0 && s.gamma_init <= 1.0)) throw ConfigError("controller.gamma_init must lie in (0, 1]");
    s.u_max = ct.value("u_max", 0.6);
    if (!(s.u_max >= 0.0)) throw ConfigError("controller.u_max must be >= 0");
    if (ct.contains("joint_limits")) {
      const json& jl = ct.at("joint_limits");
      if (jl.size() != static_cast<std::size_t>(n)) throw ConfigError("controller.joint_limits needs one [min, max] per joint");
      s.theta_box.lower.resize(n);
      s.theta_box.upper.resize(n);
      for (int i = 0; i < n; ++i) {
        s.theta_box.lower[i] = jl[static_cast<std::size_t>(i)].at(0).get<double>();
        s.theta_box.upper[i] = jl[static_cast<std::size_t>(i)].at(1).get<double>();
        if (s.theta_box.lower[i] > s.theta_box.upper[i]) throw ConfigError("controller.joint_limits has min > max");
      }
    } else {
      s.theta_box = c.chain->limits();
    }
    const std::string mode = ct.value("mode", std::string("fasm"));
    if (mode == "fasm") {
      s.mode = mpc::Mode::kFasm;
    } else if (mode == "baseline") {
      s.mode = mpc::Mode::kBaseline;
    } else {
      throw ConfigError("controller.mode must be \"fasm\" or \"baseline\"");
    }
    s.baseline_guards_points = ct.value("baseline_guards_points", false);
    s.solver.max_iter = ct.value("max_iter", 200);
    s.solver.feas_tol = ct.value("feas_tol", 1e-6);
    s.solver.opt_tol = ct.value("opt_tol", 1e-6);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  return c;
}

ScenarioConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("scenario file '" + path.string() + "': " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc, path.parent_path());
}

}  // namespace fasm::scenario
