#include "fasm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fasm/cbf.hpp"
#include "fasm/errors.hpp"
#include "fasm/observer.hpp"

namespace fasm::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

void put(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  out << buf;
}

double quaternion_error(const Eigen::Vector4d& q, const Eigen::Vector4d& s) {
  const Eigen::Vector4d aligned = q.dot(s) < 0.0 ? Eigen::Vector4d(-q) : q;
  return (aligned - s).cwiseAbs().maxCoeff();
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json optional_or_null(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

ObstacleTruth obstacle_truth(double t, const scenario::ObstacleSpec& spec) {
  return {spec.start + spec.velocity * t, spec.velocity};
}

std::string TrajectoryLog::csv_header(int dof) {
  std::ostringstream os;
  os << "k,t";
  for (int i = 1; i <= dof; ++i) os << ",theta_" << i;
  for (int i = 1; i <= dof; ++i) os << ",u_" << i;
  os << ",ee_x,ee_y,ee_z,ee_qw,ee_qx,ee_qy,ee_qz,obs_x,obs_y,obs_z,obs_hat_x,obs_hat_y,obs_hat_z,"
        "vhat_x,vhat_y,vhat_z,h_e,h_min_crit,gamma_e,gamma_j_min,cost,status,solve_ms";
  return os.str();
}

void TrajectoryLog::write_csv(std::ostream& out) const {
  out << csv_header(dof) << '\n';
  for (const auto& r : steps) {
    out << r.k << ',';
    put(out, r.t);
    for (int i = 0; i < dof; ++i) {
      out << ',';
      put(out, r.theta[i]);
    }
    for (int i = 0; i < dof; ++i) {
      out << ',';
      put(out, r.u[i]);
    }
    const double tail[] = {r.ee.p.x(),     r.ee.p.y(),     r.ee.p.z(),     r.ee.q[0],      r.ee.q[1],
                           r.ee.q[2],      r.ee.q[3],      r.obs.x(),      r.obs.y(),      r.obs.z(),
                           r.obs_hat.x(),  r.obs_hat.y(),  r.obs_hat.z(),  r.vhat.x(),     r.vhat.y(),
                           r.vhat.z(),     r.h_e,          r.h_min_crit,   r.gamma_e,      r.gamma_j_min,
                           r.cost};
    for (double v : tail) {
      out << ',';
      put(out, v);
    }
    out << ',' << mpc::to_string(r.status) << ',';
    put(out, r.solve_ms);
    out << '\n';
  }
}

std::string TrajectoryLog::csv() const {
  std::ostringstream os;
  write_csv(os);
  return os.str();
}

scenario::ScenarioConfig obstacle_free(const scenario::ScenarioConfig& config) {
  scenario::ScenarioConfig c = config;
  c.obstacles.clear();
  c.name = config.name + "_free";
  return c;
}

TrajectoryLog run_scenario(const scenario::ScenarioConfig& config, const RunOptions& options) {
  const kinematics::KinematicChain& chain = *config.chain;
  const int n = static_cast<int>(chain.dof());
  const mpc::ControllerSettings& settings = config.controller;
  const bool flexible = settings.mode == mpc::Mode::kFasm;

  TrajectoryLog log;
  log.name = config.name;
  log.mode = flexible ? "fasm" : "baseline";
  log.guards_points = flexible || settings.baseline_guards_points;
  log.dof = n;
  log.t_s = config.t_s;
  log.duration = config.duration;
  log.u_max = settings.u_max;
  const kinematics::JointLimits& box = settings.theta_box.empty() ? chain.limits() : settings.theta_box;
  log.theta_min = box.empty() ? Eigen::VectorXd::Constant(n, -kInf) : box.lower;
  log.theta_max = box.empty() ? Eigen::VectorXd::Constant(n, kInf) : box.upper;
  for (const auto& cp : chain.critical_points()) log.point_ids.push_back(cp.id);

  const double r_d = config.r_d();
  const observer::ObstacleModel model = observer::build_system(config.observer.m, config.t_s);
  std::vector<observer::GpioState> estimates;
  std::vector<cbf::SafetySpec> safety;
  for (const auto& ob : config.obstacles) {
    if (config.observer_init) {
      estimates.push_back({*config.observer_init, 0.0});
    } else {
      estimates.push_back(observer::truth_state(config.observer.m, ob.start, ob.velocity, 0.0));
    }
    safety.emplace_back(config.d_min, ob.radius, r_d);
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  kinematics::JointState state{config.initial_joints, 0.0};
  std::optional<mpc::MpcSolution> warm;
  const std::size_t steps = config.num_steps();
  log.steps.reserve(steps);

  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * config.t_s;
    state.t = t;

    std::vector<ObstacleTruth> truth;
    std::vector<Eigen::Vector3d> measured;
    std::vector<mpc::ObstacleInput> inputs;
    for (std::size_t o = 0; o < config.obstacles.size(); ++o) {
      truth.push_back(obstacle_truth(t, config.obstacles[o]));
      Eigen::Vector3d m = truth.back().position;
      if (config.noise_std > 0.0) {
        for (int a = 0; a < 3; ++a) m[a] += config.noise_std * noise(rng);
      }
      measured.push_back(m);
      inputs.push_back({estimates[o], model, safety[o]});
    }

    const kinematics::Pose7& reference = config.reference_at(t);
    const mpc::MpcProblem problem = mpc::build_problem(chain, state, reference, inputs, settings);
    if (problem.joints_pre_violated) spdlog::warn("{} step {}: joint state outside the joint box", config.name, k);
    if (problem.initially_unsafe) spdlog::debug("{} step {}: current state inside the enlarged radius", config.name, k);

    const auto t0 = std::chrono::steady_clock::now();
    const mpc::MpcSolution sol = flexible ? mpc::solve(problem, warm) : mpc::solve_baseline(problem, warm);
    const auto t1 = std::chrono::steady_clock::now();

    StepRecord rec;
    rec.k = static_cast<int>(k);
    rec.t = t;
    rec.theta = state.theta;
    rec.fallback = sol.status == mpc::SolveStatus::kInfeasible;
    rec.u = rec.fallback ? Eigen::VectorXd::Zero(n) : sol.first_action();
    if (rec.fallback) {
      spdlog::info("{} t={:.2f}: solver infeasible ({}), commanding zero velocity", config.name, t,
                   sol.most_violated.empty() ? "no constraint id" : sol.most_violated);
    } else if (sol.status == mpc::SolveStatus::kMaxIter) {
      spdlog::debug("{} t={:.2f}: solver hit the iteration budget", config.name, t);
    }
    rec.ee = kinematics::ee_pose(chain, state);
    rec.reference = kinematics::Pose7::from_vector(problem.reference);
    rec.points = kinematics::forward_points(chain, state);
    rec.h_e = kInf;
    rec.h_min_crit = kInf;
    rec.h_points.assign(rec.points.size(), kInf);
    for (std::size_t o = 0; o < truth.size(); ++o) {
      const double R_o = config.obstacles[o].radius;
      rec.h_e = std::min(rec.h_e, cbf::clearance(rec.ee.p, truth[o].position, config.d_min, R_o));
      for (std::size_t j = 0; j < rec.points.size(); ++j) {
        rec.h_points[j] = std::min(rec.h_points[j], cbf::clearance(rec.points[j], truth[o].position, config.d_min, R_o));
      }
    }
    for (double h : rec.h_points) rec.h_min_crit = std::min(rec.h_min_crit, h);
    if (!truth.empty()) {
      rec.obs = truth[0].position;
      rec.obs_hat = estimates[0].position();
      rec.vhat = estimates[0].velocity();
    }
    rec.gamma_e = sol.gamma_e;
    rec.gamma_j = sol.gamma_j;
    rec.gamma_j_min = sol.gamma_j.size() ? sol.gamma_j.minCoeff() : kNaN;
    rec.cost = sol.cost;
    rec.status = sol.status;
    if (options.record_timing) rec.solve_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    rec.any_active = sol.any_active();
    log.steps.push_back(std::move(rec));

    if (sol.status != mpc::SolveStatus::kInfeasible) {
      warm = sol.shifted();
    } else {
      warm.reset();
    }
    state = kinematics::integrate_joints(state, log.steps.back().u, config.t_s);
    for (std::size_t o = 0; o < estimates.size(); ++o) {
      estimates[o] = observer::gpio_step(estimates[o], measured[o], config.observer);
    }
  }
  return log;
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json j;
  j["min_clearance"] = number_or_null(min_clearance);
  j["min_guarded_clearance"] = number_or_null(min_guarded_clearance);
  j["highest_altitude"] = highest_altitude;
  j["trigger_moment"] = optional_or_null(trigger_moment);
  j["activation_moment"] = optional_or_null(activation_moment);
  j["max_gamma"] = number_or_null(max_gamma);
  j["final_position_error"] = final_position_error;
  j["final_quaternion_error"] = final_quaternion_error;
  j["collision"] = collision;
  j["infeasible_steps"] = infeasible_steps;
  j["max_iter_steps"] = max_iter_steps;
  j["all_optimal"] = all_optimal;
  j["max_abs_u"] = max_abs_u;
  j["joints_in_box"] = joints_in_box;
  return j;
}

Metrics compute_metrics(const TrajectoryLog& log) {
  if (log.steps.empty()) throw std::invalid_argument("compute_metrics: empty log");
  Metrics m;
  m.min_clearance = kInf;
  m.min_guarded_clearance = kInf;
  m.highest_altitude = -kInf;
  m.max_gamma = kNaN;
  for (const auto& r : log.steps) {
    m.min_clearance = std::min({m.min_clearance, r.h_e, r.h_min_crit});
    m.min_guarded_clearance = std::min({m.min_guarded_clearance, r.h_e, log.guards_points ? r.h_min_crit : kInf});
    m.highest_altitude = std::max(m.highest_altitude, r.ee.p.z());
    if (!m.activation_moment && r.any_active) m.activation_moment = r.t;
    if (std::isfinite(r.gamma_e)) m.max_gamma = std::isnan(m.max_gamma) ? r.gamma_e : std::max(m.max_gamma, r.gamma_e);
    if (r.status == mpc::SolveStatus::kInfeasible) ++m.infeasible_steps;
    if (r.status == mpc::SolveStatus::kMaxIter) ++m.max_iter_steps;
    m.max_abs_u = std::max(m.max_abs_u, r.u.size() ? r.u.cwiseAbs().maxCoeff() : 0.0);
    if (log.theta_min.size() == r.theta.size()) {
      if (((r.theta - log.theta_min).array() < 0.0).any() || ((log.theta_max - r.theta).array() < 0.0).any()) {
        m.joints_in_box = false;
      }
    }
  }
  m.all_optimal = m.infeasible_steps == 0 && m.max_iter_steps == 0;
  m.collision = m.min_clearance < 0.0;
  const StepRecord& last = log.steps.back();
  m.final_position_error = (last.ee.p - last.reference.p).norm();
  m.final_quaternion_error = quaternion_error(last.ee.q, last.reference.q);
  return m;
}

void attach_twin(Metrics& metrics, const TrajectoryLog& log, const TrajectoryLog& twin, double threshold) {
  metrics.trigger_moment.reset();
  const std::size_t count = std::min(log.steps.size(), twin.steps.size());
  for (std::size_t k = 0; k < count; ++k) {
    if ((log.steps[k].ee.p - twin.steps[k].ee.p).norm() > threshold) {
      metrics.trigger_moment = log.steps[k].t;
      return;
    }
  }
}

RunResult run_with_metrics(const scenario::ScenarioConfig& config, const RunOptions& options) {
  RunResult r;
  r.name = config.name;
  r.log = run_scenario(config, options);
  r.metrics = compute_metrics(r.log);
  if (!config.obstacles.empty()) {
    const TrajectoryLog twin = run_scenario(obstacle_free(config), options);
    attach_twin(r.metrics, r.log, twin);
  }
  return r;
}

std::vector<RunResult> compare_runs(const std::vector<scenario::ScenarioConfig>& configs, const RunOptions& options) {
  for (const auto& c : configs) {
    if (std::abs(c.t_s - configs.front().t_s) > 1e-15 || std::abs(c.duration - configs.front().duration) > 1e-12) {
      throw ConfigError("compare: runs must share t_s and duration");
    }
  }
  std::vector<std::future<RunResult>> jobs;
  jobs.reserve(configs.size());
  for (const auto& c : configs) {
    jobs.push_back(std::async(std::launch::async, [&c, &options] { return run_with_metrics(c, options); }));
  }
  std::vector<RunResult> out;
  out.reserve(jobs.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

nlohmann::json comparison_table(const std::vector<RunResult>& runs) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json row = r.metrics.to_json();
    row["name"] = r.name;
    row["mode"] = r.log.mode;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace fasm::harness
