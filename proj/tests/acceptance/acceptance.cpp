// Exit criteria. Prints one line per criterion; with a number as the only argument runs that one.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "fasm/cbf.hpp"
#include "fasm/harness.hpp"
#include "fasm/kinematics.hpp"
#include "fasm/mpc.hpp"
#include "fasm/observer.hpp"
#include "fasm/scenario.hpp"

using namespace fasm;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string source(const std::string& rel) { return std::string(FASM_SOURCE_DIR) + "/" + rel; }

const std::vector<std::string> kShipped = {"fast_small_fasm_n1", "fast_small_baseline_n1", "fast_small_baseline_n7",
                                           "slow_small_fasm", "fast_large_fasm"};

scenario::ScenarioConfig shipped(const std::string& name, const std::vector<std::string>& overrides = {}) {
  return scenario::load(source("scenarios/" + name + ".json"), overrides);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt("%.2f", *v) : "none"; }

observer::GpioConfig experiment_gains() {
  observer::GpioConfig g;
  g.m = 3;
  g.alphas = Eigen::Vector3d(5.0, 10.0, 2.0);
  g.t_s = 0.04;
  g.eta = 0.9999;
  g.delta = 0.001;
  return g;
}

Verdict certificate() {
  const auto t0 = Clock::now();
  const auto g = experiment_gains();
  const double rho = observer::spectral_radius(observer::build_phi(g.alphas, g.t_s));
  const auto cert = g.certificate();
  const double phi0_printed = std::sqrt(91.68 / 3.23);
  const double rel = std::abs(phi0_printed - 5.33) / 5.33;
  const double dt = seconds_since(t0);
  std::ostringstream d;
  d << "rho=" << fmt("%.6f", rho) << " c1=" << fmt("%.4f", cert.c1) << " c2=" << fmt("%.3f", cert.c2)
    << " phi0=" << fmt("%.4f", cert.phi0) << " sqrt(91.68/3.23)=" << fmt("%.4f", phi0_printed)
    << " rel_err=" << fmt("%.2e", rel) << " t=" << fmt("%.3fs", dt);
  return {rho < 1.0 && rel < 0.01 && dt < 1.0, d.str()};
}

Verdict error_bound() {
  const auto t0 = Clock::now();
  const auto g = experiment_gains();
  const auto cert = g.certificate();
  const auto sys = observer::build_system(g.m, g.t_s);
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int violations = 0;
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixX3d D(3, 3), E(3, 3);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        D(r, c) = normal(rng) * (r == 0 ? 1.0 : r == 1 ? 0.2 : 0.05);
        E(r, c) = normal(rng);
      }
    }
    E *= g.delta * unit(rng) / E.norm();
    observer::GpioState s;
    s.xi = D - E;
    for (int k = 1; k <= 1000; ++k) {
      s = observer::gpio_step(s, D.row(0).transpose(), g);
      D = sys.A * D;
      const double err = (D - s.xi).norm();
      const double bound = observer::error_bound(cert, k, g.delta);
      worst_ratio = std::max(worst_ratio, err / bound);
      if (err > bound) ++violations;
    }
  }
  const double dt = seconds_since(t0);
  return {violations == 0 && dt < 5.0, "violations=" + std::to_string(violations) + " worst ||E_k||/bound=" +
                                           fmt("%.3f", worst_ratio) + " t=" + fmt("%.3fs", dt)};
}

Verdict jacobians() {
  const auto t0 = Clock::now();
  const auto chain = kinematics::load_chain(source("config/ur5.json"));
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(-M_PI, M_PI);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd th(6);
    for (int i = 0; i < 6; ++i) th[i] = dist(rng);
    const kinematics::JointState s{th};
    const Eigen::Vector4d q0 = kinematics::ee_pose(chain, s).q;
    const auto Je = kinematics::ee_jacobian(chain, s);
    std::vector<Eigen::MatrixXd> Jp;
    for (const auto& cp : chain.critical_points()) Jp.push_back(kinematics::point_jacobian(chain, s, cp.id));
    for (int i = 0; i < 6; ++i) {
      kinematics::JointState sp = s, sm = s;
      sp.theta[i] += h;
      sm.theta[i] -= h;
      const auto pp = kinematics::forward_points(chain, sp), pm = kinematics::forward_points(chain, sm);
      for (std::size_t j = 0; j < pp.size(); ++j) {
        worst = std::max(worst, (Jp[j].col(i) - (pp[j] - pm[j]) / (2 * h)).cwiseAbs().maxCoeff());
      }
      auto ep = kinematics::ee_pose(chain, sp).vector();
      auto em = kinematics::ee_pose(chain, sm).vector();
      if (ep.tail<4>().dot(q0) < 0) ep.tail<4>() *= -1.0;
      if (em.tail<4>().dot(q0) < 0) em.tail<4>() *= -1.0;
      worst = std::max(worst, (Je.col(i) - (ep - em) / (2 * h)).cwiseAbs().maxCoeff());
    }
  }
  const double dt = seconds_since(t0);
  return {worst < 1e-5 && dt < 5.0, "max |analytic - central FD|=" + fmt("%.2e", worst) + " t=" + fmt("%.3fs", dt)};
}

Verdict solver_oracle() {
  const auto t0 = Clock::now();
  const auto cfg = shipped("fast_small_fasm_n1");
  const kinematics::JointState state{cfg.initial_joints};
  auto ref = kinematics::ee_pose(*cfg.chain, state);
  ref.p += Eigen::Vector3d(0.01, -0.005, 0.004);
  mpc::ObstacleInput far{observer::truth_state(3, Eigen::Vector3d(5, 5, 5), Eigen::Vector3d::Zero()),
                         observer::build_system(3, cfg.t_s), cbf::SafetySpec(cfg.d_min, cfg.obstacles[0].radius, cfg.r_d())};
  const auto p = mpc::build_problem(*cfg.chain, state, ref, {far}, cfg.controller);
  const auto sol = mpc::solve(p);

  const Eigen::MatrixXd K = p.t_s * p.J_e;
  const Eigen::MatrixXd lhs = K.transpose() * p.weights.Q * K + p.weights.R;
  const Eigen::VectorXd u_ls = lhs.ldlt().solve(-K.transpose() * p.weights.Q * (p.x_e0 - p.reference));
  const double diff = std::max((sol.first_action() - u_ls).cwiseAbs().maxCoeff(), sol.u_seq.row(1).cwiseAbs().maxCoeff());
  const double dt = seconds_since(t0);
  const bool ok = sol.status == mpc::SolveStatus::kOptimal && diff <= 1e-6 && dt < 1.0;
  return {ok, "status=" + mpc::to_string(sol.status) + " max componentwise diff=" + fmt("%.2e", diff) +
                  " t=" + fmt("%.3fs", dt)};
}

Verdict experiment1() {
  const auto t0 = Clock::now();
  const auto runs = harness::compare_runs(
      {shipped("fast_small_baseline_n1"), shipped("fast_small_fasm_n1"), shipped("fast_small_baseline_n7")});
  const double dt = seconds_since(t0);
  const auto& b1 = runs[0].metrics;
  const auto& f1 = runs[1].metrics;
  const auto& b7 = runs[2].metrics;
  const bool ok = b1.collision && !f1.collision && f1.min_clearance >= 0.0 && !b7.collision && dt < 60.0;
  std::ostringstream d;
  d << "baseline N=1 collision=" << b1.collision << " (min h=" << fmt("%.4f", b1.min_clearance) << ")"
    << "; FASM N=1 collision=" << f1.collision << " (min h=" << fmt("%.4f", f1.min_clearance) << ")"
    << "; baseline N=7 collision=" << b7.collision << " (min h=" << fmt("%.4f", b7.min_clearance) << ")"
    << " t=" << fmt("%.2fs", dt);
  return {ok, d.str()};
}

bool strictly(const std::vector<double>& v, bool increasing) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (increasing ? !(v[i] > v[i - 1]) : !(v[i] < v[i - 1])) return false;
  }
  return true;
}

std::vector<harness::RunResult> p_gamma_sweep() {
  std::vector<scenario::ScenarioConfig> cfgs;
  for (const char* p : {"150", "1000", "2000"}) cfgs.push_back(shipped("slow_small_fasm", {std::string("controller.P_gamma=") + p}));
  return harness::compare_runs(cfgs);
}

Verdict experiment2() {
  const auto t0 = Clock::now();
  const auto runs = p_gamma_sweep();
  const double dt = seconds_since(t0);
  std::vector<double> trigger, altitude, gamma;
  bool all_triggered = true;
  for (const auto& r : runs) {
    all_triggered = all_triggered && r.metrics.trigger_moment.has_value();
    trigger.push_back(r.metrics.trigger_moment.value_or(NAN));
    altitude.push_back(r.metrics.highest_altitude);
    gamma.push_back(r.metrics.max_gamma);
  }
  const bool t_ok = all_triggered && strictly(trigger, false);
  const bool a_ok = strictly(altitude, true);
  const bool g_ok = strictly(gamma, false);
  std::ostringstream d;
  d << "trigger_moment=[" << opt(runs[0].metrics.trigger_moment) << ", " << opt(runs[1].metrics.trigger_moment) << ", "
    << opt(runs[2].metrics.trigger_moment) << "]" << (t_ok ? "" : " (not strictly decreasing)") << " highest_altitude=["
    << fmt("%.4f", altitude[0]) << ", " << fmt("%.4f", altitude[1]) << ", " << fmt("%.4f", altitude[2]) << "]"
    << " max_gamma_e=[" << fmt("%.4f", gamma[0]) << ", " << fmt("%.4f", gamma[1]) << ", " << fmt("%.4f", gamma[2])
    << "] t=" << fmt("%.2fs", dt);
  return {t_ok && a_ok && g_ok && dt < 90.0, d.str()};
}

// Minimum over the barriers each controller constrains; the unguarded physical minimum is printed too.
Verdict invariance() {
  const auto t0 = Clock::now();
  std::vector<scenario::ScenarioConfig> cfgs;
  for (const auto& n : kShipped) cfgs.push_back(shipped(n));
  int counted = 0;
  double lowest = INFINITY;
  std::string where;
  std::ostringstream physical;
  for (const auto& cfg : cfgs) {
    const auto m = harness::compute_metrics(harness::run_scenario(cfg));
    if (!m.all_optimal) continue;
    ++counted;
    if (m.min_guarded_clearance < lowest) {
      lowest = m.min_guarded_clearance;
      where = cfg.name;
    }
    if (m.min_clearance < m.min_guarded_clearance) physical << " " << cfg.name << "=" << fmt("%.4f", m.min_clearance);
  }
  const double dt = seconds_since(t0);
  const std::string unguarded = physical.str().empty() ? "" : "; unguarded points min h:" + physical.str();
  return {counted > 0 && lowest >= -1e-6 && dt < 120.0,
          std::to_string(counted) + "/" + std::to_string(cfgs.size()) + " scenarios all-optimal, min h over barriers=" +
              fmt("%.5f", lowest) + " (" + where + ")" + unguarded + " t=" + fmt("%.2fs", dt)};
}

// Scans the written log text, not the in-memory records.
Verdict tracking() {
  double worst_p = 0.0, worst_q = 0.0, worst_u = 0.0;
  bool in_box = true;
  for (const auto& name : kShipped) {
    const auto cfg = shipped(name);
    const auto log = harness::run_scenario(cfg);
    std::istringstream in(log.csv());
    std::string line;
    std::getline(in, line);
    std::vector<double> last;
    while (std::getline(in, line)) {
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
      const int n = log.dof;
      for (int i = 0; i < n; ++i) {
        const double th = row[2 + i];
        worst_u = std::max(worst_u, std::abs(row[2 + n + i]));
        if (th < log.theta_min[i] - 1e-9 || th > log.theta_max[i] + 1e-9) in_box = false;
      }
      last = row;
    }
    const int e = 2 + 2 * log.dof;
    const double t_end = log.steps.back().t;
    const auto& ref = cfg.reference_at(t_end);
    const Eigen::Vector3d p(last[e], last[e + 1], last[e + 2]);
    Eigen::Vector4d q(last[e + 3], last[e + 4], last[e + 5], last[e + 6]);
    if (q.dot(ref.q) < 0) q = -q;
    worst_p = std::max(worst_p, (p - ref.p).norm());
    worst_q = std::max(worst_q, (q - ref.q).cwiseAbs().maxCoeff());
  }
  const bool ok = worst_p < 5e-3 && worst_q < 1e-2 && worst_u <= 0.6 + 1e-9 && in_box;
  return {ok, "worst final position error=" + fmt("%.4f m", worst_p) + " quaternion error=" + fmt("%.2e", worst_q) +
                  " max|u|=" + fmt("%.6f", worst_u) + " theta in box=" + (in_box ? "yes" : "no")};
}

Verdict cbfsc_algebra() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> pos(-1.0, 1.0), rad(0.0, 0.5), gam(1e-6, 1.0);
  auto point = [&] { return Eigen::Vector3d(pos(rng), pos(rng), pos(rng)); };
  int f_unit = 0, f_mono = 0, f_id = 0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d xk = point(), xk1 = point(), ok = point(), ok1 = point();
    const double r_safe = rad(rng) + 0.05;
    if (std::abs(cbf::cbfsc_residual(xk, xk1, ok, ok1, r_safe, 1.0) - cbf::surplus_distance(xk1, ok1, r_safe)) > 1e-15) {
      ++f_unit;
    }
  }
  for (int i = 0; i < 10000; ++i) {
    Eigen::Vector3d xk = point(), xk1 = point(), ok = point(), ok1 = point();
    const double r_safe = rad(rng);
    // keep H(x_k) >= 0
    if (cbf::surplus_distance(xk, ok, r_safe) < 0.0) xk = ok + (xk - ok).normalized() * (r_safe + rad(rng));
    double g1 = gam(rng), g2 = gam(rng);
    if (g1 > g2) std::swap(g1, g2);
    if (cbf::cbfsc_residual(xk, xk1, ok, ok1, r_safe, g1) > cbf::cbfsc_residual(xk, xk1, ok, ok1, r_safe, g2) + 1e-15) {
      ++f_mono;
    }
  }
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d x = point(), o = point();
    const double d_min = 0.1 * rad(rng), R_o = rad(rng), r_d = 0.1 * rad(rng);
    const auto e = cbf::evaluate("p", x, o, cbf::SafetySpec(d_min, R_o, r_d));
    if (std::abs(e.H - (e.h - r_d)) > 1e-12 ||
        std::abs(e.H - cbf::surplus_distance(x, o, cbf::safe_radius(d_min, R_o, r_d))) > 1e-12) {
      ++f_id;
    }
  }
  const double dt = seconds_since(t0);
  return {f_unit + f_mono + f_id == 0 && dt < 5.0,
          "failures: unit-rate=" + std::to_string(f_unit) + " monotone=" + std::to_string(f_mono) +
              " H=h-r_d=" + std::to_string(f_id) + " (10000 cases each) t=" + fmt("%.3fs", dt)};
}

Verdict determinism() {
  bool same = true;
  std::size_t bytes = 0;
  for (const auto& overrides : std::vector<std::vector<std::string>>{{"seed=3"}, {"seed=3", "measurement.noise_std=0.0005"}}) {
    const auto cfg = shipped("fast_small_fasm_n1", overrides);
    const std::string a = harness::run_scenario(cfg).csv();
    const std::string b = harness::run_scenario(cfg).csv();
    same = same && a == b;
    bytes += a.size();
  }
  return {same, std::string(same ? "byte-identical" : "logs differ") + " over 2 configurations (" +
                    std::to_string(bytes) + " bytes per pass)"};
}

// First solver activation, printed next to criterion 6 for comparison; it is not part of the check.
std::string activation_note() {
  const auto runs = p_gamma_sweep();
  return "first active criterion at t=[" + opt(runs[0].metrics.activation_moment) + ", " +
         opt(runs[1].metrics.activation_moment) + ", " + opt(runs[2].metrics.activation_moment) + "]";
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria = {
      {1, {"observer certificate", certificate}},
      {2, {"estimation error bound", error_bound}},
      {3, {"jacobian correctness", jacobians}},
      {4, {"solver oracle equivalence", solver_oracle}},
      {5, {"fast obstacle comparison", experiment1}},
      {6, {"decay-rate penalty trends", experiment2}},
      {7, {"safe-set invariance", invariance}},
      {8, {"tracking and constraints", tracking}},
      {9, {"criterion algebra", cbfsc_algebra}},
      {10, {"determinism", determinism}},
  };
  std::vector<int> selected;
  if (argc > 1) {
    selected.push_back(std::atoi(argv[1]));
    if (!criteria.count(selected.front())) {
      std::cerr << "unknown criterion " << argv[1] << '\n';
      return 2;
    }
  } else {
    for (const auto& [k, v] : criteria) selected.push_back(k);
  }
  int failed = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << "criterion " << id << " [" << (v.pass ? "PASS" : "FAIL") << "] " << name << ": " << v.detail << '\n';
    if (id == 6) std::cout << "  note: " << activation_note() << '\n';
  }
  std::cout << (selected.size() - failed) << "/" << selected.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
