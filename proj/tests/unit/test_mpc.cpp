#include <chrono>
#include <random>

#include "common.hpp"
#include "doctest.h"
#include "fasm/cbf.hpp"
#include "fasm/mpc.hpp"
#include "fasm/observer.hpp"

using namespace fasm;

namespace {

const Eigen::VectorXd& theta_a() {
  static const Eigen::VectorXd th = test::vec({0.37762509116394494, 0.6851899568272274, -0.28311327709563483,
                                               -0.4010208556471821, -0.05250475558658878, 0.0030701014478731192});
  return th;
}

mpc::ControllerSettings settings(int N, double p_gamma = 150.0) {
  mpc::ControllerSettings s;
  s.N = N;
  s.weights = mpc::Weights::uniform(2000.0, 50.0, p_gamma, p_gamma, 6, 6);
  s.theta_box = test::ur5().limits();
  return s;
}

mpc::ObstacleInput obstacle(const Eigen::Vector3d& pos, const Eigen::Vector3d& vel) {
  return {observer::truth_state(3, pos, vel), observer::build_system(3, 0.04),
          cbf::SafetySpec(0.001, cbf::bounding_radius(Eigen::Vector3d::Constant(0.1)), 0.005)};
}

mpc::ObstacleInput far_obstacle() { return obstacle(Eigen::Vector3d(5, 5, 5), Eigen::Vector3d::Zero()); }

kinematics::Pose7 shifted_pose(const Eigen::Vector3d& dp) {
  auto pose = kinematics::ee_pose(test::ur5(), {theta_a()});
  pose.p += dp;
  return pose;
}

// Normal equations of ||e0 + t_s J u||_Q^2 + ||u||_R^2.
Eigen::VectorXd least_squares(const mpc::MpcProblem& p) {
  const Eigen::MatrixXd K = p.t_s * p.J_e;
  const Eigen::VectorXd e0 = p.x_e0 - p.reference;
  const Eigen::MatrixXd lhs = K.transpose() * p.weights.Q * K + p.weights.R;
  return lhs.ldlt().solve(-K.transpose() * p.weights.Q * e0);
}

}  // namespace

TEST_CASE("stage cost") {
  auto w = mpc::Weights::uniform(2000.0, 50.0, 150.0, 150.0, 6, 0);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(7);
  e[0] = 0.06;
  e[1] = 0.08;
  const Eigen::VectorXd s = Eigen::VectorXd::Zero(7);
  const Eigen::VectorXd none(0);
  CHECK(mpc::stage_cost(e, Eigen::VectorXd::Zero(6), 0.001, none, s, w) == doctest::Approx(20.00015));
  CHECK(mpc::stage_cost(s, Eigen::VectorXd::Zero(6), 0.0, none, s, w) == 0.0);
  const Eigen::VectorXd u = test::vec({0.1, -0.2, 0.3, 0.0, 0.1, 0.05});
  const double r1 = mpc::stage_cost(s, u, 0.0, none, s, w);
  const double r2 = mpc::stage_cost(s, 2.0 * u, 0.0, none, s, w);
  CHECK(r2 == doctest::Approx(4.0 * r1));
  CHECK_THROWS_AS(mpc::stage_cost(s, u, 0.0, test::vec({0.1}), s, w), std::invalid_argument);
}

TEST_CASE("weights validation") {
  auto w = mpc::Weights::uniform(2000.0, 50.0, 150.0, 150.0, 6, 6);
  CHECK_NOTHROW(w.validate(6, 6));
  CHECK_THROWS_AS(w.validate(5, 6), std::invalid_argument);
  w.P_gamma = 0.0;
  CHECK_THROWS_AS(w.validate(6, 6), std::invalid_argument);
  w = mpc::Weights::uniform(2000.0, 50.0, 150.0, 150.0, 6, 6);
  w.R(0, 0) = -1.0;
  CHECK_THROWS_AS(w.validate(6, 6), std::invalid_argument);
}

TEST_CASE("problem dimensions") {
  const auto p1 = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {far_obstacle()}, settings(1));
  CHECK(p1.num_variables() == 19);
  CHECK(p1.num_cbfsc() == 14);
  CHECK(p1.obstacles[0].predicted.size() == 3);
  const auto p7 = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {far_obstacle()}, settings(7));
  CHECK(p7.num_variables() == 8 * 6 + 7);
  CHECK(p7.num_cbfsc() == 8 * 7);
  const auto p0 = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {}, settings(1));
  CHECK(p0.num_cbfsc() == 0);
}

TEST_CASE("problem construction flags and errors") {
  Eigen::VectorXd th = theta_a();
  th[4] = 0.3;  // fifth joint outside [-2, 0]
  const auto p = mpc::build_problem(test::ur5(), {th}, shifted_pose({0, 0, 0}), {far_obstacle()}, settings(1));
  CHECK(p.joints_pre_violated);

  const Eigen::Vector3d ee = kinematics::ee_pose(test::ur5(), {theta_a()}).p;
  const auto inside = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}),
                                         {obstacle(ee + Eigen::Vector3d(0, 0.05, 0), Eigen::Vector3d::Zero())}, settings(1));
  CHECK(inside.initially_unsafe);

  auto wrong_rate = far_obstacle();
  wrong_rate.model = observer::build_system(3, 0.01);
  CHECK_THROWS_AS(mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {wrong_rate}, settings(1)),
                  std::invalid_argument);
  auto bad = settings(1);
  bad.N = 0;
  CHECK_THROWS_AS(mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {}, bad), std::invalid_argument);
}

TEST_CASE("far obstacle: solution equals the least-squares minimizer") {
  const auto start = std::chrono::steady_clock::now();
  const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0.01, -0.005, 0.004}), {far_obstacle()},
                                    settings(1));
  const auto sol = mpc::solve(p);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(elapsed < 1.0);
  REQUIRE(sol.status == mpc::SolveStatus::kOptimal);
  const Eigen::VectorXd u_ls = least_squares(p);
  CHECK((sol.first_action() - u_ls).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(sol.u_seq.row(1).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(sol.gamma_e == doctest::Approx(p.gamma_min));
  CHECK_FALSE(sol.any_active());

  const auto base = mpc::solve_baseline(p);
  REQUIRE(base.status == mpc::SolveStatus::kOptimal);
  CHECK((base.u_seq - sol.u_seq).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("reference at the current pose: zero motion and minimal decay rates") {
  for (int N : {1, 3}) {
    const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {far_obstacle()}, settings(N));
    const auto sol = mpc::solve(p);
    REQUIRE(sol.status == mpc::SolveStatus::kOptimal);
    CHECK(sol.u_seq.cwiseAbs().maxCoeff() < 1e-9);
    CHECK(sol.gamma_e == doctest::Approx(p.gamma_min));
    CHECK(sol.gamma_j.minCoeff() == doctest::Approx(p.gamma_min));
    const double expected = (N + 1) * (150.0 + 6 * 150.0) * p.gamma_min * p.gamma_min;
    CHECK(sol.cost == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("zero velocity bound freezes the arm") {
  auto s = settings(1);
  s.u_max = 0.0;
  const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0.1, 0.1, 0.0}), {far_obstacle()}, s);
  const auto sol = mpc::solve(p);
  REQUIRE(sol.status == mpc::SolveStatus::kOptimal);
  CHECK(sol.u_seq.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("optimal solutions near an approaching obstacle satisfy every constraint") {
  const Eigen::Vector3d ee = kinematics::ee_pose(test::ur5(), {theta_a()}).p;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> off(0.12, 0.3), spd(0.05, 0.3);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const double d = off(rng), v = spd(rng);
    const int N = 1 + trial % 4;
    const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({-0.04, -0.3, 0.03}),
                                      {obstacle(ee + Eigen::Vector3d(0, -d, 0), Eigen::Vector3d(0, v, 0))},
                                      settings(N));
    if (p.initially_unsafe) continue;
    const auto sol = mpc::solve(p);
    if (sol.status != mpc::SolveStatus::kOptimal) continue;
    ++checked;
    const Eigen::VectorXd z = mpc::pack(p, sol);
    CHECK(mpc::fasm_residuals(p, z).minCoeff() >= -1e-6);
    CHECK(sol.u_seq.cwiseAbs().maxCoeff() <= p.u_max + 1e-9);
    CHECK(sol.gamma_e >= p.gamma_min - 1e-9);
    CHECK(sol.gamma_e <= 1.0 + 1e-9);
    CHECK(mpc::fasm_cost(p, z) == doctest::Approx(sol.cost).epsilon(1e-9));
    Eigen::VectorXd th = p.theta_k;
    for (int i = 0; i <= N; ++i) {
      th += p.t_s * sol.u_seq.row(i).transpose();
      CHECK(((th - p.theta_min).array() >= -1e-9).all());
      CHECK(((p.theta_max - th).array() >= -1e-9).all());
    }
  }
  CHECK(checked >= 15);
}

TEST_CASE("argmin is invariant to a common weight scale") {
  const Eigen::Vector3d ee = kinematics::ee_pose(test::ur5(), {theta_a()}).p;
  const auto obs = obstacle(ee + Eigen::Vector3d(0, -0.2, 0), Eigen::Vector3d(0, 0.145, 0));
  auto s = settings(2);
  const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({-0.04, -0.3, 0.03}), {obs}, s);
  s.weights = s.weights.scaled(10.0);
  const auto q = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({-0.04, -0.3, 0.03}), {obs}, s);
  const auto a = mpc::solve(p), b = mpc::solve(q);
  REQUIRE(a.status == mpc::SolveStatus::kOptimal);
  REQUIRE(b.status == mpc::SolveStatus::kOptimal);
  CHECK((a.u_seq - b.u_seq).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(b.gamma_e == doctest::Approx(a.gamma_e).epsilon(1e-4));
  CHECK(b.cost == doctest::Approx(10.0 * a.cost).epsilon(1e-5));
}

TEST_CASE("solver never ends above a feasible warm start") {
  const Eigen::Vector3d ee = kinematics::ee_pose(test::ur5(), {theta_a()}).p;
  const auto obs = obstacle(ee + Eigen::Vector3d(0, -0.25, 0), Eigen::Vector3d(0, 0.145, 0));
  const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({-0.04, -0.3, 0.03}), {obs}, settings(3));
  const auto first = mpc::solve(p);
  REQUIRE(first.status == mpc::SolveStatus::kOptimal);
  const auto warm = first.shifted();
  CHECK(warm.u_seq.rows() == first.u_seq.rows());
  CHECK((warm.u_seq.row(0) - first.u_seq.row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((warm.u_seq.row(3) - first.u_seq.row(3)).cwiseAbs().maxCoeff() == 0.0);

  const Eigen::VectorXd z = mpc::pack(p, warm);
  const auto again = mpc::solve(p, warm);
  REQUIRE(again.status == mpc::SolveStatus::kOptimal);
  if (mpc::fasm_residuals(p, z).minCoeff() >= 0.0) CHECK(again.cost <= mpc::fasm_cost(p, z) + 1e-9);
  CHECK(again.cost == doctest::Approx(first.cost).epsilon(1e-6));
}

TEST_CASE("baseline rows imply the flexible criterion at unit decay rate") {
  const Eigen::Vector3d ee = kinematics::ee_pose(test::ur5(), {theta_a()}).p;
  const auto obs = obstacle(ee + Eigen::Vector3d(0, -0.25, 0), Eigen::Vector3d(0, 0.145, 0));
  const int N = 3;
  const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {obs}, settings(N));
  const int B = p.num_barriers();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ud(-0.6, 0.6);
  int tested = 0, failures = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    Eigen::MatrixXd u(N + 1, 6);
    for (int i = 0; i <= N; ++i)
      for (int j = 0; j < 6; ++j) u(i, j) = ud(rng);
    const Eigen::VectorXd H = mpc::stage_surplus(p, u);  // N + 2 entries per barrier
    if (H.minCoeff() < 0.0) continue;
    ++tested;
    mpc::MpcSolution s;
    s.u_seq = u;
    s.gamma_e = 1.0;
    s.gamma_j = Eigen::VectorXd::Ones(B - 1);
    const Eigen::VectorXd g = mpc::fasm_residuals(p, mpc::pack(p, s));
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i <= N; ++i) {
        const double next = H[b * (N + 2) + i + 1];
        if (g[b * (N + 1) + i] < 0.0 || std::abs(g[b * (N + 1) + i] - next) > 1e-12) ++failures;
      }
    }
  }
  CHECK(tested > 100);
  CHECK(failures == 0);
}

TEST_CASE("baseline guards the end effector unless asked to guard the points") {
  const Eigen::Vector3d ee = kinematics::ee_pose(test::ur5(), {theta_a()}).p;
  const auto obs = obstacle(ee + Eigen::Vector3d(0, -0.25, 0), Eigen::Vector3d(0, 0.145, 0));
  auto s = settings(2);
  s.mode = mpc::Mode::kBaseline;
  const auto p = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {obs}, s);
  CHECK(p.baseline_barriers() == 1);
  const auto ee_only = mpc::solve_baseline(p);
  REQUIRE(ee_only.status == mpc::SolveStatus::kOptimal);
  CHECK(ee_only.constraints.size() == 3);
  CHECK(std::isnan(ee_only.gamma_e));

  s.baseline_guards_points = true;
  const auto q = mpc::build_problem(test::ur5(), {theta_a()}, shifted_pose({0, 0, 0}), {obs}, s);
  CHECK(q.baseline_barriers() == 7);
  const auto all = mpc::solve_baseline(q);
  REQUIRE(all.status == mpc::SolveStatus::kOptimal);
  CHECK(all.constraints.size() == 21);
  const Eigen::VectorXd H = mpc::stage_surplus(q, all.u_seq);
  for (int b = 0; b < 7; ++b) {
    for (int i = 1; i <= 3; ++i) CHECK(H[b * 4 + i] >= -1e-6);
  }
}
