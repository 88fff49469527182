#include "fasm/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fasm::mpc {

namespace {

constexpr double kNormEps = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

bool symmetric_pd(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols() || !M.allFinite()) return false;
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff())) {
    return false;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  return llt.info() == Eigen::Success;
}

// Geometry of one barrier against one obstacle along the horizon, stages 0..N+1.
struct Track {
  std::vector<Eigen::Vector3d> a;  // x_{i|k} - o_hat_{i|k}
  std::vector<double> H;
  std::vector<Eigen::VectorXd> w;  // dH_i/d(cumulative control), length n
};

// cum[i] = sum_{l<i} u_l for i = 0..N+1
std::vector<Eigen::VectorXd> cumulative(const MpcProblem& p, const Eigen::VectorXd& z) {
  const int n = p.dof();
  std::vector<Eigen::VectorXd> cum(static_cast<std::size_t>(p.N + 2), Eigen::VectorXd::Zero(n));
  for (int i = 1; i <= p.N + 1; ++i) {
    cum[static_cast<std::size_t>(i)] = cum[static_cast<std::size_t>(i - 1)] + z.segment(static_cast<Eigen::Index>(i - 1) * n, n);
  }
  return cum;
}

Track track(const MpcProblem& p, const BarrierPoint& bp, const ObstacleForecast& ob,
            const std::vector<Eigen::VectorXd>& cum, bool with_gradient) {
  Track tr;
  const double r_safe = ob.safety.r_safe();
  for (int i = 0; i <= p.N + 1; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Eigen::Vector3d x = bp.x0 + p.t_s * bp.J * cum[ui];
    const Eigen::Vector3d a = x - ob.predicted[ui];
    tr.a.push_back(a);
    tr.H.push_back(a.norm() - r_safe);
    if (with_gradient) {
      const double s = std::sqrt(a.squaredNorm() + kNormEps * kNormEps);
      tr.w.push_back(p.t_s * bp.J.transpose() * (a / s));
    }
  }
  return tr;
}

// t_s^2 J^T (I - n n^T) J / s, the curvature of H_i in the cumulative control.
Eigen::MatrixXd curvature(const MpcProblem& p, const BarrierPoint& bp, const Eigen::Vector3d& a) {
  const double s = std::sqrt(a.squaredNorm() + kNormEps * kNormEps);
  const Eigen::Vector3d nh = a / s;
  const Eigen::Matrix3d proj = (Eigen::Matrix3d::Identity() - nh * nh.transpose()) / s;
  return p.t_s * p.t_s * bp.J.transpose() * proj * bp.J;
}

// Adds c*M to every block (l, l') with l, l' < count.
void add_leading_blocks(Eigen::MatrixXd& H, int n, int count, const Eigen::MatrixXd& M, double c) {
  for (int l = 0; l < count; ++l) {
    for (int m = 0; m < count; ++m) H.block(l * n, m * n, n, n) += c * M;
  }
}

// nb: barriers carrying rows in the solved problem.
int row_index(const MpcProblem& p, int o, int b, int i, int nb) { return (o * nb + b) * (p.N + 1) + i; }

int row_index(const MpcProblem& p, int o, int b, int i) { return row_index(p, o, b, i, p.num_barriers()); }

// Quadratic tracking cost on the control block, shared by both modes.
void tracking_cost(const MpcProblem& p, Eigen::MatrixXd& P, Eigen::VectorXd& q, double& c0) {
  const int n = p.dof();
  const Eigen::MatrixXd K = p.t_s * p.J_e;
  const Eigen::MatrixXd KQK = K.transpose() * p.weights.Q * K;
  const Eigen::Matrix<double, 7, 1> e0 = p.x_e0 - p.reference;
  const Eigen::VectorXd KQe = K.transpose() * p.weights.Q * e0;
  for (int l = 0; l <= p.N; ++l) {
    for (int m = 0; m <= p.N; ++m) {
      P.block(l * n, m * n, n, n) += 2.0 * (p.N - std::max(l, m)) * KQK;
    }
    P.block(l * n, l * n, n, n) += 2.0 * p.weights.R;
    q.segment(l * n, n) += 2.0 * (p.N - l) * KQe;
  }
  c0 += (p.N + 1) * e0.dot(p.weights.Q * e0);
}

// theta_k + t_s * sum_{l<=i} u_l inside the joint box, i = 0..N.
void joint_rows(const MpcProblem& p, Eigen::Index dim, Eigen::MatrixXd& A, Eigen::VectorXd& b) {
  const int n = p.dof();
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int i = 0; i <= p.N; ++i) {
    for (int j = 0; j < n; ++j) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(dim);
      for (int l = 0; l <= i; ++l) r[l * n + j] = p.t_s;
      if (std::isfinite(p.theta_min[j])) {
        rows.push_back(r);
        rhs.push_back(p.theta_min[j] - p.theta_k[j]);
      }
      if (std::isfinite(p.theta_max[j])) {
        rows.push_back(-r);
        rhs.push_back(p.theta_k[j] - p.theta_max[j]);
      }
    }
  }
  A.resize(static_cast<Eigen::Index>(rows.size()), dim);
  b.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    A.row(static_cast<Eigen::Index>(r)) = rows[r];
    b[static_cast<Eigen::Index>(r)] = rhs[r];
  }
}

std::string barrier_name(const MpcProblem& p, int b) { return b == 0 ? "ee" : p.points[static_cast<std::size_t>(b - 1)].id; }

std::string row_name(const MpcProblem& p, int row, int nb) {
  const int per_obstacle = nb * (p.N + 1);
  const int o = row / per_obstacle;
  const int b = (row % per_obstacle) / (p.N + 1);
  const int i = row % (p.N + 1);
  std::ostringstream os;
  os << barrier_name(p, b) << "/obstacle" << o << "/stage" << i;
  return os.str();
}

SolveStatus map_status(sqp::SqpStatus s) {
  switch (s) {
    case sqp::SqpStatus::kOptimal:
      return SolveStatus::kOptimal;
    case sqp::SqpStatus::kMaxIter:
      return SolveStatus::kMaxIter;
    case sqp::SqpStatus::kInfeasible:
      break;
  }
  return SolveStatus::kInfeasible;
}

Eigen::VectorXd start_controls(const MpcProblem& p, const std::optional<MpcSolution>& warm,
                               const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const int n = p.dof();
  const Eigen::Index nu = static_cast<Eigen::Index>(p.N + 1) * n;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nu);
  if (!warm || warm->u_seq.rows() != p.N + 1 || warm->u_seq.cols() != n) return u;
  for (int i = 0; i <= p.N; ++i) u.segment(i * n, n) = warm->u_seq.row(i).transpose();
  u = u.cwiseMax(-p.u_max).cwiseMin(p.u_max);
  if (A.rows() > 0 && ((A.leftCols(nu) * u - b).array() < 0.0).any()) u.tail(n).setZero();
  return u;
}

MpcSolution assemble(const MpcProblem& p, const sqp::SqpResult& res, const sqp::NlpProblem& nlp,
                     bool flexible) {
  const int nb = flexible ? p.num_barriers() : p.baseline_barriers();
  const int n = p.dof();
  MpcSolution sol;
  sol.u_seq.resize(p.N + 1, n);
  for (int i = 0; i <= p.N; ++i) sol.u_seq.row(i) = res.z.segment(i * n, n).transpose();
  const Eigen::Index nu = static_cast<Eigen::Index>(p.N + 1) * n;
  if (flexible) {
    sol.gamma_e = res.z[nu];
    sol.gamma_j = res.z.segment(nu + 1, p.num_points());
  } else {
    sol.gamma_e = std::numeric_limits<double>::quiet_NaN();
    sol.gamma_j = Eigen::VectorXd::Constant(p.num_points(), std::numeric_limits<double>::quiet_NaN());
  }
  sol.cost = nlp.objective(res.z);
  sol.status = map_status(res.status);
  sol.kkt_residual = res.kkt_residual;
  sol.iterations = res.iterations;

  double viol = res.g.size() ? std::max(0.0, -res.g.minCoeff()) : 0.0;
  if (nlp.A.rows() > 0) viol = std::max(viol, (nlp.b - nlp.A * res.z).maxCoeff());
  viol = std::max(viol, (nlp.lower - res.z).maxCoeff());
  viol = std::max(viol, (res.z - nlp.upper).maxCoeff());
  sol.max_constraint_violation = std::max(0.0, viol);
  if (res.most_violated >= 0) sol.most_violated = row_name(p, res.most_violated, nb);
  if (sol.status == SolveStatus::kOptimal && sol.max_constraint_violation > p.solver.feas_tol) {
    sol.status = SolveStatus::kMaxIter;
  }

  for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
    for (int b = 0; b < nb; ++b) {
      for (int i = 0; i <= p.N; ++i) {
        const int r = row_index(p, o, b, i, nb);
        ConstraintInfo ci;
        ci.stage = i;
        ci.barrier = b;
        ci.obstacle = o;
        if (r < res.g.size()) {
          ci.residual = res.g[r];
          ci.multiplier = r < res.lambda.size() ? res.lambda[r] : 0.0;
        }
        ci.active = ci.residual <= kActivationTol;
        sol.constraints.push_back(ci);
      }
    }
  }
  return sol;
}

}  // namespace

Weights Weights::uniform(double q, double r, double p_gamma, double p_j, int dof, int num_points) {
  Weights w;
  w.Q = q * Eigen::MatrixXd::Identity(7, 7);
  w.R = r * Eigen::MatrixXd::Identity(dof, dof);
  w.P_gamma = p_gamma;
  w.P_j = Eigen::VectorXd::Constant(num_points, p_j);
  return w;
}

void Weights::validate(int dof, int num_points) const {
  if (Q.rows() != 7 || Q.cols() != 7) throw std::invalid_argument("weights: Q must be 7x7");
  if (R.rows() != dof || R.cols() != dof) throw std::invalid_argument("weights: R must be n x n");
  if (!symmetric_pd(Q)) throw std::invalid_argument("weights: Q must be symmetric positive definite");
  if (!symmetric_pd(R)) throw std::invalid_argument("weights: R must be symmetric positive definite");
  if (!(P_gamma > 0.0) || !std::isfinite(P_gamma)) throw std::invalid_argument("weights: P_gamma must be > 0");
  if (P_j.size() != num_points) throw std::invalid_argument("weights: one P_j per critical point");
  if (num_points > 0 && !(P_j.minCoeff() > 0.0)) throw std::invalid_argument("weights: P_j must be > 0");
}

Weights Weights::scaled(double factor) const {
  Weights w = *this;
  w.Q *= factor;
  w.R *= factor;
  w.P_gamma *= factor;
  w.P_j *= factor;
  return w;
}

double stage_cost(const Eigen::VectorXd& x_e, const Eigen::VectorXd& u, double gamma_e,
                  const Eigen::VectorXd& gamma_j, const Eigen::VectorXd& s, const Weights& w) {
  if (x_e.size() != w.Q.rows() || s.size() != x_e.size() || u.size() != w.R.rows() ||
      gamma_j.size() != w.P_j.size()) {
    throw std::invalid_argument("stage_cost: dimension mismatch");
  }
  const Eigen::VectorXd e = x_e - s;
  double c = e.dot(w.Q * e) + u.dot(w.R * u) + w.P_gamma * gamma_e * gamma_e;
  for (Eigen::Index j = 0; j < gamma_j.size(); ++j) c += w.P_j[j] * gamma_j[j] * gamma_j[j];
  return c;
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal:
      return "optimal";
    case SolveStatus::kMaxIter:
      return "max_iter";
    case SolveStatus::kInfeasible:
      break;
  }
  return "infeasible";
}

bool MpcSolution::any_active() const {
  return std::any_of(constraints.begin(), constraints.end(), [](const ConstraintInfo& c) { return c.active; });
}

MpcSolution MpcSolution::shifted() const {
  MpcSolution s = *this;
  const Eigen::Index rows = u_seq.rows();
  if (rows > 1) {
    s.u_seq.topRows(rows - 1) = u_seq.bottomRows(rows - 1);
    s.u_seq.row(rows - 1) = u_seq.row(rows - 1);
  }
  s.constraints.clear();
  return s;
}

MpcProblem build_problem(const kinematics::KinematicChain& chain,
                         const kinematics::JointState& state, const kinematics::Pose7& reference,
                         const std::vector<ObstacleInput>& obstacles,
                         const ControllerSettings& settings) {
  const int n = static_cast<int>(chain.dof());
  if (state.theta.size() != n) throw std::invalid_argument("build_problem: joint vector length");
  if (settings.N < 1) throw std::invalid_argument("build_problem: N must be >= 1");
  if (!(settings.u_max >= 0.0)) throw std::invalid_argument("build_problem: u_max must be >= 0");
  const auto& cps = chain.critical_points();
  const int n_points = static_cast<int>(cps.size());
  settings.weights.validate(n, n_points);
  if (!(settings.gamma_min > 0.0 && settings.gamma_min <= 1.0)) {
    throw std::invalid_argument("build_problem: gamma_min must lie in (0, 1]");
  }

  MpcProblem p;
  p.N = settings.N;
  p.t_s = settings.t_s;
  if (!(p.t_s > 0.0)) throw std::invalid_argument("build_problem: sampling time must be > 0");
  p.weights = settings.weights;
  p.u_max = settings.u_max;
  p.gamma_min = settings.gamma_min;
  p.gamma_init = std::clamp(settings.gamma_init, settings.gamma_min, 1.0);
  p.solver = settings.solver;
  p.baseline_guards_points = settings.baseline_guards_points;
  p.theta_k = state.theta;

  const kinematics::Pose7 pose = kinematics::ee_pose(chain, state);
  p.x_e0 = pose.vector();
  p.J_e = kinematics::ee_jacobian(chain, state);
  p.reference = kinematics::canonical(kinematics::normalized(reference)).vector();
  p.ee.id = "ee";
  p.ee.x0 = pose.p;
  p.ee.J = p.J_e.topRows(3);
  const auto positions = kinematics::forward_points(chain, state);
  for (int j = 0; j < n_points; ++j) {
    BarrierPoint bp;
    bp.id = cps[static_cast<std::size_t>(j)].id;
    bp.x0 = positions[static_cast<std::size_t>(j)];
    bp.J = kinematics::point_jacobian(chain, state, bp.id);
    p.points.push_back(std::move(bp));
  }

  const kinematics::JointLimits& box = settings.theta_box.empty() ? chain.limits() : settings.theta_box;
  if (box.empty()) {
    p.theta_min = Eigen::VectorXd::Constant(n, -kInf);
    p.theta_max = Eigen::VectorXd::Constant(n, kInf);
  } else {
    if (box.lower.size() != n || box.upper.size() != n) {
      throw std::invalid_argument("build_problem: joint box dimension");
    }
    p.theta_min = box.lower;
    p.theta_max = box.upper;
  }
  p.joints_pre_violated = ((state.theta - p.theta_min).array() < 0.0).any() ||
                          ((p.theta_max - state.theta).array() < 0.0).any();

  for (const auto& in : obstacles) {
    if (std::abs(in.model.t_s - p.t_s) > 1e-15) {
      throw std::invalid_argument("build_problem: obstacle model sampling time differs");
    }
    ObstacleForecast f;
    f.safety = in.safety;
    f.estimate = in.estimate;
    for (int i = 0; i <= p.N + 1; ++i) {
      f.predicted.push_back(observer::predict_obstacle(in.estimate, i, in.model).position);
    }
    p.obstacles.push_back(std::move(f));
  }

  for (const auto& ob : p.obstacles) {
    for (int b = 0; b < p.num_barriers(); ++b) {
      if (cbf::surplus_distance(p.barrier(b).x0, ob.predicted[0], ob.safety.r_safe()) < 0.0) {
        p.initially_unsafe = true;
      }
    }
  }
  return p;
}

Eigen::VectorXd pack(const MpcProblem& p, const MpcSolution& s) {
  const int n = p.dof();
  Eigen::VectorXd z(p.num_variables());
  for (int i = 0; i <= p.N; ++i) z.segment(i * n, n) = s.u_seq.row(i).transpose();
  z[(p.N + 1) * n] = s.gamma_e;
  z.tail(p.num_points()) = s.gamma_j;
  return z;
}

double fasm_cost(const MpcProblem& p, const Eigen::VectorXd& z) {
  const int n = p.dof();
  const auto cum = cumulative(p, z);
  const Eigen::Index nu = static_cast<Eigen::Index>(p.N + 1) * n;
  double c = 0.0;
  for (int i = 0; i <= p.N; ++i) {
    const Eigen::VectorXd x = kinematics::predict_point(p.x_e0, p.J_e, cum[static_cast<std::size_t>(i)], p.t_s);
    c += stage_cost(x, z.segment(i * n, n), z[nu], z.segment(nu + 1, p.num_points()), p.reference,
                    p.weights);
  }
  return c;
}

Eigen::VectorXd fasm_residuals(const MpcProblem& p, const Eigen::VectorXd& z) {
  Eigen::VectorXd g(p.num_cbfsc());
  const auto cum = cumulative(p, z);
  const Eigen::Index nu = static_cast<Eigen::Index>(p.N + 1) * p.dof();
  for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
    for (int b = 0; b < p.num_barriers(); ++b) {
      const Track tr = track(p, p.barrier(b), p.obstacles[static_cast<std::size_t>(o)], cum, false);
      const double gamma = z[nu + b];
      for (int i = 0; i <= p.N; ++i) {
        g[row_index(p, o, b, i)] = tr.H[static_cast<std::size_t>(i + 1)] - (1.0 - gamma) * tr.H[static_cast<std::size_t>(i)];
      }
    }
  }
  return g;
}

Eigen::VectorXd stage_surplus(const MpcProblem& p, const Eigen::MatrixXd& u_seq) {
  const int n = p.dof();
  Eigen::VectorXd z = Eigen::VectorXd::Zero((p.N + 1) * n);
  for (int i = 0; i <= p.N; ++i) z.segment(i * n, n) = u_seq.row(i).transpose();
  const auto cum = cumulative(p, z);
  const int per = p.N + 2;
  Eigen::VectorXd out(static_cast<Eigen::Index>(p.obstacles.size()) * p.num_barriers() * per);
  for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
    for (int b = 0; b < p.num_barriers(); ++b) {
      const Track tr = track(p, p.barrier(b), p.obstacles[static_cast<std::size_t>(o)], cum, false);
      for (int i = 0; i < per; ++i) out[(o * p.num_barriers() + b) * per + i] = tr.H[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

MpcSolution solve(const MpcProblem& p, const std::optional<MpcSolution>& warm_start) {
  const int n = p.dof();
  const int nb = p.num_barriers();
  const Eigen::Index nu = static_cast<Eigen::Index>(p.N + 1) * n;
  const Eigen::Index dim = p.num_variables();

  sqp::NlpProblem nlp;
  nlp.P = Eigen::MatrixXd::Zero(dim, dim);
  nlp.q = Eigen::VectorXd::Zero(dim);
  tracking_cost(p, nlp.P, nlp.q, nlp.c0);
  nlp.P(nu, nu) = 2.0 * (p.N + 1) * p.weights.P_gamma;
  for (int j = 0; j < p.num_points(); ++j) nlp.P(nu + 1 + j, nu + 1 + j) = 2.0 * (p.N + 1) * p.weights.P_j[j];
  joint_rows(p, dim, nlp.A, nlp.b);
  nlp.lower = Eigen::VectorXd::Constant(dim, -p.u_max);
  nlp.upper = Eigen::VectorXd::Constant(dim, p.u_max);
  nlp.lower.tail(nb).setConstant(p.gamma_min);
  nlp.upper.tail(nb).setConstant(1.0);

  nlp.num_nonlinear = p.num_cbfsc();
  nlp.constraints = [&p, n, nu](const Eigen::VectorXd& z, Eigen::VectorXd& g, Eigen::MatrixXd& jac) {
    jac.setZero();
    const auto cum = cumulative(p, z);
    for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
      for (int b = 0; b < p.num_barriers(); ++b) {
        const Track tr = track(p, p.barrier(b), p.obstacles[static_cast<std::size_t>(o)], cum, true);
        const double gamma = z[nu + b];
        for (int i = 0; i <= p.N; ++i) {
          const auto ui = static_cast<std::size_t>(i);
          const int r = row_index(p, o, b, i);
          g[r] = tr.H[ui + 1] - (1.0 - gamma) * tr.H[ui];
          for (int l = 0; l <= i; ++l) {
            Eigen::VectorXd d = tr.w[ui + 1];
            if (l < i) d -= (1.0 - gamma) * tr.w[ui];
            jac.block(r, l * n, 1, n) = d.transpose();
          }
          jac(r, nu + b) = tr.H[ui];
        }
      }
    }
  };
  nlp.constraint_hessian = [&p, n, nu](const Eigen::VectorXd& z, const Eigen::VectorXd& w, Eigen::MatrixXd& H) {
    const auto cum = cumulative(p, z);
    for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
      for (int b = 0; b < p.num_barriers(); ++b) {
        const BarrierPoint& bp = p.barrier(b);
        const Track tr = track(p, bp, p.obstacles[static_cast<std::size_t>(o)], cum, true);
        const double gamma = z[nu + b];
        std::vector<Eigen::MatrixXd> M;
        for (int i = 0; i <= p.N + 1; ++i) M.push_back(curvature(p, bp, tr.a[static_cast<std::size_t>(i)]));
        for (int i = 0; i <= p.N; ++i) {
          const auto ui = static_cast<std::size_t>(i);
          const double c = w[row_index(p, o, b, i)];
          if (c == 0.0) continue;
          add_leading_blocks(H, n, i + 1, M[ui + 1], c);
          add_leading_blocks(H, n, i, M[ui], -c * (1.0 - gamma));
          for (int l = 0; l < i; ++l) {
            H.block(l * n, nu + b, n, 1) += c * tr.w[ui];
            H.block(nu + b, l * n, 1, n) += c * tr.w[ui].transpose();
          }
        }
      }
    }
  };

  Eigen::VectorXd z0(dim);
  z0.head(nu) = start_controls(p, warm_start, nlp.A, nlp.b);
  z0.tail(nb).setConstant(p.gamma_init);
  if (warm_start && warm_start->gamma_j.size() == p.num_points() && std::isfinite(warm_start->gamma_e)) {
    z0[nu] = warm_start->gamma_e;
    z0.tail(p.num_points()) = warm_start->gamma_j;
  }
  z0.tail(nb) = z0.tail(nb).cwiseMax(p.gamma_min).cwiseMin(1.0);
  // Raise each decay rate to the smallest value that satisfies its rows, when one exists.
  {
    const auto cum = cumulative(p, z0);
    for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
      for (int b = 0; b < nb; ++b) {
        const Track tr = track(p, p.barrier(b), p.obstacles[static_cast<std::size_t>(o)], cum, false);
        for (int i = 0; i <= p.N; ++i) {
          const double h0 = tr.H[static_cast<std::size_t>(i)];
          const double h1 = tr.H[static_cast<std::size_t>(i + 1)];
          if (h0 > 0.0 && h1 - (1.0 - z0[nu + b]) * h0 < 0.0) {
            z0[nu + b] = std::min(1.0, std::max(z0[nu + b], 1.0 - h1 / h0));
          }
        }
      }
    }
  }

  const sqp::SqpResult res = sqp::solve(nlp, z0, p.solver);
  return assemble(p, res, nlp, true);
}

MpcSolution solve_baseline(const MpcProblem& p, const std::optional<MpcSolution>& warm_start) {
  const int n = p.dof();
  const Eigen::Index dim = static_cast<Eigen::Index>(p.N + 1) * n;

  sqp::NlpProblem nlp;
  nlp.P = Eigen::MatrixXd::Zero(dim, dim);
  nlp.q = Eigen::VectorXd::Zero(dim);
  tracking_cost(p, nlp.P, nlp.q, nlp.c0);
  joint_rows(p, dim, nlp.A, nlp.b);
  nlp.lower = Eigen::VectorXd::Constant(dim, -p.u_max);
  nlp.upper = Eigen::VectorXd::Constant(dim, p.u_max);

  const int nb = p.baseline_barriers();
  nlp.num_nonlinear = (p.N + 1) * nb * static_cast<int>(p.obstacles.size());
  nlp.constraints = [&p, n, nb](const Eigen::VectorXd& z, Eigen::VectorXd& g, Eigen::MatrixXd& jac) {
    jac.setZero();
    const auto cum = cumulative(p, z);
    for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
      for (int b = 0; b < nb; ++b) {
        const Track tr = track(p, p.barrier(b), p.obstacles[static_cast<std::size_t>(o)], cum, true);
        for (int i = 0; i <= p.N; ++i) {
          const auto ui = static_cast<std::size_t>(i);
          const int r = row_index(p, o, b, i, nb);
          g[r] = tr.H[ui + 1];
          for (int l = 0; l <= i; ++l) jac.block(r, l * n, 1, n) = tr.w[ui + 1].transpose();
        }
      }
    }
  };
  nlp.constraint_hessian = [&p, n, nb](const Eigen::VectorXd& z, const Eigen::VectorXd& w, Eigen::MatrixXd& H) {
    const auto cum = cumulative(p, z);
    for (int o = 0; o < static_cast<int>(p.obstacles.size()); ++o) {
      for (int b = 0; b < nb; ++b) {
        const BarrierPoint& bp = p.barrier(b);
        const Track tr = track(p, bp, p.obstacles[static_cast<std::size_t>(o)], cum, false);
        for (int i = 0; i <= p.N; ++i) {
          const double c = w[row_index(p, o, b, i, nb)];
          if (c == 0.0) continue;
          add_leading_blocks(H, n, i + 1, curvature(p, bp, tr.a[static_cast<std::size_t>(i + 1)]), c);
        }
      }
    }
  };

  const Eigen::VectorXd z0 = start_controls(p, warm_start, nlp.A, nlp.b);
  const sqp::SqpResult res = sqp::solve(nlp, z0, p.solver);
  return assemble(p, res, nlp, false);
}

}  // namespace fasm::mpc
