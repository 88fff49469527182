#include "fasm/qp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fasm::qp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Working factorization of the active set: J = L^{-T} Q, R upper triangular, with the
// first q columns of J spanning the (G-metric) range of the active constraint normals.
class ActiveSet {
 public:
  ActiveSet(Eigen::MatrixXd J, Eigen::Index n) : J_(std::move(J)), R_(Eigen::MatrixXd::Zero(n, n)) {}

  Eigen::Index size() const { return q_; }
  const Eigen::MatrixXd& J() const { return J_; }

  Eigen::VectorXd dual_direction(const Eigen::VectorXd& d) const {
    if (q_ == 0) return {};
    return R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_));
  }

  // Returns false when the new normal is linearly dependent on the active ones.
  bool add(Eigen::VectorXd d) {
    const Eigen::Index n = J_.rows();
    for (Eigen::Index j = n - 1; j > q_; --j) {
      const double h = std::hypot(d[j - 1], d[j]);
      if (h == 0.0) continue;
      const double c = d[j - 1] / h, s = d[j] / h;
      d[j - 1] = h;
      d[j] = 0.0;
      rotate_columns(j - 1, j, c, s);
    }
    if (std::abs(d[q_]) <= std::numeric_limits<double>::epsilon() * r_norm_) return false;
    R_.col(q_).head(q_ + 1) = d.head(q_ + 1);
    r_norm_ = std::max(r_norm_, std::abs(d[q_]));
    ++q_;
    return true;
  }

  void remove(Eigen::Index l) {
    for (Eigen::Index i = l; i + 1 < q_; ++i) R_.col(i) = R_.col(i + 1);
    R_.col(q_ - 1).setZero();
    --q_;
    for (Eigen::Index j = l; j < q_; ++j) {
      const double h = std::hypot(R_(j, j), R_(j + 1, j));
      if (h == 0.0) continue;
      const double c = R_(j, j) / h, s = R_(j + 1, j) / h;
      for (Eigen::Index k = j; k < q_; ++k) {
        const double a = R_(j, k), b = R_(j + 1, k);
        R_(j, k) = c * a + s * b;
        R_(j + 1, k) = -s * a + c * b;
      }
      R_(j + 1, j) = 0.0;
      rotate_columns(j, j + 1, c, s);
    }
  }

 private:
  void rotate_columns(Eigen::Index a, Eigen::Index b, double c, double s) {
    const Eigen::VectorXd ca = J_.col(a);
    J_.col(a) = c * ca + s * J_.col(b);
    J_.col(b) = -s * ca + c * J_.col(b);
  }

  Eigen::MatrixXd J_;
  Eigen::MatrixXd R_;
  Eigen::Index q_ = 0;
  double r_norm_ = 1.0;
};

}  // namespace

QpResult solve_qp(const Eigen::MatrixXd& G, const Eigen::VectorXd& c, const Eigen::MatrixXd& A,
                  const Eigen::VectorXd& b, int max_iter) {
  const Eigen::Index n = G.rows();
  const Eigen::Index m = A.rows();
  if (G.cols() != n || c.size() != n || (m > 0 && A.cols() != n) || b.size() != m) {
    throw std::invalid_argument("solve_qp: inconsistent dimensions");
  }
  if (max_iter <= 0) max_iter = static_cast<int>(10 * (n + m) + 50);

  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("solve_qp: G is not positive definite");

  // J = L^{-T}
  Eigen::MatrixXd J = llt.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
  ActiveSet active(std::move(J), n);

  QpResult res;
  res.status = QpStatus::kMaxIter;
  res.x = -llt.solve(c);
  res.multipliers = Eigen::VectorXd::Zero(m);

  Eigen::VectorXd row_norm(m);
  for (Eigen::Index i = 0; i < m; ++i) row_norm[i] = A.row(i).norm();

  std::vector<int> idx;   // active rows, aligned with the factorization columns
  std::vector<double> u;  // their multipliers
  std::vector<char> is_active(static_cast<std::size_t>(m), 0);
  const double tol = 1e-13;

  auto scaled_slack = [&](Eigen::Index i) {
    const double s = A.row(i).dot(res.x) - b[i];
    return row_norm[i] > 0.0 ? s / row_norm[i] : s;
  };

  for (res.iterations = 0; res.iterations < max_iter;) {
    // Most violated inactive row.
    Eigen::Index p = -1;
    double worst = -tol * (1.0 + res.x.lpNorm<Eigen::Infinity>());
    for (Eigen::Index i = 0; i < m; ++i) {
      if (is_active[static_cast<std::size_t>(i)]) continue;
      const double s = scaled_slack(i);
      if (s < worst) {
        worst = s;
        p = i;
      }
    }
    if (p < 0) {
      res.status = QpStatus::kOptimal;
      break;
    }
    if (row_norm[p] == 0.0) {
      res.status = QpStatus::kInfeasible;
      res.blocking_row = static_cast<int>(p);
      break;
    }

    const Eigen::VectorXd np = A.row(p).transpose();
    double u_plus = 0.0;
    bool added = false;
    bool infeasible = false;
    while (!added && res.iterations < max_iter) {
      ++res.iterations;
      const Eigen::Index q = active.size();
      const Eigen::VectorXd d = active.J().transpose() * np;
      const Eigen::VectorXd z = active.J().rightCols(n - q) * d.tail(n - q);
      const Eigen::VectorXd r = active.dual_direction(d);

      double t1 = kInf;
      Eigen::Index l = -1;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (r[k] > 0.0) {
          const double ratio = u[static_cast<std::size_t>(k)] / r[k];
          if (ratio < t1) {
            t1 = ratio;
            l = k;
          }
        }
      }
      const double zn = z.dot(np);
      const double sp = np.dot(res.x) - b[p];
      const bool has_primal = z.lpNorm<Eigen::Infinity>() > 1e-14 * (1.0 + np.norm()) && zn > 0.0;
      const double t2 = has_primal ? -sp / zn : kInf;
      const double t = std::min(t1, t2);

      if (t == kInf) {
        infeasible = true;
        break;
      }
      if (!has_primal) {
        for (Eigen::Index k = 0; k < q; ++k) u[static_cast<std::size_t>(k)] -= t * r[k];
        u_plus += t;
        is_active[static_cast<std::size_t>(idx[static_cast<std::size_t>(l)])] = 0;
        idx.erase(idx.begin() + l);
        u.erase(u.begin() + l);
        active.remove(l);
        continue;
      }

      res.x += t * z;
      for (Eigen::Index k = 0; k < q; ++k) u[static_cast<std::size_t>(k)] -= t * r[k];
      u_plus += t;

      if (t2 <= t1) {
        if (!active.add(d)) {
          // Numerically dependent normal; the full step already satisfies the row.
          added = true;
          break;
        }
        idx.push_back(static_cast<int>(p));
        u.push_back(u_plus);
        is_active[static_cast<std::size_t>(p)] = 1;
        added = true;
      } else {
        is_active[static_cast<std::size_t>(idx[static_cast<std::size_t>(l)])] = 0;
        idx.erase(idx.begin() + l);
        u.erase(u.begin() + l);
        active.remove(l);
      }
    }
    if (infeasible) {
      res.status = QpStatus::kInfeasible;
      res.blocking_row = static_cast<int>(p);
      break;
    }
    if (!added) break;
  }

  for (std::size_t k = 0; k < idx.size(); ++k) {
    res.multipliers[idx[k]] = std::max(0.0, u[k]);
  }
  res.active = idx;
  res.objective = 0.5 * res.x.dot(G * res.x) + c.dot(res.x);
  return res;
}

}  // namespace fasm::qp
