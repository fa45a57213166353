// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "learn/ot/transport.hpp"

namespace learn::ot {
namespace {

constexpr double kPivotTol = 1e-11;

class Tableau {
 public:
  // Rows 0..m-1 are constraints, row m the reduced costs; last column the rhs.
  Tableau(const MatrixXd& A, const VectorXd& b)
      : m_(A.rows()), n_(A.cols()), t_(MatrixXd::Zero(A.rows() + 1, A.cols() + A.rows() + 1)), basis_(A.rows()) {
    for (Eigen::Index i = 0; i < m_; ++i) {
      const double sign = b(i) < 0 ? -1.0 : 1.0;
      t_.row(i).head(n_) = sign * A.row(i);
      t_(i, n_ + i) = 1.0;
      t_(i, rhs()) = sign * b(i);
      basis_[i] = n_ + i;
    }
  }

  Eigen::Index rhs() const { return t_.cols() - 1; }

  void set_objective(const VectorXd& c) {
    t_.row(m_).setZero();
    for (Eigen::Index j = 0; j < c.size(); ++j) t_(m_, j) = c(j);
    for (Eigen::Index i = 0; i < m_; ++i) {
      const double cb = basis_[i] < c.size() ? c(basis_[i]) : 0.0;
      if (cb != 0.0) t_.row(m_) -= cb * t_.row(i);
    }
  }

  // Bland's rule over columns [0, ncols).
  void optimize(Eigen::Index ncols) {
    for (;;) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < ncols; ++j)
        if (t_(m_, j) < -kPivotTol) {
          enter = j;
          break;
        }
      if (enter < 0) return;
      Eigen::Index leave = -1;
      double best = 0.0;
      for (Eigen::Index i = 0; i < m_; ++i) {
        if (t_(i, enter) <= kPivotTol) continue;
        const double ratio = t_(i, rhs()) / t_(i, enter);
        if (leave < 0 || ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && basis_[i] < basis_[leave])) {
          leave = i;
          best = ratio;
        }
      }
      if (leave < 0) throw OtError("linear program is unbounded");
      pivot(leave, enter);
    }
  }

  void pivot(Eigen::Index r, Eigen::Index c) {
    t_.row(r) /= t_(r, c);
    for (Eigen::Index i = 0; i <= m_; ++i)
      if (i != r && t_(i, c) != 0.0) t_.row(i) -= t_(i, c) * t_.row(r);
    basis_[r] = c;
  }

  // Pivots artificial variables out of the basis; drops rows that are redundant.
  void expel_artificials() {
    for (Eigen::Index i = 0; i < m_;) {
      if (basis_[i] < n_) {
        ++i;
        continue;
      }
      Eigen::Index col = -1;
      for (Eigen::Index j = 0; j < n_; ++j)
        if (std::abs(t_(i, j)) > 1e-9) {
          col = j;
          break;
        }
      if (col >= 0) {
        pivot(i, col);
        ++i;
      } else {
        remove_row(i);
      }
    }
  }

  double objective_value() const { return -t_(m_, rhs()); }

  VectorXd solution() const {
    VectorXd x = VectorXd::Zero(n_);
    for (Eigen::Index i = 0; i < m_; ++i)
      if (basis_[i] < n_) x(basis_[i]) = t_(i, rhs());
    return x;
  }

 private:
  void remove_row(Eigen::Index r) {
    MatrixXd next(t_.rows() - 1, t_.cols());
    next << t_.topRows(r), t_.bottomRows(t_.rows() - r - 1);
    t_ = std::move(next);
    basis_.erase(basis_.begin() + r);
    --m_;
  }

  Eigen::Index m_, n_;
  MatrixXd t_;
  std::vector<Eigen::Index> basis_;
};

bool is_uniform(const VectorXd& v) {
  const double u = 1.0 / static_cast<double>(v.size());
  return (v.array() - u).abs().maxCoeff() <= 1e-12;
}

}  // namespace

LinearProgramResult solve_linear_program(const MatrixXd& A, const VectorXd& b, const VectorXd& c) {
  if (A.rows() != b.size() || A.cols() != c.size()) throw std::invalid_argument("linear program: shape mismatch");
  Tableau tab(A, b);
  VectorXd phase1 = VectorXd::Zero(A.cols() + A.rows());
  phase1.tail(A.rows()).setOnes();
  tab.set_objective(phase1);
  tab.optimize(A.cols() + A.rows());
  if (tab.objective_value() > 1e-9 * std::max(1.0, b.cwiseAbs().sum())) throw OtError("linear program is infeasible");
  tab.expel_artificials();
  tab.set_objective(c);
  tab.optimize(A.cols());
  return {tab.objective_value(), tab.solution()};
}

ExactResult exact_ot(const MatrixXd& cost, const VectorXd& row_marginal, const VectorXd& col_marginal) {
  const auto rows = cost.rows(), cols = cost.cols();
  if (rows != row_marginal.size() || cols != col_marginal.size()) {
    throw std::invalid_argument("exact_ot: marginal sizes do not match the cost matrix");
  }
  if (rows == 0 || cols == 0) throw std::invalid_argument("exact_ot: empty instance");
  if (std::abs(row_marginal.sum() - col_marginal.sum()) > 1e-9) {
    throw std::invalid_argument("exact_ot: marginals carry different mass");
  }

  ExactResult result;
  if (rows == cols && rows <= 6 && is_uniform(row_marginal) && is_uniform(col_marginal)) {
    // Birkhoff: some permutation matrix is optimal.
    std::vector<int> perm(rows), best;
    std::iota(perm.begin(), perm.end(), 0);
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      double total = 0.0;
      for (Eigen::Index i = 0; i < rows; ++i) total += cost(i, perm[i]);
      if (total < best_cost) best_cost = total, best = perm;
    } while (std::next_permutation(perm.begin(), perm.end()));
    result.cost = best_cost / static_cast<double>(rows);
    result.plan = MatrixXd::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) result.plan(i, best[i]) = 1.0 / static_cast<double>(rows);
    return result;
  }

  if (rows * cols > 2500) {
    throw std::invalid_argument("exact_ot: instance " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " is too large for the exact solver");
  }
  MatrixXd A = MatrixXd::Zero(rows + cols, rows * cols);
  VectorXd b(rows + cols), c(rows * cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto k = i * cols + j;
      A(i, k) = 1.0;
      A(rows + j, k) = 1.0;
      c(k) = cost(i, j);
    }
  b << row_marginal, col_marginal;
  const auto lp = solve_linear_program(A, b, c);
  result.plan = MatrixXd(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) result.plan(i, j) = std::max(0.0, lp.solution(i * cols + j));
  result.cost = (result.plan.array() * cost.array()).sum();
  return result;
}

}  // namespace learn::ot
