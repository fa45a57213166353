// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "learn/ot/transport.hpp"

namespace learn::ot {

MatrixXd pad_and_average(std::span<const MatrixXd> plans, std::span<const std::vector<std::size_t>> batches,
                         std::size_t n_source) {
  if (plans.empty() || plans.size() != batches.size()) {
    throw std::invalid_argument("pad_and_average: need one batch index set per plan");
  }
  const std::size_t k = plans.size();
  const std::size_t b = batches.front().size();
  if (b == 0 || b * k != n_source) {
    throw std::invalid_argument("pad_and_average: batches of size " + std::to_string(b) + " cannot partition " +
                                std::to_string(n_source) + " units");
  }
  const auto cols = plans.front().cols();
  const VectorXd target = plans.front().colwise().sum().transpose();

  std::vector<bool> seen(n_source, false);
  MatrixXd full = MatrixXd::Zero(static_cast<Eigen::Index>(n_source), cols);
  for (std::size_t p = 0; p < k; ++p) {
    const auto& plan = plans[p];
    const auto& rows = batches[p];
    if (rows.size() != b || plan.rows() != static_cast<Eigen::Index>(b) || plan.cols() != cols) {
      throw std::invalid_argument("pad_and_average: plan " + std::to_string(p) + " has the wrong shape");
    }
    if ((plan.rowwise().sum().array() - 1.0 / static_cast<double>(b)).abs().maxCoeff() > 1e-9 ||
        (plan.colwise().sum().transpose() - target).cwiseAbs().maxCoeff() > 1e-9) {
      throw std::invalid_argument("pad_and_average: plan " + std::to_string(p) + " violates its marginals");
    }
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t idx = rows[r];
      if (idx >= n_source || seen[idx]) {
        throw std::invalid_argument("pad_and_average: batches are not a partition (index " + std::to_string(idx) +
                                    ")");
      }
      seen[idx] = true;
      full.row(static_cast<Eigen::Index>(idx)) = plan.row(static_cast<Eigen::Index>(r));
    }
  }
  return full / static_cast<double>(k);
}

double conditional_ot_sum(const LeveledSample& source, const LeveledSample& target,
                          const std::function<MatrixXd(const MatrixXd&, const MatrixXd&)>& outcome_cost) {
  const auto n = source.outcomes.rows(), m = target.outcomes.rows();
  if (static_cast<Eigen::Index>(source.levels.size()) != n || source.mass.size() != n ||
      static_cast<Eigen::Index>(target.levels.size()) != m || target.mass.size() != m) {
    throw std::invalid_argument("conditional_ot_sum: inconsistent sample sizes");
  }
  const std::set<int> src(source.levels.begin(), source.levels.end());
  const std::set<int> tgt(target.levels.begin(), target.levels.end());
  for (int level : src)
    if (!tgt.count(level))
      throw std::invalid_argument("conditional_ot_sum: level " + std::to_string(level) + " missing in the target");
  for (int level : tgt)
    if (!src.count(level))
      throw std::invalid_argument("conditional_ot_sum: level " + std::to_string(level) + " missing in the source");

  MatrixXd cost = outcome_cost(source.outcomes, target.outcomes);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (source.levels[i] != target.levels[j]) cost(i, j) = 0.0;
  return exact_ot(cost, source.mass, target.mass).cost;
}

}  // namespace learn::ot
