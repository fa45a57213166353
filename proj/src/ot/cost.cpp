// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <ostream>

#include "learn/ot/transport.hpp"

namespace learn::ot {

MatrixXd pairwise_distance(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("pairwise_distance: feature widths " + std::to_string(a.cols()) + " and " +
                                std::to_string(b.cols()) + " differ");
  }
  MatrixXd d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).norm();
  return d;
}

MatrixXd build_cost_matrix(const UnitFeatures& source, const UnitFeatures& target, const CostWeights& weights) {
  const auto n = source.treatment.size(), m = target.treatment.size();
  if (source.embedding.rows() != n || source.covariates.rows() != n || target.embedding.rows() != m ||
      target.covariates.rows() != m) {
    throw std::invalid_argument("build_cost_matrix: feature blocks disagree on unit counts");
  }
  MatrixXd cost = MatrixXd::Zero(n, m);
  if (weights.embedding != 0.0) cost += weights.embedding * pairwise_distance(source.embedding, target.embedding);
  if (weights.covariates != 0.0)
    cost += weights.covariates * pairwise_distance(source.covariates, target.covariates);
  if (weights.treatment != 0.0) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        cost(i, j) += weights.treatment * std::abs(source.treatment(i) - target.treatment(j));
  }
  if (!cost.allFinite()) throw std::domain_error("build_cost_matrix: non-finite cost");
  return cost;
}

void write_plan_csv(std::ostream& out, const MatrixXd& plan) {
  out << "row,col,mass\n";
  char buf[64];
  for (Eigen::Index i = 0; i < plan.rows(); ++i)
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", plan(i, j));
      out << i << ',' << j << ',' << buf << '\n';
    }
}

void write_plan_csv(const std::filesystem::path& path, const MatrixXd& plan) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_plan_csv: cannot open " + path.string());
  write_plan_csv(out, plan);
}

}  // namespace learn::ot
