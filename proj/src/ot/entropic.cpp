// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "learn/ot/transport.hpp"

namespace learn::ot {
namespace {

double log_sum_exp(const auto& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

void check_marginal(const VectorXd& m, const char* which) {
  if ((m.array() <= 0.0).any() || std::abs(m.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string("sinkhorn: ") + which + " marginal must be positive and sum to 1");
  }
}

}  // namespace

double marginal_entropy_term(const VectorXd& weights, double entropy_strength) {
  double total = 0.0;
  for (double w : weights)
    if (w > 0.0) total += w * (std::log(w) - 1.0);
  return entropy_strength * total;
}

namespace {

using Observer = MirrorDescentObserver;

double objective_of(const MatrixXd& plan, const MatrixXd& cost, double entropy_strength) {
  return (plan.array() * cost.array()).sum() + marginal_entropy_term(plan.rowwise().sum(), entropy_strength);
}

// Multiplicative updates on the plan itself. Returns false (leaving `plan` in an
// unspecified state) as soon as an entry gets too small to carry on safely.
bool mirror_descent_linear(const MatrixXd& cost, const MirrorDescentConfig& config, const Observer& observer,
                           MatrixXd& plan) {
  constexpr double kSmallest = 1e-250;
  const auto rows = cost.rows(), cols = cost.cols();
  const MatrixXd step_kernel = (-config.step_size * cost).array().exp();
  const double exponent = -config.step_size * config.entropy_strength;
  plan = MatrixXd::Constant(rows, cols, 1.0 / static_cast<double>(rows * cols));
  for (int it = 0; it < config.iterations; ++it) {
    const VectorXd w = plan.rowwise().sum();
    const VectorXd row_factor = w.array().pow(exponent);
    plan = row_factor.asDiagonal() * plan.cwiseProduct(step_kernel);
    const VectorXd col_mass = plan.colwise().sum().transpose() * static_cast<double>(cols);
    if (!col_mass.allFinite() || (col_mass.array() <= 0.0).any()) return false;
    plan = plan * col_mass.cwiseInverse().asDiagonal();
    if (!(plan.minCoeff() > kSmallest)) return false;
    if (observer) observer(it + 1, plan, objective_of(plan, cost, config.entropy_strength));
  }
  return true;
}

void mirror_descent_log(const MatrixXd& cost, const MirrorDescentConfig& config, const Observer& observer,
                        MatrixXd& plan) {
  const auto rows = cost.rows(), cols = cost.cols();
  const double log_cols = std::log(static_cast<double>(cols));
  MatrixXd log_plan = MatrixXd::Constant(rows, cols, -std::log(static_cast<double>(rows * cols)));
  VectorXd log_w(rows);
  for (int it = 0; it < config.iterations; ++it) {
    for (Eigen::Index i = 0; i < rows; ++i) log_w(i) = log_sum_exp(log_plan.row(i));
    // Proximal step, then rescale every column to mass 1/n_e.
    log_plan -= config.step_size * (cost + config.entropy_strength * log_w.replicate(1, cols));
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double lse = log_sum_exp(log_plan.col(j));
      log_plan.col(j).array() -= lse + log_cols;
    }
    if (!log_plan.allFinite()) {
      throw std::overflow_error("mirror descent: non-finite iterate at step " + std::to_string(it + 1) +
                                "; reduce the step size");
    }
    if (observer) {
      const MatrixXd p = log_plan.array().exp();
      observer(it + 1, p, objective_of(p, cost, config.entropy_strength));
    }
  }
  plan = log_plan.array().exp();
}

}  // namespace

MirrorDescentResult mirror_descent_weights(const MatrixXd& cost, const MirrorDescentConfig& config,
                                           const MirrorDescentObserver& observer) {
  if (config.entropy_strength < 0.0) throw std::invalid_argument("mirror descent: entropy strength must be >= 0");
  if (!(config.step_size > 0.0)) throw std::invalid_argument("mirror descent: step size must be > 0");
  if (config.iterations < 1) throw std::invalid_argument("mirror descent: need at least one iteration");
  if (cost.size() == 0) throw std::invalid_argument("mirror descent: empty cost matrix");
  if (!cost.allFinite()) throw std::domain_error("mirror descent: cost matrix is not finite");

  MirrorDescentResult result;
  // The observer must see each iterate once, so it only rides along on the
  // path that is certain to finish.
  bool done = false;
  if (!observer) done = mirror_descent_linear(cost, config, {}, result.plan);
  if (!done) mirror_descent_log(cost, config, observer, result.plan);
  result.weights = result.plan.rowwise().sum();
  result.objective = objective_of(result.plan, cost, config.entropy_strength);
  return result;
}

SinkhornResult sinkhorn(const MatrixXd& cost, const VectorXd& row_marginal, const VectorXd& col_marginal,
                        double epsilon, int max_iterations, double tolerance) {
  if (cost.rows() != row_marginal.size() || cost.cols() != col_marginal.size()) {
    throw std::invalid_argument("sinkhorn: marginal sizes do not match the cost matrix");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("sinkhorn: need at least one iteration");
  check_marginal(row_marginal, "row");
  check_marginal(col_marginal, "column");

  const auto rows = cost.rows(), cols = cost.cols();
  const MatrixXd kernel = -cost / epsilon;
  const VectorXd log_a = row_marginal.array().log(), log_b = col_marginal.array().log();
  VectorXd f = VectorXd::Zero(rows), g = VectorXd::Zero(cols);

  SinkhornResult best;
  best.marginal_error = std::numeric_limits<double>::infinity();
  auto plan_of = [&]() -> MatrixXd {
    MatrixXd log_plan = (kernel.colwise() + f).rowwise() + g.transpose();
    return log_plan.array().exp();
  };

  for (int it = 1; it <= max_iterations; ++it) {
    for (Eigen::Index i = 0; i < rows; ++i) f(i) = log_a(i) - log_sum_exp(kernel.row(i).transpose() + g);
    for (Eigen::Index j = 0; j < cols; ++j) g(j) = log_b(j) - log_sum_exp(kernel.col(j) + f);
    const MatrixXd plan = plan_of();
    const double err = std::max((plan.rowwise().sum() - row_marginal).cwiseAbs().maxCoeff(),
                                (plan.colwise().sum().transpose() - col_marginal).cwiseAbs().maxCoeff());
    if (err < best.marginal_error) {
      best.plan = plan;
      best.marginal_error = err;
      best.iterations = it;
      best.log_row_scaling = f;
      best.log_col_scaling = g;
    }
    if (err <= tolerance) {
      best.converged = true;
      break;
    }
  }
  if (!best.plan.allFinite()) throw std::overflow_error("sinkhorn: non-finite plan; increase epsilon");
  best.cost = (best.plan.array() * cost.array()).sum();
  return best;
}

}  // namespace learn::ot
