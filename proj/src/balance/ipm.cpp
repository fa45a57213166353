// SPDX-License-Identifier: Apache-2.0
#include "learn/balance/ipm.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace learn::balance {

using diff::Tensor;
using diff::Var;

std::vector<double> permute_treatments(std::span<const double> treatments, Rng& rng) {
  if (treatments.size() < 2) throw std::invalid_argument("permute_treatments: batch needs at least 2 units");
  std::vector<double> out(treatments.begin(), treatments.end());
  // Fisher-Yates with an explicit draw so the permutation only depends on the engine.
  for (std::size_t i = out.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(out[i], out[j]);
  }
  return out;
}

namespace {

Eigen::VectorXd normalized(std::span<const double> w, const char* which) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      throw std::invalid_argument(std::string("ipm_wasserstein: ") + which + " weights must be positive");
    }
    v(static_cast<Eigen::Index>(i)) = w[i];
  }
  return v / v.sum();
}

Eigen::MatrixXd as_matrix(const Tensor& t) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// Entropic plan by Sinkhorn with simultaneous, averaged potential updates.
// Unlike the alternating scheme, swapping the two samples yields exactly the
// transposed plan, so the divergence is symmetric even before convergence.
Eigen::MatrixXd symmetric_sinkhorn_log(const Eigen::MatrixXd& kernel, const Eigen::VectorXd& a,
                                       const Eigen::VectorXd& b, const IpmConfig& config) {
  const Eigen::VectorXd log_a = a.array().log(), log_b = b.array().log();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(a.size()), v = Eigen::VectorXd::Zero(b.size());
  auto row_update = [&](const Eigen::VectorXd& vv) {
    Eigen::VectorXd out(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) out(i) = log_a(i) - log_sum_exp(kernel.row(i).transpose() + vv);
    return out;
  };
  auto col_update = [&](const Eigen::VectorXd& uu) {
    Eigen::VectorXd out(b.size());
    for (Eigen::Index j = 0; j < b.size(); ++j) out(j) = log_b(j) - log_sum_exp(kernel.col(j) + uu);
    return out;
  };
  for (int it = 0; it < config.iterations; ++it) {
    const Eigen::VectorXd nu = 0.5 * (u + row_update(v));
    const Eigen::VectorXd nv = 0.5 * (v + col_update(u));
    const double change = std::max((nu - u).cwiseAbs().maxCoeff(), (nv - v).cwiseAbs().maxCoeff());
    u = nu;
    v = nv;
    if (change <= config.tolerance) break;
  }
  const Eigen::VectorXd fu = row_update(v), fv = col_update(u);
  Eigen::MatrixXd log_plan = (kernel.colwise() + fu).rowwise() + fv.transpose();
  return log_plan.array().exp();
}

// The same iteration on scalings exp(u), exp(v) against exp(kernel). Returns
// an empty matrix when a scaling leaves the representable range.
Eigen::MatrixXd symmetric_sinkhorn_scaled(const Eigen::MatrixXd& kernel, const Eigen::VectorXd& a,
                                          const Eigen::VectorXd& b, const IpmConfig& config) {
  const Eigen::MatrixXd k = kernel.array().exp();
  Eigen::VectorXd su = Eigen::VectorXd::Ones(a.size()), sv = Eigen::VectorXd::Ones(b.size());
  auto usable = [](const Eigen::VectorXd& x) { return x.allFinite() && (x.array() > 0.0).all(); };
  for (int it = 0; it < config.iterations; ++it) {
    const Eigen::VectorXd ku = k * sv, kv = k.transpose() * su;
    if (!usable(ku) || !usable(kv)) return {};
    const Eigen::VectorXd nu = (su.array() * (a.array() / ku.array())).sqrt();
    const Eigen::VectorXd nv = (sv.array() * (b.array() / kv.array())).sqrt();
    if (!usable(nu) || !usable(nv)) return {};
    const double change = std::max((nu.array().log() - su.array().log()).abs().maxCoeff(),
                                   (nv.array().log() - sv.array().log()).abs().maxCoeff());
    su = nu;
    sv = nv;
    if (change <= config.tolerance) break;
  }
  const Eigen::VectorXd ku = k * sv, kv = k.transpose() * su;
  if (!usable(ku) || !usable(kv)) return {};
  const Eigen::VectorXd fu = a.array() / ku.array(), fv = b.array() / kv.array();
  if (!usable(fu) || !usable(fv)) return {};
  return fu.asDiagonal() * k * fv.asDiagonal();
}

Eigen::MatrixXd symmetric_sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                   double eps, const IpmConfig& config) {
  const Eigen::MatrixXd kernel = -cost / eps;
  // Scalings are fine while every kernel entry stays far from underflow.
  if (kernel.minCoeff() > -600.0) {
    Eigen::MatrixXd plan = symmetric_sinkhorn_scaled(kernel, a, b, config);
    if (plan.size() != 0) return plan;
  }
  return symmetric_sinkhorn_log(kernel, a, b, config);
}

// <P, M> + eps KL(P | a b^T) with P held fixed; differentiable through M and
// through eps, which itself depends on the cross cost.
Var entropic_term(const Var& cost, const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Var& eps_var,
                  const IpmConfig& config) {
  const Eigen::MatrixXd plan = symmetric_sinkhorn(as_matrix(cost.value()), a, b, eps_var.value().item(), config);
  double kl = 0.0;
  Tensor plan_t = Tensor::matrix(static_cast<std::size_t>(plan.rows()), static_cast<std::size_t>(plan.cols()));
  for (Eigen::Index i = 0; i < plan.rows(); ++i)
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
      const double p = plan(i, j);
      if (p > 0.0) kl += p * std::log(p / (a(i) * b(j))) - p + a(i) * b(j);
      plan_t.at(i, j) = p;
    }
  return diff::add(diff::sum(diff::mul(cost, diff::constant(std::move(plan_t)))), diff::scale(eps_var, kl));
}

}  // namespace

Var ipm_wasserstein(const Var& sample_a, std::span<const double> weights_a, const Var& sample_b,
                    std::span<const double> weights_b, const IpmConfig& config) {
  if (sample_a.rows() == 0 || sample_b.rows() == 0) throw std::invalid_argument("ipm_wasserstein: empty sample");
  if (sample_a.rows() != weights_a.size() || sample_b.rows() != weights_b.size()) {
    throw std::invalid_argument("ipm_wasserstein: weight count does not match the sample");
  }
  if (!(config.epsilon > 0.0)) throw std::invalid_argument("ipm_wasserstein: epsilon must be > 0");
  const Eigen::VectorXd a = normalized(weights_a, "first"), b = normalized(weights_b, "second");

  Var cost_ab = diff::pairwise_sq_dist(sample_a, sample_b);
  Var eps = diff::scale(diff::mean(cost_ab), config.epsilon);
  if (!(eps.value().item() > 0.0)) return diff::constant(Tensor::scalar(0.0));

  Var cross = entropic_term(cost_ab, a, b, eps, config);
  Var self_a = entropic_term(diff::pairwise_sq_dist(sample_a, sample_a), a, a, eps, config);
  Var self_b = entropic_term(diff::pairwise_sq_dist(sample_b, sample_b), b, b, eps, config);
  return diff::sub(cross, diff::scale(diff::add(self_a, self_b), 0.5));
}

}  // namespace learn::balance
