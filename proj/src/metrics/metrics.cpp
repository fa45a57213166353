// SPDX-License-Identifier: Apache-2.0
#include "learn/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

namespace learn::metrics {
namespace {

void require_same_rows(const MatrixXd& a, const MatrixXd& b, const char* what) {
  if (a.rows() != b.rows()) {
    throw MetricError(std::string(what) + ": sample counts differ (" + std::to_string(a.rows()) + " vs " +
                      std::to_string(b.rows()) + ")");
  }
}

MatrixXd squared_distances(const MatrixXd& x) {
  const VectorXd norms = x.rowwise().squaredNorm();
  MatrixXd d = (-2.0 * x * x.transpose()).colwise() + norms;
  d.rowwise() += norms.transpose();
  return d.cwiseMax(0.0);
}

MatrixXd centre(const MatrixXd& k) {
  const VectorXd row_mean = k.rowwise().mean();
  const VectorXd col_mean = k.colwise().mean().transpose();
  MatrixXd c = k;
  c.colwise() -= row_mean;
  c.rowwise() -= col_mean.transpose();
  return c.array() + k.mean();
}

MatrixXd permute_symmetric(const MatrixXd& k, std::span<const std::size_t> perm) {
  const auto n = static_cast<Eigen::Index>(perm.size());
  MatrixXd out(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) out(i, j) = k(perm[i], perm[j]);
  return out;
}

// Weighted centred Gram D^1/2 H_w K H_w^T D^1/2 with H_w = I - 1 w^T.
MatrixXd weighted_centred(const MatrixXd& k, const VectorXd& w) {
  const VectorXd kw = k * w;
  const double wkw = w.dot(kw);
  MatrixXd c = k;
  c.colwise() -= kw;
  c.rowwise() -= kw.transpose();
  c.array() += wkw;
  const VectorXd s = w.cwiseSqrt();
  return s.asDiagonal() * c * s.asDiagonal();
}

MatrixXd regularized_operator(const MatrixXd& g, double ridge) {
  const auto n = g.rows();
  Eigen::LLT<MatrixXd> llt(g + ridge * MatrixXd::Identity(n, n));
  if (llt.info() != Eigen::Success) {
    throw MetricError("hsconic: regularized Gram matrix is singular; use a larger ridge");
  }
  // R = G (G + eI)^-1 = ((G + eI)^-1 G)^T since both are symmetric.
  return llt.solve(g).transpose();
}

struct ConditionalParts {
  MatrixXd kx, ky, kz;
  VectorXd w;
  bool degenerate = false;
};

double conditional_statistic(const MatrixXd& ru, const MatrixXd& rv, const MatrixXd& rz) {
  const MatrixXd uv = ru * rv;
  const MatrixXd uz = ru * rz;
  const MatrixXd vz = rv * rz;
  return std::max(0.0, uv.trace() - 2.0 * (uv * rz).trace() + (uz.cwiseProduct(vz.transpose())).sum());
}

VectorXd normalized_weights(std::span<const double> weights, Eigen::Index n) {
  if (weights.empty()) return VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  if (static_cast<Eigen::Index>(weights.size()) != n) throw MetricError("hsconic: weight count differs from samples");
  VectorXd w(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) throw MetricError("hsconic: weights must be finite and >= 0");
    w(i) = weights[i];
    total += weights[i];
  }
  if (!(total > 0.0)) throw MetricError("hsconic: weights sum to zero");
  return w / total;
}

std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

double tail_p_value(double stat, std::span<const double> null) {
  const auto exceed = std::count_if(null.begin(), null.end(), [&](double v) { return v >= stat; });
  return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(null.size()));
}

}  // namespace

double trapezoid(std::span<const double> values, std::span<const double> grid) {
  if (values.size() != grid.size() || grid.size() < 2) throw MetricError("trapezoid: need matching samples on >= 2 points");
  double s = 0.0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double h = grid[k] - grid[k - 1];
    if (!(h > 0.0)) throw MetricError("trapezoid: grid must be strictly increasing");
    s += 0.5 * h * (values[k] + values[k - 1]);
  }
  return s;
}

double mise(const MatrixXd& truth, const MatrixXd& predicted, std::span<const double> grid) {
  if (truth.size() == 0) throw MetricError("mise: no oracle curves");
  if (truth.rows() != predicted.rows() || truth.cols() != predicted.cols() ||
      truth.cols() != static_cast<Eigen::Index>(grid.size())) {
    throw MetricError("mise: curve matrices and grid disagree in shape");
  }
  double total = 0.0;
  std::vector<double> sq(grid.size());
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (Eigen::Index k = 0; k < truth.cols(); ++k) {
      const double d = truth(i, k) - predicted(i, k);
      sq[static_cast<std::size_t>(k)] = d * d;
    }
    total += trapezoid(sq, grid);
  }
  return total / static_cast<double>(truth.rows());
}

double median_distance(const MatrixXd& x) {
  const MatrixXd d = squared_distances(x);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
  for (Eigen::Index j = 0; j < x.rows(); ++j)
    for (Eigen::Index i = j + 1; i < x.rows(); ++i)
      if (d(i, j) > 0.0) values.push_back(d(i, j));
  if (values.empty()) return 0.0;
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return std::sqrt(*mid);
}

MatrixXd gaussian_gram(const MatrixXd& x) {
  const double s = median_distance(x);
  if (s == 0.0) return MatrixXd::Ones(x.rows(), x.rows());
  return (squared_distances(x) / (-2.0 * s * s)).array().exp();
}

KernelStatistic hsic(const MatrixXd& x, const MatrixXd& y) {
  require_same_rows(x, y, "hsic");
  if (x.rows() < 5) throw MetricError("hsic: need at least 5 samples");
  if (median_distance(x) == 0.0 || median_distance(y) == 0.0) return {0.0, true};
  const double n = static_cast<double>(x.rows());
  const double v = centre(gaussian_gram(x)).cwiseProduct(gaussian_gram(y)).sum() / (n * n);
  return {std::max(0.0, v), false};
}

KernelStatistic hsconic(const MatrixXd& x, const MatrixXd& y, const MatrixXd& z, std::span<const double> weights,
                        const KernelConfig& config) {
  require_same_rows(x, y, "hsconic");
  require_same_rows(x, z, "hsconic");
  if (!(config.ridge > 0.0)) throw MetricError("hsconic: ridge must be > 0");
  if (x.rows() < 2) throw MetricError("hsconic: need at least 2 samples");
  if (median_distance(x) == 0.0 || median_distance(y) == 0.0) return {0.0, true};
  const VectorXd w = normalized_weights(weights, x.rows());
  const MatrixXd kz = gaussian_gram(z);
  const MatrixXd ru = regularized_operator(weighted_centred(gaussian_gram(x).cwiseProduct(kz), w), config.ridge);
  const MatrixXd rv = regularized_operator(weighted_centred(gaussian_gram(y).cwiseProduct(kz), w), config.ridge);
  const MatrixXd rz = regularized_operator(weighted_centred(kz, w), config.ridge);
  return {conditional_statistic(ru, rv, rz), false};
}

double reduction_ratio(double before, double after) {
  if (!(before > 0.0)) throw MetricError("reduction_ratio: baseline must be > 0");
  return (before - after) / before;
}

double PermutationTest::quantile(double q) const {
  if (null.empty()) throw MetricError("permutation test has an empty null");
  std::vector<double> sorted = null;
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

PermutationTest hsic_permutation_test(const MatrixXd& x, const MatrixXd& y, int permutations, std::uint64_t seed) {
  if (permutations < 1) throw MetricError("permutation test: need at least one permutation");
  PermutationTest out;
  out.statistic = hsic(x, y).value;
  const MatrixXd kc = centre(gaussian_gram(x));
  const MatrixXd ly = gaussian_gram(y);
  const double n = static_cast<double>(x.rows());
  std::mt19937_64 rng(seed);
  auto order = identity_order(static_cast<std::size_t>(x.rows()));
  out.null.reserve(static_cast<std::size_t>(permutations));
  for (int b = 0; b < permutations; ++b) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    out.null.push_back(std::max(0.0, kc.cwiseProduct(permute_symmetric(ly, order)).sum() / (n * n)));
  }
  out.p_value = tail_p_value(out.statistic, out.null);
  return out;
}

PermutationTest hsconic_permutation_test(const MatrixXd& x, const MatrixXd& y, const MatrixXd& z,
                                         std::span<const int> strata, int permutations, std::uint64_t seed,
                                         const KernelConfig& config) {
  if (permutations < 1) throw MetricError("permutation test: need at least one permutation");
  if (static_cast<Eigen::Index>(strata.size()) != x.rows()) throw MetricError("permutation test: one stratum per sample");
  PermutationTest out;
  out.statistic = hsconic(x, y, z, {}, config).value;
  const VectorXd w = VectorXd::Constant(x.rows(), 1.0 / static_cast<double>(x.rows()));
  const MatrixXd kz = gaussian_gram(z);
  const MatrixXd ky = gaussian_gram(y);
  const MatrixXd ru = regularized_operator(weighted_centred(gaussian_gram(x).cwiseProduct(kz), w), config.ridge);
  const MatrixXd rz = regularized_operator(weighted_centred(kz, w), config.ridge);

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);
  std::mt19937_64 rng(seed);
  auto order = identity_order(strata.size());
  for (int b = 0; b < permutations; ++b) {
    for (const auto& [label, members] : groups) {
      std::vector<std::size_t> shuffled = members;
      for (std::size_t i = shuffled.size() - 1; i > 0 && shuffled.size() > 1; --i)
        std::swap(shuffled[i], shuffled[rng() % (i + 1)]);
      for (std::size_t k = 0; k < members.size(); ++k) order[members[k]] = shuffled[k];
    }
    const MatrixXd rv =
        regularized_operator(weighted_centred(permute_symmetric(ky, order).cwiseProduct(kz), w), config.ridge);
    out.null.push_back(conditional_statistic(ru, rv, rz));
  }
  out.p_value = tail_p_value(out.statistic, out.null);
  return out;
}

std::vector<int> quantile_bins(const MatrixXd& z, int bins) {
  if (bins < 1 || z.rows() == 0) throw MetricError("quantile_bins: need >= 1 bin and samples");
  auto order = identity_order(static_cast<std::size_t>(z.rows()));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z(a, 0) < z(b, 0); });
  std::vector<int> label(order.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    label[order[r]] = static_cast<int>(r * static_cast<std::size_t>(bins) / order.size());
  return label;
}

}  // namespace learn::metrics
