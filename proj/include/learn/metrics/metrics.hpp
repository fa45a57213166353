// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace learn::metrics {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mean over units of the trapezoid integral of the squared gap between two
/// curve matrices (units x grid points) over `grid`.
double mise(const MatrixXd& truth, const MatrixXd& predicted, std::span<const double> grid);

/// Trapezoid integral of samples `values` taken at `grid`.
double trapezoid(std::span<const double> values, std::span<const double> grid);

struct KernelConfig {
  double ridge = 1e-3;  // HSCONIC only
};

struct KernelStatistic {
  double value = 0.0;
  bool degenerate = false;  // a variable block had zero spread; value is 0
};

/// Gaussian Gram matrix exp(-d^2 / (2 s^2)) of the rows of `x`, with s the
/// median of the nonzero pairwise distances. All ones when every row coincides.
MatrixXd gaussian_gram(const MatrixXd& x);
/// 0 when every row coincides.
double median_distance(const MatrixXd& x);

/// Biased HSIC V-statistic (1/n^2) tr(K H L H). Rows are samples.
KernelStatistic hsic(const MatrixXd& x, const MatrixXd& y);

/// Normalized conditional dependence of x and y given z:
///   tr(R_u R_v - 2 R_u R_v R_z + R_u R_z R_v R_z)
/// with u = (x, z), v = (y, z), R = G (G + ridge I)^-1 and G the centred Gram
/// matrix of each block scaled by the sample weights (uniform when empty).
/// Joint blocks use the product of per-block Gaussian kernels.
KernelStatistic hsconic(const MatrixXd& x, const MatrixXd& y, const MatrixXd& z, std::span<const double> weights = {},
                        const KernelConfig& config = {});

/// (before - after) / before.
double reduction_ratio(double before, double after);

struct PermutationTest {
  double statistic = 0.0;
  std::vector<double> null;  // statistics under the permutations
  double p_value = 1.0;      // (1 + #{null >= statistic}) / (1 + permutations)
  double quantile(double q) const;
};

/// Null by shuffling the rows of y.
PermutationTest hsic_permutation_test(const MatrixXd& x, const MatrixXd& y, int permutations, std::uint64_t seed);

/// Null by shuffling the rows of y within each stratum label.
PermutationTest hsconic_permutation_test(const MatrixXd& x, const MatrixXd& y, const MatrixXd& z,
                                         std::span<const int> strata, int permutations, std::uint64_t seed,
                                         const KernelConfig& config = {});

/// Equal-count bins of the first column of z, labelled 0..bins-1.
std::vector<int> quantile_bins(const MatrixXd& z, int bins);

}  // namespace learn::metrics
