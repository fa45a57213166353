// SPDX-License-Identifier: Apache-2.0
//
// Transport distance between the treatment-permuted sample {(z_i, a_pi(i))}
// (a draw from P(Z)P(A)) and the weighted observed sample {(z_i, a_i), w_i}.
#pragma once

#include <random>
#include <span>
#include <vector>

#include "learn/diff/var.hpp"

namespace learn::balance {

using Rng = std::mt19937_64;

/// Uniformly random permutation of the treatments. Needs at least 2 values.
std::vector<double> permute_treatments(std::span<const double> treatments, Rng& rng);

struct IpmConfig {
  double epsilon = 0.1;  // relative to the mean cross cost
  int iterations = 50;
  double tolerance = 1e-9;
};

/// Debiased entropic transport divergence
///   D(A, B) = OT(A, B) - OT(A, A) / 2 - OT(B, B) / 2,
///   OT(A, B) = <P, M> + eps KL(P | a b^T),
/// with ground cost M_ij = ||x_i - y_j||^2 over the sample rows and P the
/// entropic plan. The regularisation is eps = epsilon * mean(M_AB), shared by
/// all three terms. Plans are computed without a tape and held constant, so
/// gradients flow through the cost matrices only (which is exact for the
/// value at the optimal plan). D is symmetric and vanishes when the two
/// weighted samples coincide. Weights are normalised internally and must be
/// positive.
diff::Var ipm_wasserstein(const diff::Var& sample_a, std::span<const double> weights_a, const diff::Var& sample_b,
                          std::span<const double> weights_b, const IpmConfig& config = {});

}  // namespace learn::balance
