// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "learn/data/dataset.hpp"

namespace learn::data {

struct DatasetPair {
  Dataset observational;
  Dataset experimental;
};

struct SyntheticCoefficients {
  std::vector<double> treatment;  // Wt, length p
  std::vector<double> outcome;    // Wy, length max(p, q)
};

/// Unit directions v_{i,x}, v_{i,u}, i = 1..3.
struct SemiSyntheticCoefficients {
  std::array<std::vector<double>, 3> observed;
  std::array<std::vector<double>, 3> unobserved;
};

struct SyntheticConfig {
  std::size_t n_observational = 10000;
  std::size_t n_experimental = 500;
  std::size_t covariate_dim = 15;  // must be divisible by 3
  std::size_t unobserved_dim = 5;
  double confounding = 1.0;        // strength of the unobserved confounder in the treatment
  std::size_t horizon = 7;         // short-term steps t0
  std::size_t long_term_step = 14;  // T
  double noise_std = 0.5;
  std::size_t grid_points = 65;
  double reference_treatment = 0.5;
  std::uint64_t seed = 0;
};

struct SyntheticData : DatasetPair {
  SyntheticCoefficients coefficients;
};

/// Draws the coefficient vectors once, then observational units followed by
/// experimental units. Covariate thirds (1-based): 1..p/3 enter through sin,
/// p/3+1..2p/3 through squares, 2p/3+1..p linearly.
///   a   = sigmoid(sum_sin Wt_j sin x_j + sum_sq Wt_j x_j^2 + beta_U mean(u) [obs])
///   Y_t = sum_sq Wy_j x_j^2 + (t+5) a sum_lin Wy_j x_j
///         + beta_U t a / 5 * sum_{j<=q} Wy_j cos u_j + 0.25 mean(Y_1..Y_{t-1}) + noise
SyntheticData generate_synthetic(const SyntheticConfig& config);

/// Noise-free Y_1..Y_steps of one synthetic unit at treatment a.
std::vector<double> synthetic_outcomes(const SyntheticCoefficients& w, std::span<const double> x,
                                       std::span<const double> u, double a, double confounding, std::size_t steps);
double synthetic_treatment_logit(const SyntheticCoefficients& w, std::span<const double> x,
                                 std::span<const double> u, double confounding, Group group);

struct SemiSyntheticConfig {
  std::size_t horizon = 7;
  std::size_t long_term_step = 14;
  double noise_std = 0.5;
  std::size_t grid_points = 65;
  double reference_treatment = 0.5;
  std::uint64_t seed = 0;
};

struct SemiSyntheticData : DatasetPair {
  SemiSyntheticCoefficients coefficients;
  std::vector<std::size_t> observed_columns, unobserved_columns;
};

/// Splits units 9:1 into observational / experimental and covariate columns
/// 8:2 into observed / unobserved, then draws
///   a ~ Beta(2, 1 / d*),  d* = |v3x.x / (2 v2x.x) + v3u.u / (2 v2u.u) [obs]|
///   mu_t = 4 (a - 0.5)^2 sin(pi a / 2) * 2 * max(-2, exp(v2x.x / v3x.x + v2u.u / v3u.u - 0.3))
///          + 20 a (v1x.x + v1u.u) + 0.5 mean(Y_1..Y_{t-1})
/// Denominators are kept at magnitude >= 1e-6 and the exponent at <= 10.
SemiSyntheticData generate_semisynthetic(const Tensor& covariates, const SemiSyntheticConfig& config);

double semisynthetic_mean(const SemiSyntheticCoefficients& v, std::span<const double> x, std::span<const double> u,
                          double a, double previous_mean);
double semisynthetic_beta_shape(const SemiSyntheticCoefficients& v, std::span<const double> x,
                                std::span<const double> u, Group group);

/// Delimited numeric matrix (comma, semicolon, tab or space), optional header.
Tensor load_covariate_matrix(const std::filesystem::path& path);

/// Evenly spaced points on [lo, hi], endpoints included.
std::vector<double> treatment_grid(std::size_t points, double lo = 0.0, double hi = 1.0);

}  // namespace learn::data
