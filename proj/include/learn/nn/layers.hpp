// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "learn/diff/var.hpp"

namespace learn::nn {

using Rng = std::mt19937_64;
using diff::Tensor;
using diff::Var;

/// Fully connected layer whose parameters are a linear combination of
/// `basis_size` coefficient sets, theta(a) = sum_l alpha_l * phi_l(a).
///
/// The coefficient sets are stored side by side: weight is in x (L * out) and
/// bias is 1 x (L * out), column block l holding alpha_l. A batch is evaluated
/// with one matmul followed by a per-row basis combination, which equals
/// x * W(a_i) + b(a_i) row by row. With basis_size == 1 this is a plain layer
/// and the basis argument is ignored.
class VcLinear {
 public:
  VcLinear() = default;
  VcLinear(const std::string& name, std::size_t in, std::size_t out, std::size_t basis_size,
           bool with_bias, Rng& rng);

  Var forward(const Var& x, const Tensor& basis) const;
  /// x * W + b before the basis combination, B x (L * out).
  Var project(const Var& x) const;

  /// Parameters at a single treatment: sum_l phi_l(a) alpha_l. Differentiable
  /// with respect to the coefficient sets.
  Var effective_weight(std::span<const double> basis_row) const;
  Var effective_bias(std::span<const double> basis_row) const;

  void collect(std::vector<Var>& out) const;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  std::size_t basis_size() const { return basis_; }
  bool has_bias() const { return bias_.valid(); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var combine(const Var& projected, const Tensor& basis) const;

  std::size_t in_ = 0, out_ = 0, basis_ = 1;
  Var weight_;
  Var bias_;
};

/// Two fully connected layers with an ELU in between (and optionally after).
class MlpBlock {
 public:
  MlpBlock() = default;
  MlpBlock(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
           std::size_t basis_size, bool activate_output, Rng& rng);

  Var forward(const Var& x, const Tensor& basis) const;
  Var forward(const Var& x) const { return forward(x, Tensor{}); }
  void collect(std::vector<Var>& out) const;

  const VcLinear& layer(std::size_t i) const { return i == 0 ? first_ : second_; }

 private:
  VcLinear first_, second_;
  bool activate_output_ = false;
};

/// Stacks a B x L basis `times` times along rows, matching concat(..., axis 0)
/// of `times` B-row blocks.
Tensor repeat_rows(const Tensor& basis, std::size_t times);

}  // namespace learn::nn
