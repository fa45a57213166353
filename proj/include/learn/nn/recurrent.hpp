// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional GRU and attention pooling over a batch of sequences.
//
// Sequences are represented step-major: a vector of t0 matrices, each B x d.
// All layers accept a B x L basis so the cell parameters can vary with the
// treatment of each row (pass basis_size 1 for ordinary layers).
#pragma once

#include <vector>

#include "learn/nn/layers.hpp"

namespace learn::nn {

/// One direction of a GRU:
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   u = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - u) * n + u * h
/// with h_0 = 0. Gate blocks are laid out (r, u, n) along the 3H columns.
class GruCell {
 public:
  GruCell() = default;
  GruCell(const std::string& name, std::size_t input, std::size_t hidden, std::size_t basis_size, Rng& rng);

  /// One step given the already projected input gates (B x 3H).
  Var step(const Var& input_gates, const Var& h, const Tensor& basis) const;

  const VcLinear& input_layer() const { return input_; }
  const VcLinear& hidden_layer() const { return hidden_; }
  std::size_t hidden_size() const { return hidden_size_; }
  void collect(std::vector<Var>& out) const;

 private:
  VcLinear input_, hidden_;
  std::size_t hidden_size_ = 0;
};

class BiGruBlock {
 public:
  BiGruBlock() = default;
  BiGruBlock(const std::string& name, std::size_t input, std::size_t hidden, std::size_t basis_size, Rng& rng);

  /// Returns t0 outputs, each B x 2H: [forward state, backward state].
  std::vector<Var> forward(const std::vector<Var>& inputs, const Tensor& basis) const;

  /// Same as forward() on inputs [z, code_t] for t = 0..t0-1 without building
  /// the concatenated inputs: z is projected once and the step code enters
  /// through the last input row of each direction's weight.
  std::vector<Var> forward_with_step_codes(const Var& z, std::span<const double> codes,
                                           const Tensor& basis) const;

  std::size_t input_size() const { return input_size_; }
  std::size_t hidden_size() const { return fwd_.hidden_size(); }
  const GruCell& forward_cell() const { return fwd_; }
  const GruCell& backward_cell() const { return bwd_; }
  void collect(std::vector<Var>& out) const;

 private:
  std::vector<Var> run(const std::vector<Var>& fwd_gates, const std::vector<Var>& bwd_gates,
                       const Tensor& basis) const;

  GruCell fwd_, bwd_;
  std::size_t input_size_ = 0;
};

struct AttentionOutput {
  Var pooled;   // B x d
  Var weights;  // B x t0, rows sum to 1
};

/// score_t = V^T tanh(W r_t + b); alpha = softmax over t; pooled = sum_t alpha_t r_t.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const std::string& name, std::size_t input, std::size_t attention, std::size_t basis_size,
                 Rng& rng);

  AttentionOutput forward(const std::vector<Var>& sequence, const Tensor& basis) const;
  void collect(std::vector<Var>& out) const;

  const VcLinear& projection() const { return project_; }
  const VcLinear& scorer() const { return score_; }

 private:
  VcLinear project_, score_;
};

}  // namespace learn::nn
