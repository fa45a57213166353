// SPDX-License-Identifier: Apache-2.0
#include "learn/nn/recurrent.hpp"

namespace learn::nn {

GruCell::GruCell(const std::string& name, std::size_t input, std::size_t hidden, std::size_t basis_size,
                 Rng& rng)
    : input_(name + "/input", input, 3 * hidden, basis_size, true, rng),
      hidden_(name + "/hidden", hidden, 3 * hidden, basis_size, true, rng),
      hidden_size_(hidden) {}

Var GruCell::step(const Var& input_gates, const Var& h, const Tensor& basis) const {
  const std::size_t H = hidden_size_;
  Var hidden_gates = hidden_.forward(h, basis);
  Var r = diff::sigmoid(diff::add(diff::slice(input_gates, 1, 0, H), diff::slice(hidden_gates, 1, 0, H)));
  Var u = diff::sigmoid(diff::add(diff::slice(input_gates, 1, H, 2 * H), diff::slice(hidden_gates, 1, H, 2 * H)));
  Var n = diff::tanh(diff::add(diff::slice(input_gates, 1, 2 * H, 3 * H),
                               diff::mul(r, diff::slice(hidden_gates, 1, 2 * H, 3 * H))));
  // (1 - u) * n + u * h == n + u * (h - n)
  return diff::add(n, diff::mul(u, diff::sub(h, n)));
}

void GruCell::collect(std::vector<Var>& out) const {
  input_.collect(out);
  hidden_.collect(out);
}

BiGruBlock::BiGruBlock(const std::string& name, std::size_t input, std::size_t hidden, std::size_t basis_size,
                       Rng& rng)
    : fwd_(name + "/fwd", input, hidden, basis_size, rng),
      bwd_(name + "/bwd", input, hidden, basis_size, rng),
      input_size_(input) {}

std::vector<Var> BiGruBlock::run(const std::vector<Var>& fwd_gates, const std::vector<Var>& bwd_gates,
                                 const Tensor& basis) const {
  const std::size_t steps = fwd_gates.size();
  const std::size_t batch = fwd_gates.front().rows();
  const Var zero = diff::constant(Tensor::matrix(batch, hidden_size()));

  std::vector<Var> forward_states(steps), backward_states(steps);
  Var h = zero;
  for (std::size_t t = 0; t < steps; ++t) forward_states[t] = h = fwd_.step(fwd_gates[t], h, basis);
  h = zero;
  for (std::size_t t = steps; t-- > 0;) backward_states[t] = h = bwd_.step(bwd_gates[t], h, basis);

  std::vector<Var> out(steps);
  for (std::size_t t = 0; t < steps; ++t) out[t] = diff::concat({forward_states[t], backward_states[t]}, 1);
  return out;
}

std::vector<Var> BiGruBlock::forward(const std::vector<Var>& inputs, const Tensor& basis) const {
  if (inputs.empty()) throw diff::ShapeError("BiGruBlock: empty sequence");
  std::vector<Var> fwd_gates, bwd_gates;
  for (const auto& x : inputs) {
    if (x.cols() != input_size_ || x.rows() != inputs.front().rows()) {
      throw diff::ShapeError("BiGruBlock: step input " + diff::shape_str(x.shape()) + " vs expected width " +
                             std::to_string(input_size_));
    }
    fwd_gates.push_back(fwd_.input_layer().forward(x, basis));
    bwd_gates.push_back(bwd_.input_layer().forward(x, basis));
  }
  return run(fwd_gates, bwd_gates, basis);
}

namespace {

// Gates for inputs [z, code_t]: project z through all rows but the last, then
// add code_t times the last weight row (before the basis combination).
std::vector<Var> coded_gates(const VcLinear& layer, const Var& z, std::span<const double> codes,
                             const Tensor& basis) {
  const std::size_t dz = z.cols();
  const Var& w = layer.weight();
  Var projected = diff::matmul(z, diff::slice(w, 0, 0, dz));
  if (layer.has_bias()) projected = diff::add(projected, layer.bias());
  Var code_row = diff::slice(w, 0, dz, dz + 1);
  std::vector<Var> gates;
  for (double code : codes) {
    Var pre = diff::add(projected, diff::scale(code_row, code));
    gates.push_back(layer.basis_size() == 1 ? pre : diff::basis_combine(pre, basis));
  }
  return gates;
}

}  // namespace

std::vector<Var> BiGruBlock::forward_with_step_codes(const Var& z, std::span<const double> codes,
                                                     const Tensor& basis) const {
  if (codes.empty()) throw diff::ShapeError("BiGruBlock: empty sequence");
  if (z.cols() + 1 != input_size_) {
    throw diff::ShapeError("BiGruBlock: representation " + diff::shape_str(z.shape()) +
                           " plus step code does not match input width " + std::to_string(input_size_));
  }
  return run(coded_gates(fwd_.input_layer(), z, codes, basis), coded_gates(bwd_.input_layer(), z, codes, basis),
             basis);
}

void BiGruBlock::collect(std::vector<Var>& out) const {
  fwd_.collect(out);
  bwd_.collect(out);
}

AttentionBlock::AttentionBlock(const std::string& name, std::size_t input, std::size_t attention,
                               std::size_t basis_size, Rng& rng)
    : project_(name + "/project", input, attention, basis_size, true, rng),
      score_(name + "/score", attention, 1, basis_size, false, rng) {}

AttentionOutput AttentionBlock::forward(const std::vector<Var>& sequence, const Tensor& basis) const {
  if (sequence.empty()) throw diff::ShapeError("AttentionBlock: empty sequence");
  const std::size_t steps = sequence.size();
  const std::size_t batch = sequence.front().rows();

  // Score all steps in one pass over the stacked (t0 * B) rows.
  Var stacked = steps == 1 ? sequence.front() : diff::concat(sequence, 0);
  const Tensor stacked_basis = project_.basis_size() == 1 ? Tensor{} : repeat_rows(basis, steps);
  Var scores = score_.forward(diff::tanh(project_.forward(stacked, stacked_basis)), stacked_basis);

  std::vector<Var> columns;
  for (std::size_t t = 0; t < steps; ++t) columns.push_back(diff::slice(scores, 0, t * batch, (t + 1) * batch));
  Var weights = diff::softmax(steps == 1 ? columns.front() : diff::concat(columns, 1), 1);

  Var pooled;
  for (std::size_t t = 0; t < steps; ++t) {
    Var term = diff::scale_rows(sequence[t], diff::slice(weights, 1, t, t + 1));
    pooled = pooled.valid() ? diff::add(pooled, term) : term;
  }
  return {pooled, weights};
}

void AttentionBlock::collect(std::vector<Var>& out) const {
  project_.collect(out);
  score_.collect(out);
}

}  // namespace learn::nn
