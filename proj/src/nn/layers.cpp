// SPDX-License-Identifier: Apache-2.0
#include "learn/nn/layers.hpp"

#include <cmath>

namespace learn::nn {

VcLinear::VcLinear(const std::string& name, std::size_t in, std::size_t out, std::size_t basis_size,
                   bool with_bias, Rng& rng)
    : in_(in), out_(out), basis_(basis_size) {
  if (in == 0 || out == 0 || basis_size == 0) {
    throw diff::ShapeError("VcLinear '" + name + "': zero-sized dimension");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> init(-bound, bound);
  Tensor w = Tensor::matrix(in, basis_size * out);
  for (auto& v : w.data()) v = init(rng);
  weight_ = diff::parameter(std::move(w), name + "/weight");
  if (with_bias) {
    Tensor b = Tensor::matrix(1, basis_size * out);
    for (auto& v : b.data()) v = init(rng);
    bias_ = diff::parameter(std::move(b), name + "/bias");
  }
}

Var VcLinear::project(const Var& x) const {
  Var y = diff::matmul(x, weight_);
  return bias_.valid() ? diff::add(y, bias_) : y;
}

Var VcLinear::combine(const Var& projected, const Tensor& basis) const {
  if (basis_ == 1) return projected;
  if (basis.rank() != 2 || basis.cols() != basis_) {
    throw diff::ShapeError("VcLinear: basis of shape " + diff::shape_str(basis.shape()) +
                           " does not have " + std::to_string(basis_) + " columns");
  }
  return diff::basis_combine(projected, basis);
}

Var VcLinear::forward(const Var& x, const Tensor& basis) const { return combine(project(x), basis); }

namespace {

Var weighted_blocks(const Var& param, std::size_t width, std::span<const double> basis_row) {
  Var total;
  for (std::size_t l = 0; l < basis_row.size(); ++l) {
    Var term = diff::scale(diff::slice(param, 1, l * width, (l + 1) * width), basis_row[l]);
    total = total.valid() ? diff::add(total, term) : term;
  }
  return total;
}

}  // namespace

Var VcLinear::effective_weight(std::span<const double> basis_row) const {
  if (basis_row.size() != basis_) throw diff::ShapeError("effective_weight: basis size mismatch");
  return weighted_blocks(weight_, out_, basis_row);
}

Var VcLinear::effective_bias(std::span<const double> basis_row) const {
  if (basis_row.size() != basis_) throw diff::ShapeError("effective_bias: basis size mismatch");
  if (!bias_.valid()) throw std::logic_error("effective_bias: layer has no bias");
  return weighted_blocks(bias_, out_, basis_row);
}

void VcLinear::collect(std::vector<Var>& out) const {
  out.push_back(weight_);
  if (bias_.valid()) out.push_back(bias_);
}

MlpBlock::MlpBlock(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                   std::size_t basis_size, bool activate_output, Rng& rng)
    : first_(name + "/layer0", in, hidden, basis_size, true, rng),
      second_(name + "/layer1", hidden, out, basis_size, true, rng),
      activate_output_(activate_output) {}

Var MlpBlock::forward(const Var& x, const Tensor& basis) const {
  Var h = diff::elu(first_.forward(x, basis));
  Var y = second_.forward(h, basis);
  return activate_output_ ? diff::elu(y) : y;
}

void MlpBlock::collect(std::vector<Var>& out) const {
  first_.collect(out);
  second_.collect(out);
}

Tensor repeat_rows(const Tensor& basis, std::size_t times) {
  if (basis.empty()) return basis;
  Tensor out = Tensor::matrix(basis.rows() * times, basis.cols());
  for (std::size_t t = 0; t < times; ++t) {
    std::copy(basis.data().begin(), basis.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(t * basis.numel()));
  }
  return out;
}

}  // namespace learn::nn
