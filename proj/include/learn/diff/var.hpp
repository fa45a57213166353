// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on rank-2 tensors.
//
// Every operation records a node holding its value, its parents and a closure
// that pushes the node's gradient to those parents. The graph is owned by the
// nodes themselves (shared ownership flowing from outputs to inputs), so it is
// released once the last handle to the loss goes away. Parameters are leaves
// that outlive any single graph.
//
// Gradient semantics: backward() zeroes the gradient of every node reachable
// from the loss, then accumulates. Calling backward() twice on the same loss
// therefore yields the same gradients, not twice the gradients.
#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "learn/diff/tensor.hpp"

namespace learn::diff {

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  std::string name;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  bool valid() const noexcept { return static_cast<bool>(node_); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that receives gradients.
Var parameter(Tensor value, std::string name = {});
/// Leaf that never receives gradients.
Var constant(Tensor value);

/// While alive, newly created nodes record no parents (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Runs reverse-mode accumulation from a scalar (1x1) loss.
void backward(const Var& loss);

// ---- primitives -----------------------------------------------------------
// Elementwise binary ops accept identical shapes, or a 1 x n right operand
// broadcast over the rows of an m x n left operand.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var affine(const Var& a, double factor, double offset);
Var neg(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var elu(const Var& a, double alpha = 1.0);
Var square(const Var& a);

Var softmax(const Var& a, int axis);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, std::size_t begin, std::size_t end);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, int axis);
/// sum((a - b)^2), a scalar.
Var squared_error(const Var& a, const Var& b);

/// Multiplies row i of `a` (m x n) by s[i] where `s` is m x 1.
Var scale_rows(const Var& a, const Var& s);

/// out[i, c] = sum_l basis[i, l] * a[i, l * m + c]; `a` is B x (L*m), `basis` B x L.
/// The basis is treated as data (no gradient flows into it).
Var basis_combine(const Var& a, const Tensor& basis);

/// d[i, j] = ||a_i - b_j||^2 for row sets a (n x d) and b (m x d).
Var pairwise_sq_dist(const Var& a, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace learn::diff
