// SPDX-License-Identifier: Apache-2.0
#include "learn/diff/var.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace learn::diff {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

MapC view(const Tensor& t) { return MapC(t.data().data(), t.rows(), t.cols()); }
MapM view(Tensor& t) { return MapM(t.data().data(), t.rows(), t.cols()); }

Var make(Tensor value, const std::vector<Var>& parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

// Gradient buffer of parent k, or nullptr when that parent takes no gradient.
Tensor* pgrad(Node& self, std::size_t k) {
  Node& p = *self.parents[k];
  return p.requires_grad ? &p.grad : nullptr;
}

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

enum class Bcast { kSame, kRow };

Bcast check_binary(const Var& a, const Var& b, const char* op) {
  require_matrix(a, op);
  require_matrix(b, op);
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

// Accumulates an elementwise gradient into a possibly row-broadcast operand.
void accumulate_bcast(Tensor& dst, const Tensor& src, Bcast mode) {
  if (mode == Bcast::kSame) {
    for (std::size_t i = 0; i < src.numel(); ++i) dst[i] += src[i];
    return;
  }
  const std::size_t n = src.cols();
  for (std::size_t r = 0; r < src.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) dst[c] += src[r * n + c];
  }
}

template <typename Fn>
Tensor elementwise(const Tensor& a, const Tensor& b, Bcast mode, Fn fn) {
  Tensor out(a.shape());
  if (mode == Bcast::kSame) {
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = fn(a[i], b[i]);
  } else {
    const std::size_t n = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] = fn(a[r * n + c], b[c]);
    }
  }
  return out;
}

inline double bval(const Tensor& b, Bcast mode, std::size_t i, std::size_t cols) {
  return mode == Bcast::kSame ? b[i] : b[i % cols];
}

// Unary op given forward f(x) and derivative d(x, y).
template <typename F, typename D>
Var unary(const Var& a, F f, D d) {
  require_matrix(a, "unary");
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return make(std::move(out), {a}, [d](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    const Tensor& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.numel(); ++i) (*g)[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

}  // namespace

void Var::zero_grad() {
  if (node_) node_->grad = Tensor(node_->value.shape(), 0.0);
}

Var parameter(Tensor value, std::string name) {
  auto node = std::make_shared<Node>();
  node->grad = Tensor(value.shape(), 0.0);
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  if (!loss.valid() || loss.value().numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&loss.node(), 0);
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad = Tensor(n->value.shape(), 0.0);
  loss.node().grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  view(out).noalias() = view(a.value()) * view(b.value());
  return make(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* ga = pgrad(self, 0)) view(*ga).noalias() += view(self.grad) * view(bv).transpose();
    if (Tensor* gb = pgrad(self, 1)) view(*gb).noalias() += view(av).transpose() * view(self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  const Bcast mode = check_binary(a, b, "add");
  Tensor out = elementwise(a.value(), b.value(), mode, [](double x, double y) { return x + y; });
  return make(std::move(out), {a, b}, [mode](Node& self) {
    if (Tensor* ga = pgrad(self, 0)) accumulate_bcast(*ga, self.grad, Bcast::kSame);
    if (Tensor* gb = pgrad(self, 1)) accumulate_bcast(*gb, self.grad, mode);
  });
}

Var sub(const Var& a, const Var& b) {
  const Bcast mode = check_binary(a, b, "sub");
  Tensor out = elementwise(a.value(), b.value(), mode, [](double x, double y) { return x - y; });
  return make(std::move(out), {a, b}, [mode](Node& self) {
    if (Tensor* ga = pgrad(self, 0)) accumulate_bcast(*ga, self.grad, Bcast::kSame);
    if (Tensor* gb = pgrad(self, 1)) {
      Tensor negated = self.grad;
      for (auto& v : negated.data()) v = -v;
      accumulate_bcast(*gb, negated, mode);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  const Bcast mode = check_binary(a, b, "mul");
  Tensor out = elementwise(a.value(), b.value(), mode, [](double x, double y) { return x * y; });
  return make(std::move(out), {a, b}, [mode](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const std::size_t n = av.cols();
    if (Tensor* ga = pgrad(self, 0)) {
      for (std::size_t i = 0; i < av.numel(); ++i) (*ga)[i] += self.grad[i] * bval(bv, mode, i, n);
    }
    if (Tensor* gb = pgrad(self, 1)) {
      Tensor local(av.shape());
      for (std::size_t i = 0; i < av.numel(); ++i) local[i] = self.grad[i] * av[i];
      accumulate_bcast(*gb, local, mode);
    }
  });
}

Var div(const Var& a, const Var& b) {
  const Bcast mode = check_binary(a, b, "div");
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: zero in denominator of shape " + shape_str(b.shape()));
  }
  Tensor out = elementwise(a.value(), b.value(), mode, [](double x, double y) { return x / y; });
  return make(std::move(out), {a, b}, [mode](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const std::size_t n = av.cols();
    if (Tensor* ga = pgrad(self, 0)) {
      for (std::size_t i = 0; i < av.numel(); ++i) (*ga)[i] += self.grad[i] / bval(bv, mode, i, n);
    }
    if (Tensor* gb = pgrad(self, 1)) {
      Tensor local(av.shape());
      for (std::size_t i = 0; i < av.numel(); ++i) {
        const double d = bval(bv, mode, i, n);
        local[i] = -self.grad[i] * av[i] / (d * d);
      }
      accumulate_bcast(*gb, local, mode);
    }
  });
}

Var scale(const Var& a, double factor) { return affine(a, factor, 0.0); }

Var affine(const Var& a, double factor, double offset) {
  return unary(
      a, [=](double x) { return factor * x + offset; }, [=](double, double) { return factor; });
}

Var neg(const Var& a) { return affine(a, -1.0, 0.0); }

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: nonpositive input in tensor " + shape_str(a.shape()));
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var elu(const Var& a, double alpha) {
  return unary(
      a, [alpha](double x) { return x >= 0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double y) { return x >= 0 ? 1.0 : y + alpha; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax(const Var& a, int axis) {
  require_matrix(a, "softmax");
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(x.shape());
  // Lines along `axis`: for axis 1 each row, for axis 0 each column.
  const std::size_t lines = axis == 1 ? m : n;
  const std::size_t len = axis == 1 ? n : m;
  auto idx = [=](std::size_t line, std::size_t k) {
    return axis == 1 ? line * n + k : k * n + line;
  };
  for (std::size_t l = 0; l < lines; ++l) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[idx(l, k)]);
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) total += (out[idx(l, k)] = std::exp(x[idx(l, k)] - mx));
    for (std::size_t k = 0; k < len; ++k) out[idx(l, k)] /= total;
  }
  return make(std::move(out), {a}, [=](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    const Tensor& y = self.value;
    for (std::size_t l = 0; l < lines; ++l) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += self.grad[idx(l, k)] * y[idx(l, k)];
      for (std::size_t k = 0; k < len; ++k) {
        (*g)[idx(l, k)] += y[idx(l, k)] * (self.grad[idx(l, k)] - dot);
      }
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_matrix(p, "concat");
  const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t f = axis == 0 ? p.cols() : p.rows();
    if (f != fixed) {
      throw ShapeError("concat: mismatched shapes " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()));
    }
    total += axis == 0 ? p.rows() : p.cols();
  }
  Tensor out = axis == 0 ? Tensor::matrix(total, fixed) : Tensor::matrix(fixed, total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const Tensor& v = p.value();
    if (axis == 0) {
      std::copy(v.data().begin(), v.data().end(), out.data().begin() + off * fixed);
      off += v.rows();
    } else {
      for (std::size_t r = 0; r < fixed; ++r) {
        for (std::size_t c = 0; c < v.cols(); ++c) out.at(r, off + c) = v.at(r, c);
      }
      off += v.cols();
    }
  }
  return make(std::move(out), parts, [axis, offsets, fixed](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Tensor* g = pgrad(self, k);
      if (!g) continue;
      const std::size_t o = offsets[k];
      if (axis == 0) {
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[o * fixed + i];
      } else {
        for (std::size_t r = 0; r < fixed; ++r) {
          for (std::size_t c = 0; c < g->cols(); ++c) g->at(r, c) += self.grad.at(r, o + c);
        }
      }
    }
  });
}

Var slice(const Var& a, int axis, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice");
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? a.rows() : a.cols();
  if (begin > end || end > extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_str(a.shape()));
  }
  const Tensor& v = a.value();
  Tensor out = axis == 0 ? Tensor::matrix(end - begin, v.cols()) : Tensor::matrix(v.rows(), end - begin);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out.at(r, c) = axis == 0 ? v.at(begin + r, c) : v.at(r, begin + c);
    }
  }
  return make(std::move(out), {a}, [axis, begin](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < self.grad.rows(); ++r) {
      for (std::size_t c = 0; c < self.grad.cols(); ++c) {
        if (axis == 0) {
          g->at(begin + r, c) += self.grad.at(r, c);
        } else {
          g->at(r, begin + c) += self.grad.at(r, c);
        }
      }
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make(Tensor::scalar(total), {a}, [](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    const double up = self.grad[0];
    for (auto& v : g->data()) v += up;
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().numel());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_axis(const Var& a, int axis) {
  require_matrix(a, "sum_axis");
  if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  const Tensor& v = a.value();
  Tensor out = axis == 0 ? Tensor::matrix(1, v.cols()) : Tensor::matrix(v.rows(), 1);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < v.cols(); ++c) out[axis == 0 ? c : r] += v.at(r, c);
  }
  return make(std::move(out), {a}, [axis](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < g->rows(); ++r) {
      for (std::size_t c = 0; c < g->cols(); ++c) g->at(r, c) += self.grad[axis == 0 ? c : r];
    }
  });
}

Var squared_error(const Var& a, const Var& b) {
  require_matrix(a, "squared_error");
  require_matrix(b, "squared_error");
  if (a.shape() != b.shape()) {
    throw ShapeError("squared_error: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.value().numel(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    total += d * d;
  }
  return make(Tensor::scalar(total), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const double up = self.grad[0];
    Tensor* ga = pgrad(self, 0);
    Tensor* gb = pgrad(self, 1);
    for (std::size_t i = 0; i < av.numel(); ++i) {
      const double d = 2.0 * up * (av[i] - bv[i]);
      if (ga) (*ga)[i] += d;
      if (gb) (*gb)[i] -= d;
    }
  });
}

Var scale_rows(const Var& a, const Var& s) {
  require_matrix(a, "scale_rows");
  require_matrix(s, "scale_rows");
  if (s.cols() != 1 || s.rows() != a.rows()) {
    throw ShapeError("scale_rows: expected a column of " + std::to_string(a.rows()) +
                     " scales, got " + shape_str(s.shape()) + " for " + shape_str(a.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c) * sv[r];
  }
  return make(std::move(out), {a, s}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& sv = self.parents[1]->value;
    Tensor* ga = pgrad(self, 0);
    Tensor* gs = pgrad(self, 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < av.cols(); ++c) {
        const double up = self.grad.at(r, c);
        if (ga) ga->at(r, c) += up * sv[r];
        acc += up * av.at(r, c);
      }
      if (gs) (*gs)[r] += acc;
    }
  });
}

Var basis_combine(const Var& a, const Tensor& basis) {
  require_matrix(a, "basis_combine");
  if (basis.rank() != 2 || basis.rows() != a.rows() || basis.cols() == 0 ||
      a.cols() % basis.cols() != 0) {
    throw ShapeError("basis_combine: input " + shape_str(a.shape()) + " vs basis " +
                     shape_str(basis.shape()));
  }
  const std::size_t rows = a.rows(), terms = basis.cols(), width = a.cols() / terms;
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(rows, width);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t l = 0; l < terms; ++l) {
      const double phi = basis.at(i, l);
      if (phi == 0.0) continue;
      const double* src = &av.data()[i * av.cols() + l * width];
      double* dst = &out.data()[i * width];
      for (std::size_t c = 0; c < width; ++c) dst[c] += phi * src[c];
    }
  }
  return make(std::move(out), {a}, [basis, terms, width](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    const std::size_t cols = g->cols();
    for (std::size_t i = 0; i < self.grad.rows(); ++i) {
      const double* up = &self.grad.data()[i * width];
      for (std::size_t l = 0; l < terms; ++l) {
        const double phi = basis.at(i, l);
        if (phi == 0.0) continue;
        double* dst = &g->data()[i * cols + l * width];
        for (std::size_t c = 0; c < width; ++c) dst[c] += phi * up[c];
      }
    }
  });
}

Var pairwise_sq_dist(const Var& a, const Var& b) {
  require_matrix(a, "pairwise_sq_dist");
  require_matrix(b, "pairwise_sq_dist");
  if (a.cols() != b.cols()) {
    throw ShapeError("pairwise_sq_dist: feature dims differ for " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = av.at(i, k) - bv.at(j, k);
        acc += diff * diff;
      }
      out.at(i, j) = acc;
    }
  }
  return make(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const auto G = view(self.grad);
    const auto A = view(av);
    const auto B = view(bv);
    if (Tensor* ga = pgrad(self, 0)) {
      const Eigen::VectorXd rs = G.rowwise().sum();
      view(*ga).noalias() += 2.0 * (rs.asDiagonal() * A - G * B);
    }
    if (Tensor* gb = pgrad(self, 1)) {
      const Eigen::VectorXd cs = G.colwise().sum().transpose();
      view(*gb).noalias() += 2.0 * (cs.asDiagonal() * B - G.transpose() * A);
    }
  });
}

}  // namespace learn::diff
