// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "learn/nn/recurrent.hpp"
#include "learn/nn/spline.hpp"

using namespace learn;
using namespace learn::nn;
using learn::testing::grad_check;
using learn::testing::random_tensor;

namespace {

// Plain-loop GRU step used as an oracle: PyTorch gate equations, gates (r, u, n).
std::vector<double> gru_step_ref(const Tensor& wi, const Tensor& bi, const Tensor& wh, const Tensor& bh,
                                 const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t H = h.size();
  auto affine = [](const Tensor& w, const Tensor& b, const std::vector<double>& v, std::size_t col) {
    double s = b[col];
    for (std::size_t k = 0; k < v.size(); ++k) s += v[k] * w.at(k, col);
    return s;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> out(H);
  for (std::size_t j = 0; j < H; ++j) {
    const double r = sig(affine(wi, bi, x, j) + affine(wh, bh, h, j));
    const double u = sig(affine(wi, bi, x, H + j) + affine(wh, bh, h, H + j));
    const double n = std::tanh(affine(wi, bi, x, 2 * H + j) + r * affine(wh, bh, h, 2 * H + j));
    out[j] = (1 - u) * n + u * h[j];
  }
  return out;
}

std::vector<Var> params_of(const auto& block) {
  std::vector<Var> ps;
  block.collect(ps);
  return ps;
}

}  // namespace

TEST_CASE("spline basis values") {
  using Arr = std::array<double, 5>;
  CHECK(spline_basis(0.0) == Arr{1, 0, 0, 0, 0});
  auto k = spline_basis(1.0 / 3.0);
  CHECK(k[1] == doctest::Approx(1.0 / 3));
  CHECK(k[2] == doctest::Approx(1.0 / 9));
  CHECK(k[3] == 0.0);
  CHECK(k[4] == 0.0);
  auto one = spline_basis(1.0);
  const Arr expect{1, 1, 1, 4.0 / 9, 1.0 / 9};
  for (int i = 0; i < 5; ++i) CHECK(one[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  CHECK(spline_basis(0.5)[2] == 0.25);
  CHECK_THROWS(spline_basis(std::nan("")));
  CHECK(spline_basis(1.5) == spline_basis(1.0));
  CHECK(spline_basis(-0.2) == spline_basis(0.0));
}

TEST_CASE("spline basis is continuous and the knot terms vanish left of their knots") {
  for (int i = 0; i <= 1000; ++i) {
    const double a = i / 1000.0;
    const auto b = spline_basis(a);
    if (a <= 1.0 / 3) CHECK(b[3] == 0.0);
    if (a <= 2.0 / 3) CHECK(b[4] == 0.0);
    const auto c = spline_basis(std::min(1.0, a + 1e-7));
    for (int l = 0; l < 5; ++l) CHECK(std::abs(b[l] - c[l]) < 1e-6);
  }
}

TEST_CASE("varying coefficient layer: effective parameters") {
  Rng rng(3);
  VcLinear layer("vc", 3, 2, kSplineBasisSize, true, rng);
  Var w = layer.weight(), b = layer.bias();

  SUBCASE("all coefficients zero gives zero parameters") {
    w.mutable_value().fill(0.0);
    b.mutable_value().fill(0.0);
    for (double a : {0.0, 0.3, 0.9}) {
      const auto basis = spline_basis(a);
      const Tensor ew = layer.effective_weight(basis).value(), eb = layer.effective_bias(basis).value();
      for (double v : ew.data()) CHECK(v == 0.0);
      for (double v : eb.data()) CHECK(v == 0.0);
    }
  }
  SUBCASE("only the constant coefficient set gives a constant map") {
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 2; c < 10; ++c) w.mutable_value().at(r, c) = 0.0;
    for (std::size_t c = 2; c < 10; ++c) b.mutable_value()[c] = 0.0;
    const Tensor w0 = layer.effective_weight(spline_basis(0.0)).value();
    for (double a : {0.2, 0.5, 1.0}) CHECK(layer.effective_weight(spline_basis(a)).value() == w0);
  }
  SUBCASE("gradient wrt the third coefficient set scales by phi_3(a)") {
    const auto basis = spline_basis(0.5);
    Tensor upstream = Tensor::from_rows({{0.7, -1.3}, {2.0, 0.5}, {-0.4, 1.1}});
    Var loss = diff::sum(diff::mul(layer.effective_weight(basis), diff::constant(upstream)));
    diff::backward(loss);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(w.grad().at(r, 4 + c) == doctest::Approx(0.25 * upstream.at(r, c)).epsilon(1e-14));
    auto fd = grad_check(
        [&] { return diff::sum(diff::mul(layer.effective_weight(basis), diff::constant(upstream))); }, {w}, 100,
        1);
    CHECK(fd.failures == 0);
  }
}

TEST_CASE("varying coefficient forward equals per-row effective parameters") {
  Rng rng(8);
  VcLinear layer("vc", 4, 3, kSplineBasisSize, true, rng);
  std::mt19937_64 g(2);
  Tensor x = random_tensor(6, 4, g);
  std::vector<double> a{0.0, 0.1, 0.34, 0.5, 0.8, 1.0};
  Tensor out = layer.forward(diff::constant(x), spline_basis_matrix(a)).value();
  for (std::size_t i = 0; i < 6; ++i) {
    const auto basis = spline_basis(a[i]);
    Var row = diff::constant(Tensor::row(std::span<const double>(x.data().subspan(i * 4, 4))));
    Tensor ref = diff::add(diff::matmul(row, layer.effective_weight(basis)), layer.effective_bias(basis)).value();
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.at(i, c) - ref[c]) < 1e-12);
  }
}

TEST_CASE("varying coefficient parameters are Lipschitz on a grid") {
  Rng rng(4);
  VcLinear layer("vc", 5, 4, kSplineBasisSize, true, rng);
  double bound = 0;  // sum_l |alpha_l| * max |phi_l'| with |phi_l'| <= 2 on [0, 1]
  for (double v : layer.weight().value().data()) bound += 2 * std::abs(v);
  const int n = 257;
  for (int i = 0; i + 1 < n; ++i) {
    const double a0 = double(i) / (n - 1), a1 = double(i + 1) / (n - 1);
    Tensor d0 = layer.effective_weight(spline_basis(a0)).value();
    Tensor d1 = layer.effective_weight(spline_basis(a1)).value();
    double diff = 0;
    for (std::size_t k = 0; k < d0.numel(); ++k) diff += std::abs(d0[k] - d1[k]);
    CHECK(diff <= bound * (a1 - a0) + 1e-12);
  }
}

TEST_CASE("mlp and varying-coefficient mlp gradients") {
  Rng rng(10);
  std::mt19937_64 g(10);
  Tensor x = random_tensor(4, 3, g);
  Tensor basis = spline_basis_matrix(std::vector<double>{0.1, 0.4, 0.7, 0.95});
  for (std::size_t L : {std::size_t{1}, kSplineBasisSize}) {
    MlpBlock mlp("mlp", 3, 6, 2, L, true, rng);
    auto r = grad_check([&] { return diff::sum(diff::square(mlp.forward(diff::constant(x), basis))); },
                        params_of(mlp), 100, 5);
    CHECK_MESSAGE(r.failures == 0, r.first_failure);
  }
}

TEST_CASE("attention pooling") {
  Rng rng(12);
  std::mt19937_64 g(12);
  AttentionBlock att("att", 4, 3, kSplineBasisSize, rng);
  Tensor basis = spline_basis_matrix(std::vector<double>{0.2, 0.6, 0.9});

  SUBCASE("single step returns the step itself") {
    Var r = diff::constant(random_tensor(3, 4, g));
    auto out = att.forward({r}, basis);
    CHECK(out.pooled.value() == r.value());
    for (double w : out.weights.value().data()) CHECK(w == 1.0);
  }
  SUBCASE("identical steps give uniform weights") {
    Var r = diff::constant(random_tensor(3, 4, g));
    auto out = att.forward({r, r, r, r}, basis);
    for (double w : out.weights.value().data()) CHECK(w == doctest::Approx(0.25).epsilon(1e-14));
    for (std::size_t k = 0; k < 12; ++k) CHECK(std::abs(out.pooled.value()[k] - r.value()[k]) < 1e-12);
  }
  SUBCASE("random steps: convex combination") {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Var> seq;
      for (int t = 0; t < 5; ++t) seq.push_back(diff::constant(random_tensor(3, 4, g, -3, 3)));
      auto out = att.forward(seq, basis);
      for (std::size_t i = 0; i < 3; ++i) {
        double total = 0;
        for (std::size_t t = 0; t < 5; ++t) {
          CHECK(out.weights.value().at(i, t) >= 0.0);
          total += out.weights.value().at(i, t);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
        for (std::size_t c = 0; c < 4; ++c) {
          double lo = 1e300, hi = -1e300;
          for (auto& s : seq) lo = std::min(lo, s.value().at(i, c)), hi = std::max(hi, s.value().at(i, c));
          CHECK(out.pooled.value().at(i, c) >= lo - 1e-12);
          CHECK(out.pooled.value().at(i, c) <= hi + 1e-12);
        }
      }
    }
  }
  SUBCASE("gradient check") {
    std::vector<Var> seq;
    for (int t = 0; t < 3; ++t) seq.push_back(diff::parameter(random_tensor(3, 4, g), "r" + std::to_string(t)));
    auto ps = params_of(att);
    ps.insert(ps.end(), seq.begin(), seq.end());
    auto r = grad_check([&] { return diff::sum(diff::square(att.forward(seq, basis).pooled)); }, ps, 100, 2);
    CHECK_MESSAGE(r.failures == 0, r.first_failure);
  }
  CHECK_THROWS_AS(att.forward({}, basis), diff::ShapeError);
}

TEST_CASE("bidirectional gru") {
  Rng rng(21);
  std::mt19937_64 g(21);

  SUBCASE("single step matches two reference cells") {
    BiGruBlock gru("q", 2, 3, 1, rng);
    Tensor x = random_tensor(1, 2, g);
    auto out = gru.forward({diff::constant(x)}, Tensor{});
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].shape() == diff::Shape{1, 6});
    std::vector<double> xv(x.data().begin(), x.data().end()), h0(3, 0.0);
    auto ref_f = gru_step_ref(gru.forward_cell().input_layer().weight().value(),
                              gru.forward_cell().input_layer().bias().value(),
                              gru.forward_cell().hidden_layer().weight().value(),
                              gru.forward_cell().hidden_layer().bias().value(), xv, h0);
    auto ref_b = gru_step_ref(gru.backward_cell().input_layer().weight().value(),
                              gru.backward_cell().input_layer().bias().value(),
                              gru.backward_cell().hidden_layer().weight().value(),
                              gru.backward_cell().hidden_layer().bias().value(), xv, h0);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(out[0].value()[j] - ref_f[j]) < 1e-12);
      CHECK(std::abs(out[0].value()[3 + j] - ref_b[j]) < 1e-12);
    }
  }
  SUBCASE("multi-step matches the reference recurrence") {
    BiGruBlock gru("q", 2, 3, 1, rng);
    std::vector<Var> seq;
    std::vector<std::vector<double>> xs;
    for (int t = 0; t < 4; ++t) {
      Tensor x = random_tensor(1, 2, g);
      xs.emplace_back(x.data().begin(), x.data().end());
      seq.push_back(diff::constant(x));
    }
    auto out = gru.forward(seq, Tensor{});
    const auto& c = gru.forward_cell();
    std::vector<double> h(3, 0.0);
    for (int t = 0; t < 4; ++t) {
      h = gru_step_ref(c.input_layer().weight().value(), c.input_layer().bias().value(),
                       c.hidden_layer().weight().value(), c.hidden_layer().bias().value(), xs[t], h);
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(out[t].value()[j] - h[j]) < 1e-12);
    }
    const auto& cb = gru.backward_cell();
    h.assign(3, 0.0);
    for (int t = 3; t >= 0; --t) {
      h = gru_step_ref(cb.input_layer().weight().value(), cb.input_layer().bias().value(),
                       cb.hidden_layer().weight().value(), cb.hidden_layer().bias().value(), xs[t], h);
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(out[t].value()[3 + j] - h[j]) < 1e-12);
    }
  }
  SUBCASE("zero input and zero biases keep the zero state") {
    BiGruBlock gru("q", 2, 3, 1, rng);
    for (auto& p : params_of(gru))
      if (p.name().ends_with("bias")) Var(p).mutable_value().fill(0.0);
    Var zero = diff::constant(Tensor::matrix(2, 2));
    const auto states = gru.forward({zero, zero, zero}, Tensor{});
    for (auto& o : states)
      for (double v : o.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("gradient check t0=3, d=2, H=3") {
    BiGruBlock gru("q", 2, 3, kSplineBasisSize, rng);
    Tensor basis = spline_basis_matrix(std::vector<double>{0.25, 0.75});
    std::vector<Var> seq;
    for (int t = 0; t < 3; ++t) seq.push_back(diff::parameter(random_tensor(2, 2, g), "x" + std::to_string(t)));
    auto ps = params_of(gru);
    ps.insert(ps.end(), seq.begin(), seq.end());
    auto r = grad_check(
        [&] {
          auto out = gru.forward(seq, basis);
          return diff::sum(diff::square(diff::concat(out, 1)));
        },
        ps, 100, 4);
    CHECK_MESSAGE(r.failures == 0, r.first_failure);
  }
  SUBCASE("step-code fast path equals explicit concatenation") {
    BiGruBlock gru("q", 4, 3, kSplineBasisSize, rng);
    Tensor basis = spline_basis_matrix(std::vector<double>{0.1, 0.5, 0.9});
    Var z = diff::constant(random_tensor(3, 3, g));
    std::vector<double> codes{1.0 / 3, 2.0 / 3, 1.0};
    std::vector<Var> seq;
    for (double c : codes) seq.push_back(diff::concat({z, diff::constant(Tensor::matrix(3, 1, c))}, 1));
    auto slow = gru.forward(seq, basis);
    auto fast = gru.forward_with_step_codes(z, codes, basis);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < slow[t].value().numel(); ++k)
        CHECK(std::abs(slow[t].value()[k] - fast[t].value()[k]) < 1e-12);
  }
  SUBCASE("shape errors") {
    BiGruBlock gru("q", 2, 3, 1, rng);
    CHECK_THROWS_AS(gru.forward({}, Tensor{}), diff::ShapeError);
    CHECK_THROWS_AS(gru.forward({diff::constant(Tensor::matrix(1, 3))}, Tensor{}), diff::ShapeError);
  }
}
