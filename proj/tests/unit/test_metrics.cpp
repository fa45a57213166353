// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "learn/data/generators.hpp"
#include "learn/metrics/metrics.hpp"

using namespace learn::metrics;

namespace {

MatrixXd normal_matrix(Eigen::Index n, Eigen::Index d, std::mt19937_64& g) {
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(g);
  return m;
}

// Direct O(n^2) evaluation of tr(K H L H) / n^2 with explicit H.
double reference_hsic(const MatrixXd& k, const MatrixXd& l) {
  const auto n = k.rows();
  const MatrixXd h = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / n);
  return (k * h * l * h).trace() / static_cast<double>(n * n);
}

}  // namespace

TEST_CASE("mise closed forms") {
  const auto grid = learn::data::treatment_grid(65);
  const Eigen::Index n = 4, g = 65;
  MatrixXd truth(n, g);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (Eigen::Index i = 0; i < truth.size(); ++i) truth.data()[i] = u(rng);
  CHECK(mise(truth, truth, grid) == 0.0);
  const double c = 0.7;
  CHECK(mise(truth, truth.array() + c, grid) == doctest::Approx(c * c).epsilon(1e-12));
  MatrixXd linear = truth;
  for (Eigen::Index k = 0; k < g; ++k) linear.col(k).array() += grid[static_cast<std::size_t>(k)];
  CHECK(std::abs(mise(truth, linear, grid) - 1.0 / 3.0) <= 1e-3);
  CHECK_THROWS_AS(mise(MatrixXd(), MatrixXd(), grid), MetricError);
  CHECK_THROWS_AS(mise(truth, truth.leftCols(3), grid), MetricError);
}

TEST_CASE("hsic matches the explicit trace form and is zero for constants") {
  std::mt19937_64 g(2);
  MatrixXd x = normal_matrix(20, 3, g), y = normal_matrix(20, 2, g);
  CHECK(hsic(x, y).value == doctest::Approx(reference_hsic(gaussian_gram(x), gaussian_gram(y))).epsilon(1e-10));
  auto constant = hsic(x, MatrixXd::Constant(20, 1, 4.0));
  CHECK(constant.value == 0.0);
  CHECK(constant.degenerate);
  CHECK(hsic(x, x).value > 0.0);
  CHECK_THROWS_AS(hsic(x.topRows(4), y.topRows(4)), MetricError);
  CHECK_THROWS_AS(hsic(x, y.topRows(10)), MetricError);
}

TEST_CASE("hsic against its permutation null") {
  std::mt19937_64 g(3);
  MatrixXd x = normal_matrix(60, 2, g);
  MatrixXd shuffled = x;
  std::vector<Eigen::Index> order(60);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), g);
  for (Eigen::Index i = 0; i < 60; ++i) shuffled.row(i) = x.row(order[i]);
  auto indep = hsic_permutation_test(x, shuffled, 200, 1);
  CHECK(indep.statistic < indep.quantile(0.95));
  auto same = hsic_permutation_test(x, x, 200, 1);
  CHECK(same.statistic > same.quantile(0.99));
  CHECK(same.p_value == doctest::Approx(1.0 / 201.0));
  // Seeded null is reproducible.
  CHECK(hsic_permutation_test(x, shuffled, 50, 9).null == hsic_permutation_test(x, shuffled, 50, 9).null);
}

TEST_CASE("hsic permutation test rejects at the nominal rate on independent data") {
  std::mt19937_64 g(4);
  int rejections = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    MatrixXd x = normal_matrix(30, 1, g), y = normal_matrix(30, 1, g);
    if (hsic_permutation_test(x, y, 99, g()).p_value <= 0.05) ++rejections;
  }
  const double rate = static_cast<double>(rejections) / trials;
  CHECK(rate >= 0.02);
  CHECK(rate <= 0.08);
}

TEST_CASE("hsconic: conditional independence versus direct dependence") {
  std::mt19937_64 g(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::Index n = 80;
  MatrixXd z = normal_matrix(n, 1, g);
  MatrixXd x(n, 1), y(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = std::sin(z(i, 0)) + 0.3 * nd(g);
    y(i, 0) = z(i, 0) * z(i, 0) + 0.3 * nd(g);
  }
  const auto bins = quantile_bins(z, 8);
  auto ci = hsconic_permutation_test(x, y, z, bins, 200, 7);
  CHECK(ci.statistic < ci.quantile(0.95));

  MatrixXd noise = normal_matrix(n, 1, g);
  MatrixXd xx = normal_matrix(n, 1, g);
  auto dep = hsconic_permutation_test(xx, xx, noise, quantile_bins(noise, 8), 200, 7);
  CHECK(dep.statistic > dep.quantile(0.99));
  CHECK(dep.statistic > 5.0 * ci.statistic);
}

TEST_CASE("hsconic: degenerate and argument cases") {
  MatrixXd point = MatrixXd::Constant(10, 2, 1.5);
  auto r = hsconic(point, point, point);
  CHECK(r.value == 0.0);
  CHECK(r.degenerate);
  std::mt19937_64 g(6);
  MatrixXd x = normal_matrix(10, 1, g);
  CHECK_THROWS_AS(hsconic(x, x, x, {}, KernelConfig{.ridge = 0.0}), MetricError);
  CHECK_THROWS_AS(hsconic(x, x, x.topRows(5)), MetricError);
  std::vector<double> w(10, 1.0);
  CHECK(hsconic(x, x, x, w).value == doctest::Approx(hsconic(x, x, x).value).epsilon(1e-12));
  std::vector<double> scaled(10, 3.0);
  CHECK(hsconic(x, x, x, scaled).value == doctest::Approx(hsconic(x, x, x).value).epsilon(1e-12));
  CHECK_THROWS_AS(hsconic(x, x, x, std::vector<double>(10, 0.0)), MetricError);
}

TEST_CASE("hsconic permutation test rejects at the nominal rate under conditional independence") {
  std::mt19937_64 g(9);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::Index n = 30;
  int rejections = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    MatrixXd x(n, 1), y(n, 1), z(n, 1);
    std::vector<int> level(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      level[i] = static_cast<int>(i % 3);
      z(i, 0) = level[i];
      x(i, 0) = 0.8 * level[i] + nd(g);
      y(i, 0) = -0.5 * level[i] + nd(g);
    }
    if (hsconic_permutation_test(x, y, z, level, 99, g()).p_value <= 0.05) ++rejections;
  }
  const double rate = static_cast<double>(rejections) / trials;
  CHECK(rate >= 0.02);
  CHECK(rate <= 0.08);
}

TEST_CASE("reduction ratio") {
  CHECK(reduction_ratio(2.0, 0.0) == 1.0);
  CHECK(reduction_ratio(2.0, 2.0) == 0.0);
  CHECK(reduction_ratio(0.36, 0.05) == doctest::Approx(0.8611).epsilon(1e-4));
  CHECK(reduction_ratio(1.0, 1.5) < 0.0);
  CHECK_THROWS_AS(reduction_ratio(0.0, 0.1), MetricError);
}
