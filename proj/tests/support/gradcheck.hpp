// SPDX-License-Identifier: Apache-2.0
// Central finite-difference checks against reverse-mode gradients.
#pragma once

#include <cmath>
#include <functional>
#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "learn/diff/var.hpp"

namespace learn::testing {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string first_failure;
};

/// Perturbs up to `coords` random coordinates across `params` and compares the
/// analytic gradient of `loss_fn` with (f(p+h) - f(p-h)) / 2h.
inline GradCheckResult grad_check(const std::function<diff::Var()>& loss_fn, std::vector<diff::Var> params,
                                  std::size_t coords, std::uint64_t seed, double h = 1e-5,
                                  double rtol = 1e-3, double atol = 1e-6) {
  for (auto& p : params) p.zero_grad();
  diff::backward(loss_fn());
  std::vector<diff::Tensor> analytic;
  for (auto& p : params) analytic.push_back(p.grad());

  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].value().numel(); ++i) all.emplace_back(k, i);
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  if (all.size() > coords) all.resize(coords);

  GradCheckResult result;
  diff::NoGradGuard guard;
  for (auto [k, i] : all) {
    double& v = params[k].mutable_value()[i];
    const double saved = v;
    v = saved + h;
    const double up = loss_fn().value().item();
    v = saved - h;
    const double down = loss_fn().value().item();
    v = saved;
    const double numeric = (up - down) / (2 * h);
    const double got = analytic[k][i];
    ++result.checked;
    if (std::abs(got - numeric) > atol + rtol * std::abs(numeric)) {
      if (result.failures++ == 0) {
        result.first_failure = params[k].name() + "[" + std::to_string(i) + "]: analytic " +
                               std::to_string(got) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline diff::Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1,
                                  double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  diff::Tensor t = diff::Tensor::matrix(r, c);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

}  // namespace learn::testing
