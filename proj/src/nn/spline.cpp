// SPDX-License-Identifier: Apache-2.0
#include "learn/nn/spline.hpp"

#include <algorithm>
#include <cmath>
#include <spdlog/spdlog.h>
#include <stdexcept>

namespace learn::nn {

std::array<double, kSplineBasisSize> spline_basis(double a) {
  if (std::isnan(a)) throw std::domain_error("spline_basis: treatment is NaN");
  if (a < 0.0 || a > 1.0) {
    spdlog::warn("spline_basis: treatment {} outside [0, 1], clamping", a);
    a = std::clamp(a, 0.0, 1.0);
  }
  const double t1 = std::max(0.0, a - kSplineKnot1);
  const double t2 = std::max(0.0, a - kSplineKnot2);
  return {1.0, a, a * a, t1 * t1, t2 * t2};
}

diff::Tensor spline_basis_matrix(std::span<const double> treatments) {
  diff::Tensor out = diff::Tensor::matrix(treatments.size(), kSplineBasisSize);
  for (std::size_t i = 0; i < treatments.size(); ++i) {
    const auto row = spline_basis(treatments[i]);
    std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * kSplineBasisSize));
  }
  return out;
}

}  // namespace learn::nn
