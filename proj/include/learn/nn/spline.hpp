// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "learn/diff/tensor.hpp"

namespace learn::nn {

inline constexpr std::size_t kSplineBasisSize = 5;
inline constexpr double kSplineKnot1 = 1.0 / 3.0;
inline constexpr double kSplineKnot2 = 2.0 / 3.0;

/// Degree-2 truncated power basis with knots 1/3 and 2/3:
///   (1, a, a^2, (a - 1/3)_+^2, (a - 2/3)_+^2)
/// Treatments outside [0, 1] are clamped (with a logged warning); NaN throws.
std::array<double, kSplineBasisSize> spline_basis(double a);

/// One basis row per treatment value, B x 5.
diff::Tensor spline_basis_matrix(std::span<const double> treatments);

}  // namespace learn::nn
