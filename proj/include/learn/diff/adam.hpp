// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "learn/diff/var.hpp"

namespace learn::diff {

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

AdamState make_adam_state(std::span<const Var> params, AdamConfig config = {});

/// Applies one update in place using each parameter's current gradient.
/// Throws DomainError naming the parameter when a gradient is not finite.
void adam_step(std::span<Var> params, AdamState& state);

}  // namespace learn::diff
