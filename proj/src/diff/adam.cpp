// SPDX-License-Identifier: Apache-2.0
#include "learn/diff/adam.hpp"

#include <cmath>

namespace learn::diff {

AdamState make_adam_state(std::span<const Var> params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.shape(), 0.0);
    state.second_moment.emplace_back(p.shape(), 0.0);
  }
  return state;
}

void adam_step(std::span<Var> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but state has " +
                     std::to_string(state.first_moment.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& g = params[k].grad();
    if (g.shape() != params[k].shape() || state.first_moment[k].shape() != g.shape()) {
      throw ShapeError("adam_step: gradient/state shape mismatch for parameter '" +
                       params[k].name() + "' " + shape_str(params[k].shape()));
    }
    if (!g.all_finite()) {
      throw DomainError("adam_step: non-finite gradient in parameter '" + params[k].name() + "'");
    }
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].mutable_value();
    const Tensor& g = params[k].grad();
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= c.learning_rate * (m_hat / (std::sqrt(v_hat) + c.epsilon) + c.weight_decay * p[i]);
    }
  }
}

}  // namespace learn::diff
