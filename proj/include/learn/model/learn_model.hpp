// SPDX-License-Identifier: Apache-2.0
//
// The long-term outcome estimator.
//
//   z    = phi(x)                               covariate representation
//   r_t  = q([z, t / t0]; a)  t = 1..t0          bidirectional GRU states
//   s_t  = g(r_t; a)                             shared short-term head
//   r_T  = f(r_1..r_t0; a)                       attention pooling
//   y    = h(r_T; a)                             long-term head
//
// Every block except phi has treatment-varying parameters over the spline
// basis. The mean state (1/t0) sum_t r_t is exposed for the transport cost.
#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "learn/diff/checkpoint.hpp"
#include "learn/nn/layers.hpp"
#include "learn/nn/recurrent.hpp"

namespace learn::model {

using diff::Tensor;
using diff::Var;
using nn::Rng;

struct ModelConfig {
  std::size_t covariate_dim = 15;
  std::size_t horizon = 7;               // t0
  std::size_t representation_dim = 50;   // width of z
  std::size_t hidden = 50;               // MLP hidden width
  std::size_t recurrent_hidden = 50;     // per direction; the attention width too
  std::size_t basis_size = 5;            // 1 disables the treatment-varying parameters

  bool operator==(const ModelConfig&) const = default;
};

struct ModelOutput {
  Var representation;     // B x representation_dim
  Var short_term;         // B x t0
  Var long_term;          // B x 1
  Var attention;          // B x t0
  Tensor mean_embedding;  // B x 2 * recurrent_hidden, value only
};

class LearnModel {
 public:
  LearnModel() = default;
  LearnModel(const ModelConfig& config, std::uint64_t seed);

  /// `covariates` is B x covariate_dim; treatments lie in [0, 1].
  ModelOutput forward(const Var& covariates, std::span<const double> treatments) const;
  ModelOutput forward(const Tensor& covariates, std::span<const double> treatments) const {
    return forward(diff::constant(covariates), treatments);
  }
  /// Representation, short-term predictions and mean embedding only; the
  /// attention and long-term fields stay empty.
  ModelOutput forward_short_term(const Var& covariates, std::span<const double> treatments) const;
  ModelOutput forward_short_term(const Tensor& covariates, std::span<const double> treatments) const {
    return forward_short_term(diff::constant(covariates), treatments);
  }
  /// phi(x) only.
  Var represent(const Var& covariates) const;

  const ModelConfig& config() const { return config_; }
  /// All trainable parameters in a fixed order.
  std::vector<Var> parameters() const;
  const nn::MlpBlock& representation_block() const { return phi_; }

  std::vector<diff::NamedArray> state() const;
  /// Replaces parameter values; names and shapes must match exactly.
  void load_state(const std::vector<diff::NamedArray>& arrays);

 private:
  ModelOutput run(const Var& covariates, std::span<const double> treatments, bool with_long_term) const;

  ModelConfig config_;
  nn::MlpBlock phi_;
  nn::BiGruBlock recurrent_;
  nn::MlpBlock short_head_;
  nn::AttentionBlock pooling_;
  nn::MlpBlock long_head_;
  std::vector<double> step_codes_;
};

/// Long-term predictions for every row of `covariates` (n x p) at every grid
/// treatment, n x |grid|. Runs without a tape.
Eigen::MatrixXd predict_hdrc(const LearnModel& model, const Tensor& covariates, std::span<const double> grid);

/// Mean sequence embeddings of `covariates` at their own treatments, n x 2H.
Eigen::MatrixXd mean_embeddings(const LearnModel& model, const Tensor& covariates, std::span<const double> treatments);

void save_model(const std::filesystem::path& path, const LearnModel& model);
/// Builds a model with `config` and fills it from the checkpoint at `path`.
LearnModel load_model(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace learn::model
