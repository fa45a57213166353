// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "learn/balance/ipm.hpp"
#include "learn/data/dataset.hpp"
#include "learn/diff/adam.hpp"
#include "learn/model/learn_model.hpp"
#include "learn/ot/transport.hpp"

namespace learn::model {

enum class Variant { None, Ipm, Full };

std::string variant_name(Variant v);
/// Accepts "none", "ipm", "full" (any case).
Variant parse_variant(const std::string& text);

/// A non-finite loss term or a diverging run.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ObservationalBatch {
  Tensor covariates;               // b x p
  std::vector<double> treatment;   // b
  Tensor short_term;               // b x t0
  std::vector<double> long_term;   // b
};

struct ExperimentalBatch {
  Tensor covariates;
  std::vector<double> treatment;
  Tensor short_term;
};

struct LossConfig {
  double short_term_share = 0.5;  // lambda_o
  double balance_strength = 100;  // lambda_b; 0 drops the balance term
  balance::IpmConfig ipm;
};

struct LossTerms {
  Var total;
  double long_term = 0.0;        // (1/b) sum w_i (y_i - yhat_i)^2
  double observed_short = 0.0;   // (lambda_o/b) sum_i sum_t w_i (s - shat)^2
  double experimental_short = 0.0;  // ((1 - lambda_o)/n_e) sum_i sum_t (s - shat)^2
  double balance = 0.0;          // lambda_b * IPM
};

/// The training objective on one observational batch and one experimental
/// set. `weights` enter the squared errors as given (uniform weights are all
/// ones) and the balance term as normalized masses; `permuted_treatment` is a
/// permutation of the batch treatments. Throws NumericError naming a
/// non-finite term.
LossTerms loss_batch(const LearnModel& model, const ObservationalBatch& obs, std::span<const double> weights,
                     const ExperimentalBatch& exp, std::span<const double> permuted_treatment,
                     const LossConfig& config);
/// Same objective reusing an already computed forward pass of `obs`.
LossTerms loss_from_output(const LearnModel& model, const ModelOutput& obs_output, const ObservationalBatch& obs,
                           std::span<const double> weights, const ExperimentalBatch& exp,
                           std::span<const double> permuted_treatment, const LossConfig& config);

struct TrainConfig {
  LossConfig loss;
  ot::MirrorDescentConfig transport;  // lambda_e, step size, iterations
  ot::CostWeights cost;
  diff::AdamConfig optimizer;
  std::size_t batch_size = 128;
  std::size_t experimental_batch_size = 128;  // 0 uses every experimental unit per step
  int pretrain_epochs = 100;
  int epochs = 400;
  int patience = 20;                  // epochs without validation improvement; 0 disables early stopping
  std::size_t validation_grid_stride = 8;  // every k-th oracle grid point for validation MISE
  double divergence_threshold = 1e8;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::string phase;  // "pretrain" or "train"
  int epoch = 0;
  double loss = 0.0;
  double long_term = 0.0, observed_short = 0.0, experimental_short = 0.0, balance = 0.0;
  std::optional<double> validation;  // validation MISE (or factual MSE without oracle curves)
  double mean_weight_spread = 0.0;   // mean over batches of max w / min w
};

struct TrainReport {
  Variant variant = Variant::Full;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_validation = 0.0;
  bool stopped_early = false;
  std::string validation_metric;  // "mise" or "factual_mse"
};

/// Observation points during training, for tests and instrumentation.
struct TrainHooks {
  /// Sees (and may overwrite) the batch weights (summing to the batch size)
  /// just before the loss is built in the weighted phase.
  std::function<void(int epoch, std::size_t batch, std::vector<double>& weights)> on_weights;
  std::function<void(const EpochRecord&)> on_epoch;
  /// The model right after the pretraining phase.
  std::function<void(const LearnModel&)> on_pretrained;
};

/// Thrown when the training loss exceeds the divergence threshold. Carries the
/// report up to the failing epoch.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, TrainReport report) : NumericError(what), report_(std::move(report)) {}
  const TrainReport& report() const { return report_; }

 private:
  TrainReport report_;
};

struct TrainResult {
  LearnModel model;
  TrainReport report;
};

/// Pretraining with uniform weights, then the weighted phase with per-batch
/// transport weights (Full only), early stopping on the validation set and
/// restoring the best parameters. Runs under a TrainingScope.
TrainResult train(const data::Dataset& observational_train, const data::Dataset& observational_validation,
                  const data::Dataset& experimental, const ModelConfig& model_config, const TrainConfig& config,
                  Variant variant, const TrainHooks& hooks = {});

/// Transport weights of every observational unit against the whole
/// experimental set under the model's mean embeddings; sums to the number of
/// observational units.
std::vector<double> transport_weights(const LearnModel& model, const data::PublicView& observational,
                                      const data::PublicView& experimental, const ot::MirrorDescentConfig& transport,
                                      const ot::CostWeights& cost);

/// Observational rows `rows` as a loss batch.
ObservationalBatch make_observational_batch(const data::PublicView& view, std::span<const std::size_t> rows);
ExperimentalBatch make_experimental_batch(const data::PublicView& view, std::span<const std::size_t> rows);

}  // namespace learn::model
