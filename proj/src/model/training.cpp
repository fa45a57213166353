// SPDX-License-Identifier: Apache-2.0
#include "learn/model/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "learn/metrics/metrics.hpp"

namespace learn::model {
namespace {

// Stream offsets so that batch order, treatment permutations and experimental
// sampling never share random draws.
constexpr std::uint64_t kBatchStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kPermutationStream = 0xbf58476d1ce4e5b9ULL;
constexpr std::uint64_t kExperimentalStream = 0x94d049bb133111ebULL;

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Tensor out = Tensor::matrix(rows.size(), t.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * t.cols()), t.cols(),
                out.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()));
  }
  return out;
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.at(i, j);
  return m;
}

Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double checked(const Var& term, const char* name) {
  const double v = term.value().item();
  if (!std::isfinite(v)) throw NumericError(std::string("loss term '") + name + "' is not finite");
  return v;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i-- > 1;) std::swap(v[i], v[rng() % (i + 1)]);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::None: return "none";
    case Variant::Ipm: return "ipm";
    case Variant::Full: return "full";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "none") return Variant::None;
  if (t == "ipm") return Variant::Ipm;
  if (t == "full" || t == "learn") return Variant::Full;
  throw std::invalid_argument("unknown variant '" + text + "' (expected none, ipm or full)");
}

ObservationalBatch make_observational_batch(const data::PublicView& view, std::span<const std::size_t> rows) {
  if (!view.has_long_term()) throw std::invalid_argument("observational batch: dataset has no long-term outcomes");
  ObservationalBatch b;
  b.covariates = take_rows(view.covariates, rows);
  b.short_term = take_rows(view.short_term, rows);
  for (std::size_t r : rows) {
    b.treatment.push_back(view.treatment.at(r));
    b.long_term.push_back(view.long_term.at(r));
  }
  return b;
}

ExperimentalBatch make_experimental_batch(const data::PublicView& view, std::span<const std::size_t> rows) {
  ExperimentalBatch b;
  b.covariates = take_rows(view.covariates, rows);
  b.short_term = take_rows(view.short_term, rows);
  for (std::size_t r : rows) b.treatment.push_back(view.treatment.at(r));
  return b;
}

LossTerms loss_from_output(const LearnModel& model, const ModelOutput& out, const ObservationalBatch& obs,
                           std::span<const double> weights, const ExperimentalBatch& exp,
                           std::span<const double> permuted_treatment, const LossConfig& config) {
  const std::size_t b = obs.treatment.size();
  if (weights.size() != b || obs.long_term.size() != b || obs.short_term.rows() != b) {
    throw diff::ShapeError("loss: batch, weights and outcomes disagree in size");
  }
  if (config.short_term_share < 0.0 || config.short_term_share > 1.0 || config.balance_strength < 0.0) {
    throw std::invalid_argument("loss: short-term share must lie in [0, 1] and the balance strength be >= 0");
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  const Var w = diff::constant(Tensor::column(weights));

  LossTerms terms;
  Var long_sq = diff::square(diff::sub(out.long_term, diff::constant(Tensor::column(obs.long_term))));
  Var long_term = diff::scale(diff::sum(diff::scale_rows(long_sq, w)), inv_b);
  terms.long_term = checked(long_term, "long_term");
  Var total = long_term;

  if (config.short_term_share > 0.0) {
    Var short_sq = diff::square(diff::sub(out.short_term, diff::constant(obs.short_term)));
    Var observed = diff::scale(diff::sum(diff::scale_rows(short_sq, w)), config.short_term_share * inv_b);
    terms.observed_short = checked(observed, "observed_short_term");
    total = diff::add(total, observed);
  }
  if (config.short_term_share < 1.0 && !exp.treatment.empty()) {
    const ModelOutput exp_out = model.forward_short_term(exp.covariates, exp.treatment);
    Var experimental = diff::scale(diff::squared_error(exp_out.short_term, diff::constant(exp.short_term)),
                                   (1.0 - config.short_term_share) / static_cast<double>(exp.treatment.size()));
    terms.experimental_short = checked(experimental, "experimental_short_term");
    total = diff::add(total, experimental);
  }
  if (config.balance_strength > 0.0) {
    if (permuted_treatment.size() != b) throw diff::ShapeError("loss: permuted treatments do not match the batch");
    Var shuffled = diff::concat({out.representation, diff::constant(Tensor::column(permuted_treatment))}, 1);
    Var joint = diff::concat({out.representation, diff::constant(Tensor::column(obs.treatment))}, 1);
    const std::vector<double> uniform(b, 1.0);
    Var balance = diff::scale(balance::ipm_wasserstein(shuffled, uniform, joint, weights, config.ipm),
                              config.balance_strength);
    terms.balance = checked(balance, "balance");
    total = diff::add(total, balance);
  }
  terms.total = total;
  return terms;
}

LossTerms loss_batch(const LearnModel& model, const ObservationalBatch& obs, std::span<const double> weights,
                     const ExperimentalBatch& exp, std::span<const double> permuted_treatment,
                     const LossConfig& config) {
  return loss_from_output(model, model.forward(obs.covariates, obs.treatment), obs, weights, exp, permuted_treatment,
                          config);
}

namespace {

class Trainer {
 public:
  Trainer(const data::Dataset& train, const data::Dataset& validation, const data::Dataset& experimental,
          const ModelConfig& model_config, const TrainConfig& config, Variant variant, const TrainHooks& hooks)
      : train_(train.view()),
        validation_(validation),
        experimental_(experimental.view()),
        config_(config),
        variant_(variant),
        hooks_(hooks),
        model_(model_config, config.seed),
        params_(model_.parameters()),
        adam_(diff::make_adam_state(params_, config.optimizer)),
        batch_rng_(config.seed ^ kBatchStream),
        permutation_rng_(config.seed ^ kPermutationStream),
        experimental_rng_(config.seed ^ kExperimentalStream) {
    validate_inputs(model_config);
    loss_config_ = config.loss;
    if (variant == Variant::None) loss_config_.balance_strength = 0.0;
    report_.variant = variant;
    setup_validation();
  }

  TrainResult run() {
    for (int e = 1; e <= config_.pretrain_epochs; ++e) run_epoch("pretrain", e, false);
    if (hooks_.on_pretrained) hooks_.on_pretrained(model_);
    consider_best(0, validation_score());
    for (int e = 1; e <= config_.epochs; ++e) {
      EpochRecord& rec = run_epoch("train", e, true);
      const double score = validation_score();
      rec.validation = score;
      if (hooks_.on_epoch) hooks_.on_epoch(rec);
      consider_best(e, score);
      if (config_.patience > 0 && e - report_.best_epoch >= config_.patience) {
        report_.stopped_early = e < config_.epochs;
        break;
      }
    }
    if (!best_state_.empty()) model_.load_state(best_state_);
    return {std::move(model_), std::move(report_)};
  }

 private:
  void validate_inputs(const ModelConfig& mc) const {
    if (!train_.has_long_term() || train_.size() < 2) {
      throw std::invalid_argument("train: need at least 2 observational units with long-term outcomes");
    }
    if (experimental_.size() == 0) throw std::invalid_argument("train: experimental dataset is empty");
    for (const auto* v : {&train_, &experimental_, &validation_.view()}) {
      if (v->covariate_dim() != mc.covariate_dim || v->horizon() != mc.horizon) {
        throw std::invalid_argument("train: dataset dimensions do not match the model (covariates " +
                                    std::to_string(v->covariate_dim()) + ", horizon " +
                                    std::to_string(v->horizon()) + ")");
      }
    }
    if (config_.batch_size < 2) throw std::invalid_argument("train: batch size must be at least 2");
    if (config_.pretrain_epochs < 0 || config_.epochs < 0 || config_.patience < 0) {
      throw std::invalid_argument("train: epoch counts must be >= 0");
    }
  }

  void setup_validation() {
    const auto& grid = validation_.grid();
    if (!grid.empty() && validation_.size() > 0) {
      report_.validation_metric = "mise";
      const std::size_t stride = std::max<std::size_t>(1, config_.validation_grid_stride);
      for (std::size_t k = 0; k < grid.size(); k += stride) grid_columns_.push_back(k);
      if (grid_columns_.back() != grid.size() - 1) grid_columns_.push_back(grid.size() - 1);
      for (std::size_t k : grid_columns_) validation_grid_.push_back(grid[k]);
      const Tensor& curves = validation_.long_term_curves();
      validation_truth_.resize(static_cast<Eigen::Index>(validation_.size()),
                               static_cast<Eigen::Index>(grid_columns_.size()));
      for (std::size_t i = 0; i < validation_.size(); ++i)
        for (std::size_t c = 0; c < grid_columns_.size(); ++c)
          validation_truth_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = curves.at(i, grid_columns_[c]);
    } else {
      report_.validation_metric = "factual_mse";
    }
  }

  double validation_score() const {
    const auto& v = validation_.view();
    if (v.size() == 0) return 0.0;
    if (report_.validation_metric == "mise") {
      return metrics::mise(validation_truth_, predict_hdrc(model_, v.covariates, validation_grid_), validation_grid_);
    }
    diff::NoGradGuard no_grad;
    const Tensor y = model_.forward(v.covariates, v.treatment).long_term.value();
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (y[i] - v.long_term[i]) * (y[i] - v.long_term[i]);
    return s / static_cast<double>(v.size());
  }

  void consider_best(int epoch, double score) {
    if (report_.best_epoch < 0 || score < report_.best_validation) {
      report_.best_epoch = epoch;
      report_.best_validation = score;
      best_state_ = model_.state();
    }
  }

  std::vector<std::size_t> experimental_rows() {
    const std::size_t n = experimental_.size();
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const std::size_t m = config_.experimental_batch_size;
    if (m == 0 || m >= n) return rows;
    for (std::size_t i = 0; i < m; ++i) std::swap(rows[i], rows[i + experimental_rng_() % (n - i)]);
    rows.resize(m);
    return rows;
  }

  std::vector<double> transport_weights(const ModelOutput& out, const ObservationalBatch& obs) const {
    ot::UnitFeatures source{to_eigen(out.mean_embedding), to_eigen(obs.covariates), to_eigen(obs.treatment)};
    const Eigen::MatrixXd cost = ot::build_cost_matrix(source, experimental_features_, config_.cost);
    const auto md = ot::mirror_descent_weights(cost, config_.transport);
    std::vector<double> w(obs.treatment.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = md.weights(static_cast<Eigen::Index>(i)) * static_cast<double>(w.size());
    return w;
  }

  void refresh_experimental_features() {
    experimental_features_.embedding = mean_embeddings(model_, experimental_.covariates, experimental_.treatment);
    experimental_features_.covariates = to_eigen(experimental_.covariates);
    experimental_features_.treatment = to_eigen(experimental_.treatment);
  }

  EpochRecord& run_epoch(const char* phase, int epoch, bool weighted) {
    const bool learn_weights = weighted && variant_ == Variant::Full;
    if (learn_weights) refresh_experimental_features();

    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, batch_rng_);

    EpochRecord rec;
    rec.phase = phase;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config_.batch_size);
      if (end - begin < 2) break;
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const ObservationalBatch obs = make_observational_batch(train_, rows);
      const auto exp_rows = experimental_rows();
      const ExperimentalBatch exp = make_experimental_batch(experimental_, exp_rows);
      const std::vector<double> permuted = balance::permute_treatments(obs.treatment, permutation_rng_);

      const ModelOutput out = model_.forward(obs.covariates, obs.treatment);
      std::vector<double> weights =
          learn_weights ? transport_weights(out, obs) : std::vector<double>(obs.treatment.size(), 1.0);
      if (weighted && hooks_.on_weights) hooks_.on_weights(epoch, batches, weights);
      const auto [lo, hi] = std::minmax_element(weights.begin(), weights.end());
      rec.mean_weight_spread += *lo > 0 ? *hi / *lo : std::numeric_limits<double>::infinity();

      const LossTerms terms = loss_from_output(model_, out, obs, weights, exp, permuted, loss_config_);
      const double loss = terms.total.value().item();
      if (!(loss <= config_.divergence_threshold)) {
        report_.epochs.push_back(rec);
        throw DivergenceError("training diverged: loss " + std::to_string(loss) + " in " + phase + " epoch " +
                                  std::to_string(epoch),
                              report_);
      }
      diff::backward(terms.total);
      diff::adam_step(params_, adam_);

      rec.loss += loss;
      rec.long_term += terms.long_term;
      rec.observed_short += terms.observed_short;
      rec.experimental_short += terms.experimental_short;
      rec.balance += terms.balance;
      ++batches;
    }
    if (batches > 0) {
      const double k = static_cast<double>(batches);
      rec.loss /= k;
      rec.long_term /= k;
      rec.observed_short /= k;
      rec.experimental_short /= k;
      rec.balance /= k;
      rec.mean_weight_spread /= k;
    }
    spdlog::debug("{} epoch {}: loss {:.6g}", phase, epoch, rec.loss);
    report_.epochs.push_back(rec);
    if (!weighted && hooks_.on_epoch) hooks_.on_epoch(report_.epochs.back());
    return report_.epochs.back();
  }

  const data::PublicView& train_;
  const data::Dataset& validation_;
  const data::PublicView& experimental_;
  TrainConfig config_;
  LossConfig loss_config_;
  Variant variant_;
  const TrainHooks& hooks_;
  LearnModel model_;
  std::vector<Var> params_;
  diff::AdamState adam_;
  Rng batch_rng_, permutation_rng_, experimental_rng_;
  ot::UnitFeatures experimental_features_;
  std::vector<std::size_t> grid_columns_;
  std::vector<double> validation_grid_;
  Eigen::MatrixXd validation_truth_;
  std::vector<diff::NamedArray> best_state_;
  TrainReport report_;
};

}  // namespace

TrainResult train(const data::Dataset& observational_train, const data::Dataset& observational_validation,
                  const data::Dataset& experimental, const ModelConfig& model_config, const TrainConfig& config,
                  Variant variant, const TrainHooks& hooks) {
  data::TrainingScope scope;
  return Trainer(observational_train, observational_validation, experimental, model_config, config, variant, hooks)
      .run();
}

std::vector<double> transport_weights(const LearnModel& model, const data::PublicView& observational,
                                      const data::PublicView& experimental, const ot::MirrorDescentConfig& transport,
                                      const ot::CostWeights& cost) {
  const ot::UnitFeatures source{mean_embeddings(model, observational.covariates, observational.treatment),
                                to_eigen(observational.covariates), to_eigen(observational.treatment)};
  const ot::UnitFeatures target{mean_embeddings(model, experimental.covariates, experimental.treatment),
                                to_eigen(experimental.covariates), to_eigen(experimental.treatment)};
  const auto md = ot::mirror_descent_weights(ot::build_cost_matrix(source, target, cost), transport);
  std::vector<double> w(observational.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = md.weights(static_cast<Eigen::Index>(i)) * static_cast<double>(w.size());
  return w;
}

}  // namespace learn::model
