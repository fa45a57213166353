// SPDX-License-Identifier: Apache-2.0
#include "learn/model/learn_model.hpp"

#include <map>

#include "learn/nn/spline.hpp"

namespace learn::model {
namespace {

constexpr std::size_t kPredictChunk = 4096;

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t end) {
  Tensor out = Tensor::matrix(end - begin, t.cols());
  std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(begin * t.cols()),
            t.data().begin() + static_cast<std::ptrdiff_t>(end * t.cols()), out.data().begin());
  return out;
}

}  // namespace

LearnModel::LearnModel(const ModelConfig& c, std::uint64_t seed) : config_(c) {
  if (c.covariate_dim == 0 || c.horizon == 0 || c.representation_dim == 0 || c.hidden == 0 ||
      c.recurrent_hidden == 0 || c.basis_size == 0) {
    throw std::invalid_argument("model config: all sizes must be positive");
  }
  Rng rng(seed);
  const std::size_t state = 2 * c.recurrent_hidden;
  phi_ = nn::MlpBlock("phi", c.covariate_dim, c.hidden, c.representation_dim, 1, true, rng);
  recurrent_ = nn::BiGruBlock("q", c.representation_dim + 1, c.recurrent_hidden, c.basis_size, rng);
  short_head_ = nn::MlpBlock("g", state, c.hidden, 1, c.basis_size, false, rng);
  pooling_ = nn::AttentionBlock("f", state, c.recurrent_hidden, c.basis_size, rng);
  long_head_ = nn::MlpBlock("h", state, c.hidden, 1, c.basis_size, false, rng);
  step_codes_.resize(c.horizon);
  for (std::size_t t = 0; t < c.horizon; ++t) {
    step_codes_[t] = static_cast<double>(t + 1) / static_cast<double>(c.horizon);
  }
}

Var LearnModel::represent(const Var& covariates) const {
  if (covariates.value().rank() != 2 || covariates.cols() != config_.covariate_dim) {
    throw diff::ShapeError("model: covariates " + diff::shape_str(covariates.shape()) + " but the model expects " +
                           std::to_string(config_.covariate_dim) + " columns");
  }
  return phi_.forward(covariates);
}

ModelOutput LearnModel::forward(const Var& covariates, std::span<const double> treatments) const {
  return run(covariates, treatments, true);
}

ModelOutput LearnModel::forward_short_term(const Var& covariates, std::span<const double> treatments) const {
  return run(covariates, treatments, false);
}

ModelOutput LearnModel::run(const Var& covariates, std::span<const double> treatments, bool with_long_term) const {
  const std::size_t batch = covariates.rows();
  if (treatments.size() != batch) {
    throw diff::ShapeError("model: " + std::to_string(treatments.size()) + " treatments for " +
                           std::to_string(batch) + " units");
  }
  const std::size_t steps = config_.horizon;
  const Tensor basis = nn::spline_basis_matrix(treatments);
  const Tensor stacked_basis = nn::repeat_rows(basis, steps);

  ModelOutput out;
  out.representation = represent(covariates);
  const std::vector<Var> states = recurrent_.forward_with_step_codes(out.representation, step_codes_, basis);

  Var stacked = steps == 1 ? states.front() : diff::concat(states, 0);
  Var short_stacked = short_head_.forward(stacked, stacked_basis);  // (t0 * B) x 1, step-major
  std::vector<Var> columns;
  for (std::size_t t = 0; t < steps; ++t) {
    columns.push_back(diff::slice(short_stacked, 0, t * batch, (t + 1) * batch));
  }
  out.short_term = steps == 1 ? columns.front() : diff::concat(columns, 1);

  if (with_long_term) {
    auto pooled = pooling_.forward(states, basis);
    out.attention = pooled.weights;
    out.long_term = long_head_.forward(pooled.pooled, basis);
  }

  Tensor mean = Tensor::matrix(batch, 2 * config_.recurrent_hidden);
  for (const auto& s : states) {
    auto src = s.value().data();
    auto dst = mean.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  for (auto& v : mean.data()) v /= static_cast<double>(steps);
  out.mean_embedding = std::move(mean);
  return out;
}

std::vector<Var> LearnModel::parameters() const {
  std::vector<Var> out;
  phi_.collect(out);
  recurrent_.collect(out);
  short_head_.collect(out);
  pooling_.collect(out);
  long_head_.collect(out);
  return out;
}

std::vector<diff::NamedArray> LearnModel::state() const {
  std::vector<diff::NamedArray> arrays;
  for (const auto& p : parameters()) arrays.push_back({p.name(), p.value()});
  return arrays;
}

void LearnModel::load_state(const std::vector<diff::NamedArray>& arrays) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& a : arrays) {
    if (!by_name.emplace(a.name, &a.value).second) throw std::runtime_error("checkpoint: duplicate array " + a.name);
  }
  auto params = parameters();
  if (by_name.size() != params.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(by_name.size()) + " arrays for " +
                             std::to_string(params.size()) + " parameters");
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name());
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing parameter " + p.name());
    if (it->second->shape() != p.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name() + ": " +
                               diff::shape_str(it->second->shape()) + " vs " + diff::shape_str(p.shape()));
    }
    p.mutable_value() = *it->second;
  }
}

Eigen::MatrixXd predict_hdrc(const LearnModel& model, const Tensor& covariates, std::span<const double> grid) {
  diff::NoGradGuard no_grad;
  const std::size_t n = covariates.rows();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t begin = 0; begin < n; begin += kPredictChunk) {
    const std::size_t end = std::min(n, begin + kPredictChunk);
    const Var x = diff::constant(rows_of(covariates, begin, end));
    // phi does not see the treatment, so the representation is shared across the grid.
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const std::vector<double> a(end - begin, grid[k]);
      const Tensor y = model.forward(x, a).long_term.value();
      for (std::size_t i = begin; i < end; ++i) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = y[i - begin];
    }
  }
  return out;
}

Eigen::MatrixXd mean_embeddings(const LearnModel& model, const Tensor& covariates, std::span<const double> treatments) {
  diff::NoGradGuard no_grad;
  const Tensor m = model.forward_short_term(covariates, treatments).mean_embedding;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.at(i, j);
  return out;
}

void save_model(const std::filesystem::path& path, const LearnModel& model) {
  diff::save_checkpoint(path, model.state());
}

LearnModel load_model(const std::filesystem::path& path, const ModelConfig& config) {
  LearnModel m(config, 0);
  m.load_state(diff::load_checkpoint(path));
  return m;
}

}  // namespace learn::model
