// SPDX-License-Identifier: Apache-2.0
#include "learn/data/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace learn::data {
namespace {

thread_local int training_depth = 0;

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  if (t.empty()) return t;
  const std::size_t cols = t.cols();
  Tensor out = Tensor::matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= t.rows()) throw std::out_of_range("subset: row index out of range");
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return out;
}

std::vector<double> take(const std::vector<double>& v, std::span<const std::size_t> rows) {
  if (v.empty()) return v;
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v.at(r));
  return out;
}

void require_oracle(bool present, const char* what) {
  if (!present) throw std::runtime_error(std::string("dataset has no oracle data (") + what + ")");
}

}  // namespace

char group_code(Group g) { return g == Group::Observational ? 'o' : 'e'; }

TrainingScope::TrainingScope() { ++training_depth; }
TrainingScope::~TrainingScope() { --training_depth; }
bool TrainingScope::active() { return training_depth > 0; }

Dataset::Dataset(PublicView view, OracleData oracle) : view_(std::move(view)), oracle_(std::move(oracle)) {
  const std::size_t n = view_.size();
  if (view_.covariates.rank() != 2 || view_.covariates.rows() != n || view_.short_term.rows() != n) {
    throw std::invalid_argument("dataset: covariate and outcome rows must match the treatment count");
  }
  if ((view_.group == Group::Observational) != view_.has_long_term()) {
    throw std::invalid_argument("dataset: long-term outcomes must be present exactly for observational units");
  }
  if (view_.has_long_term() && view_.long_term.size() != n) {
    throw std::invalid_argument("dataset: long-term outcome count mismatch");
  }
}

const Tensor& Dataset::long_term_curves() const {
  require_oracle(!oracle_.long_term_curves.empty(), "counterfactual curves");
  return oracle_.long_term_curves;
}

const Tensor& Dataset::reference_short_term() const {
  require_oracle(!oracle_.reference_short_term.empty(), "reference short-term outcomes");
  return oracle_.reference_short_term;
}

const std::vector<double>& Dataset::reference_long_term() const {
  require_oracle(!oracle_.reference_long_term.empty(), "reference long-term outcomes");
  return oracle_.reference_long_term;
}

const Tensor& Dataset::unobserved() const {
  if (TrainingScope::active()) throw OracleAccessError("unobserved covariates read during training");
  require_oracle(!oracle_.unobserved.empty(), "unobserved covariates");
  return oracle_.unobserved;
}

const std::vector<double>& Dataset::hidden_long_term() const {
  if (TrainingScope::active()) throw OracleAccessError("experimental long-term outcomes read during training");
  require_oracle(!oracle_.hidden_long_term.empty(), "experimental long-term outcomes");
  return oracle_.hidden_long_term;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  PublicView v;
  v.group = view_.group;
  v.treatment = take(view_.treatment, indices);
  v.covariates = take_rows(view_.covariates, indices);
  v.short_term = take_rows(view_.short_term, indices);
  v.long_term = take(view_.long_term, indices);
  OracleData o;
  o.unobserved = take_rows(oracle_.unobserved, indices);
  o.hidden_long_term = take(oracle_.hidden_long_term, indices);
  o.grid = oracle_.grid;
  o.long_term_curves = take_rows(oracle_.long_term_curves, indices);
  o.reference_treatment = oracle_.reference_treatment;
  o.reference_short_term = take_rows(oracle_.reference_short_term, indices);
  o.reference_long_term = take(oracle_.reference_long_term, indices);
  return Dataset(std::move(v), std::move(o));
}

Split split_indices(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("split: need at least 10 units, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  const std::size_t n_train = n * 6 / 10, n_val = n * 2 / 10;
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

}  // namespace learn::data
