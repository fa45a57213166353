// SPDX-License-Identifier: Apache-2.0
//
// Datasets come in two parts. The public view is everything an estimator may
// read. The oracle part holds what only the generator knows: the unobserved
// covariates, the long-term outcomes of experimental units, and noise-free
// potential outcomes used for evaluation. Reads of the unobserved covariates
// or the hidden outcomes throw while a TrainingScope is active.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "learn/diff/tensor.hpp"

namespace learn::data {

using diff::Tensor;

enum class Group { Observational, Experimental };

char group_code(Group g);

struct PublicView {
  Group group = Group::Observational;
  std::vector<double> treatment;  // n, in (0, 1)
  Tensor covariates;              // n x p
  Tensor short_term;              // n x t0
  std::vector<double> long_term;  // n for observational data, empty otherwise

  std::size_t size() const { return treatment.size(); }
  std::size_t covariate_dim() const { return covariates.empty() ? 0 : covariates.cols(); }
  std::size_t horizon() const { return short_term.empty() ? 0 : short_term.cols(); }
  bool has_long_term() const { return !long_term.empty(); }
};

struct OracleData {
  Tensor unobserved;                     // n x q
  std::vector<double> hidden_long_term;  // experimental units only
  std::vector<double> grid;              // treatment grid of the curves
  Tensor long_term_curves;               // n x |grid|, noise-free Y_T(a)
  double reference_treatment = 0.5;
  Tensor reference_short_term;             // n x t0, noise-free S(a*)
  std::vector<double> reference_long_term;  // n, noise-free Y_T(a*)

  bool empty() const { return grid.empty() && unobserved.empty(); }
};

class OracleAccessError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// While alive on a thread, oracle-only reads on that thread throw.
class TrainingScope {
 public:
  TrainingScope();
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

  static bool active();
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(PublicView view, OracleData oracle);

  const PublicView& view() const { return view_; }
  std::size_t size() const { return view_.size(); }
  bool has_oracle() const { return !oracle_.empty(); }

  // Evaluation-only ground truth, readable at any time.
  const std::vector<double>& grid() const { return oracle_.grid; }
  const Tensor& long_term_curves() const;
  double reference_treatment() const { return oracle_.reference_treatment; }
  const Tensor& reference_short_term() const;
  const std::vector<double>& reference_long_term() const;

  // Never available to estimators.
  const Tensor& unobserved() const;
  const std::vector<double>& hidden_long_term() const;

  const OracleData& oracle_for_io() const { return oracle_; }

  /// Rows `indices`, in that order, of both parts.
  Dataset subset(std::span<const std::size_t> indices) const;

 private:
  PublicView view_;
  OracleData oracle_;
};

struct Split {
  std::vector<std::size_t> train, validation, test;
};

/// Seeded shuffle followed by a 60/20/20 cut (floor for the first two parts).
Split split_indices(std::size_t n, std::uint64_t seed);

}  // namespace learn::data
