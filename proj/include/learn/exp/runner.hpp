// SPDX-License-Identifier: Apache-2.0
//
// Experiment jobs: one job generates (or receives) a dataset pair, trains one
// variant with one seed, evaluates it on the held-out split and optionally
// persists a manifest and a checkpoint. Tables are lists of jobs run on a
// worker pool and merged in job order.
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "learn/exp/config.hpp"

namespace learn::exp {

struct JobSpec {
  model::Variant variant = model::Variant::Full;
  std::uint64_t seed = 0;
  double confounding = 1.0;      // synthetic beta_U
  std::size_t n_experimental = 0;  // 0 keeps the configured size
  std::string override_key;      // "section.key" for sweeps, empty otherwise
  std::string override_value;

  /// Directory-safe identifier, unique within a table.
  std::string label() const;
};

struct MetricsRow {
  double mise = 0.0;
  // Observed confounding: HSIC(X, A) against HSIC(Z, A) with Z the representation.
  double hsic_before = 0.0, hsic_after = 0.0;
  // Conditional dependence of (S, A | X) and (Y, A | X), uniform against transport weights.
  double hsconic_s_before = 0.0, hsconic_s_after = 0.0;
  double hsconic_y_before = 0.0, hsconic_y_after = 0.0;
  double ratio_hsic() const;
  double ratio_s() const;
  double ratio_y() const;
};

struct JobResult {
  JobSpec spec;
  std::string dataset;
  std::string status;  // "complete" or "diverged"
  MetricsRow metrics;
  model::TrainReport report;
  double train_seconds = 0.0;
  std::filesystem::path directory;  // manifest and checkpoint, empty when not persisted
};

struct RunOptions {
  bool kernel_metrics = true;
  bool write_artifacts = true;
  std::filesystem::path directory;  // parent of the per-job directories
};

/// The configuration one job trains with (sizes and override applied).
ExperimentConfig job_config(const ExperimentConfig& base, const JobSpec& spec);

/// Dataset pair for a job; semi-synthetic data reads the configured covariate file.
data::DatasetPair make_datasets(const ExperimentConfig& config, std::uint64_t seed);

/// Test-split metrics of a trained model.
MetricsRow evaluate(const model::LearnModel& model, const data::Dataset& test, const data::Dataset& experimental,
                    const ExperimentConfig& config, bool kernel_metrics);

/// Splits the observational data 6/2/2 with the job seed, trains and evaluates.
/// A diverging run comes back with status "diverged" and NaN metrics.
JobResult run_job(const ExperimentConfig& config, const JobSpec& spec, const RunOptions& options,
                  const data::DatasetPair* datasets = nullptr);

/// Worker count from LEARN_WORKERS (default 1).
std::size_t worker_count();

/// Runs every job; results come back in job order regardless of scheduling.
std::vector<JobResult> run_jobs(const ExperimentConfig& config, const std::vector<JobSpec>& jobs,
                                const RunOptions& options, std::size_t workers);

/// Jobs of a reproduction target: "1", "2", "3" or "fig3".
std::vector<JobSpec> table_jobs(const ExperimentConfig& config, const std::string& table, Budget budget);

/// One job per (value, seed) of a "section.key" parameter, for the configured variants.
std::vector<JobSpec> sweep_jobs(const ExperimentConfig& config, const std::string& key,
                                const std::vector<std::string>& values);

/// Values swept by the fig3 target for `key`.
std::vector<std::string> default_sweep_values(const std::string& key);

void write_runs_csv(std::ostream& out, const std::vector<JobResult>& results);
/// Mean and sample standard deviation over seeds per (dataset, beta_U, n_e, variant, override).
void write_summary_csv(std::ostream& out, const std::vector<JobResult>& results);

struct TableFiles {
  std::filesystem::path runs, summary;
};
/// Writes runs.csv and summary.csv under `directory`.
TableFiles write_tables(const std::filesystem::path& directory, const std::vector<JobResult>& results);

}  // namespace learn::exp
