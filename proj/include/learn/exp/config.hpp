// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: INI files with [data], [model], [train] and
// [experiment] sections. Keys left out keep their defaults; unknown keys are
// an error.
#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "learn/data/generators.hpp"
#include "learn/model/training.hpp"

namespace learn::exp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Budget { Full, Desk };

Budget parse_budget(const std::string& text);
std::string budget_name(Budget b);

struct ExperimentConfig {
  std::string dataset = "synthetic";  // "synthetic" or "semisynthetic"
  data::SyntheticConfig synthetic;  // horizon, noise and grid settings also drive semi-synthetic data
  std::filesystem::path covariates;  // input matrix for semi-synthetic data
  model::ModelConfig model;
  model::TrainConfig train;
  std::vector<model::Variant> variants{model::Variant::Full, model::Variant::Ipm, model::Variant::None};
  std::vector<std::uint64_t> seeds;  // empty: master_seed + 0 .. replications - 1
  std::uint64_t master_seed = 0;
  int replications = 10;
  std::size_t kernel_metric_units = 400;  // test units entering HSIC / HSCONIC
  std::filesystem::path output_dir = "runs";

  std::vector<std::uint64_t> run_seeds() const;
  data::SemiSyntheticConfig semisynthetic(std::uint64_t seed) const;
};

/// Shrinks sizes, widths, epochs and replications for single-core runs.
void apply_budget(ExperimentConfig& config, Budget budget);

/// Overlays the keys of an INI file on `config`.
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);
void apply_config_text(ExperimentConfig& config, const std::string& ini, const std::string& source = "<text>");

/// Applies one "section.key=value" assignment.
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Throws ConfigError for out-of-range or inconsistent values.
void validate(const ExperimentConfig& config);

nlohmann::ordered_json to_json(const ExperimentConfig& config);
/// SHA-1 of the compact JSON form, hex encoded.
std::string config_hash(const ExperimentConfig& config);

std::string sha1_hex(std::string_view bytes);

}  // namespace learn::exp
