// SPDX-License-Identifier: Apache-2.0
//
// Per-run manifest: a JSON document written when a run starts (status
// "running") and rewritten when it ends. Writes are atomic, so a manifest
// that says "complete" always describes a finished run.
#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "learn/exp/runner.hpp"

namespace learn::exp {

inline constexpr int kManifestSchemaVersion = 1;

struct RunManifest {
  std::string status = "running";  // running, complete, diverged
  std::string dataset;
  JobSpec spec;
  nlohmann::ordered_json config;
  double generate_seconds = 0.0, train_seconds = 0.0, evaluate_seconds = 0.0;
  std::optional<model::TrainReport> report;
  std::optional<MetricsRow> metrics;
  std::filesystem::path checkpoint;  // relative to the manifest directory
  std::string error;
};

/// Short commit id of the build, or "unknown".
std::string code_version();

nlohmann::ordered_json to_json(const RunManifest& manifest);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace learn::exp
