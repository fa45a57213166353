// SPDX-License-Identifier: Apache-2.0
#include "learn/exp/manifest.hpp"

#include <cmath>

#include "learn/data/io.hpp"

#ifndef LEARN_CODE_VERSION
#define LEARN_CODE_VERSION "unknown"
#endif

namespace learn::exp {
namespace {

using nlohmann::ordered_json;

// JSON has no NaN; non-finite values become null.
ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json epoch_json(const model::EpochRecord& e) {
  ordered_json j;
  j["phase"] = e.phase;
  j["epoch"] = e.epoch;
  j["loss"] = number(e.loss);
  j["long_term"] = number(e.long_term);
  j["observed_short"] = number(e.observed_short);
  j["experimental_short"] = number(e.experimental_short);
  j["balance"] = number(e.balance);
  j["validation"] = e.validation ? number(*e.validation) : ordered_json(nullptr);
  j["mean_weight_spread"] = number(e.mean_weight_spread);
  return j;
}

}  // namespace

std::string code_version() { return LEARN_CODE_VERSION; }

ordered_json to_json(const RunManifest& m) {
  ordered_json j;
  j["schema_version"] = kManifestSchemaVersion;
  j["status"] = m.status;
  j["code_version"] = code_version();
  j["config_hash"] = sha1_hex(m.config.dump());
  j["dataset"] = m.dataset;
  j["variant"] = model::variant_name(m.spec.variant);
  j["seed"] = m.spec.seed;
  j["confounding"] = m.spec.confounding;
  j["n_experimental"] = m.spec.n_experimental;
  if (!m.spec.override_key.empty()) j["override"] = {{"key", m.spec.override_key}, {"value", m.spec.override_value}};
  j["config"] = m.config;
  j["timings"] = {{"generate_seconds", m.generate_seconds},
                  {"train_seconds", m.train_seconds},
                  {"evaluate_seconds", m.evaluate_seconds}};
  if (m.report) {
    ordered_json epochs = ordered_json::array();
    for (const auto& e : m.report->epochs) epochs.push_back(epoch_json(e));
    j["training"] = {{"best_epoch", m.report->best_epoch},
                     {"best_validation", number(m.report->best_validation)},
                     {"validation_metric", m.report->validation_metric},
                     {"stopped_early", m.report->stopped_early},
                     {"epochs", std::move(epochs)}};
  }
  if (m.metrics) {
    const auto& r = *m.metrics;
    j["metrics"] = {{"mise", number(r.mise)},
                    {"hsic_before", number(r.hsic_before)},
                    {"hsic_after", number(r.hsic_after)},
                    {"hsconic_s_before", number(r.hsconic_s_before)},
                    {"hsconic_s_after", number(r.hsconic_s_after)},
                    {"hsconic_y_before", number(r.hsconic_y_before)},
                    {"hsconic_y_after", number(r.hsconic_y_after)},
                    {"ratio_hsic", number(r.ratio_hsic())},
                    {"ratio_s", number(r.ratio_s())},
                    {"ratio_y", number(r.ratio_y())}};
  }
  if (!m.checkpoint.empty()) j["checkpoint"] = m.checkpoint.generic_string();
  if (!m.error.empty()) j["error"] = m.error;
  return j;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  data::write_file_atomic(path, to_json(m).dump(2) + "\n");
}

}  // namespace learn::exp
