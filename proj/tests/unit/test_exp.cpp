// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <nlohmann/json.hpp>
#include <sstream>

#include "learn/exp/manifest.hpp"
#include "learn/exp/runner.hpp"

using namespace learn;
using namespace learn::exp;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.synthetic.n_observational = 120;
  c.synthetic.n_experimental = 30;
  c.synthetic.covariate_dim = 6;
  c.synthetic.grid_points = 9;
  c.model.hidden = 4;
  c.model.representation_dim = 4;
  c.model.recurrent_hidden = 3;
  c.train.pretrain_epochs = 2;
  c.train.epochs = 2;
  c.train.batch_size = 32;
  c.train.experimental_batch_size = 16;
  c.replications = 2;
  c.kernel_metric_units = 20;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

std::string runs_csv(const std::vector<JobResult>& rs) {
  std::ostringstream s;
  write_runs_csv(s, rs);
  return s.str();
}

}  // namespace

TEST_CASE("config defaults carry the published hyperparameters") {
  ExperimentConfig c;
  CHECK(c.train.loss.balance_strength == 100);
  CHECK(c.train.loss.short_term_share == 0.5);
  CHECK(c.train.transport.entropy_strength == 100);
  CHECK(c.train.transport.step_size == 1e-3);
  CHECK(c.train.optimizer.learning_rate == 1e-3);
  CHECK(c.train.optimizer.weight_decay == 5e-4);
  CHECK(c.train.pretrain_epochs == 100);
  CHECK(c.train.epochs == 400);
  CHECK(c.train.patience == 20);
  CHECK(c.replications == 10);
  CHECK(c.synthetic.n_observational == 10000);
  CHECK(c.synthetic.n_experimental == 500);
  CHECK(c.run_seeds().size() == 10);
  CHECK_NOTHROW(validate(c));

  apply_budget(c, Budget::Desk);
  CHECK(c.synthetic.n_observational == 2000);
  CHECK(c.synthetic.n_experimental == 200);
  CHECK(c.train.pretrain_epochs == 100);
  CHECK(c.train.epochs == 100);
  CHECK(c.run_seeds() == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(parse_budget("DESK") == Budget::Desk);
  CHECK_THROWS_AS(parse_budget("cheap"), ConfigError);
}

TEST_CASE("INI files and overrides") {
  ExperimentConfig c;
  apply_config_text(c,
                    "; comment\n[data]\nn_observational = 300\nconfounding = 1.75\n"
                    "[train]\nbalance_strength=50\n[experiment]\nvariants = full, none\nseeds = 4, 9\n");
  CHECK(c.synthetic.n_observational == 300);
  CHECK(c.synthetic.confounding == 1.75);
  CHECK(c.train.loss.balance_strength == 50);
  CHECK(c.variants == std::vector<model::Variant>{model::Variant::Full, model::Variant::None});
  CHECK(c.run_seeds() == std::vector<std::uint64_t>{4, 9});

  apply_override(c, "model.hidden=7");
  CHECK(c.model.hidden == 7);
  CHECK_THROWS_AS(apply_override(c, "hidden=7"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "model.width=7"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "model.hidden=seven"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "model.hidden=7.5"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "experiment.variants=full,learnt"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "[data\n"), ConfigError);

  apply_override(c, "experiment.seeds=3,3");
  CHECK_THROWS_AS(validate(c), ConfigError);
  apply_override(c, "experiment.seeds=3");
  apply_override(c, "data.covariate_dim=4");
  CHECK_THROWS_AS(validate(c), ConfigError);
  apply_override(c, "data.covariate_dim=6");
  apply_override(c, "data.kind=semisynthetic");
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("config snapshot and hash") {
  ExperimentConfig a, b;
  CHECK(to_json(a)["train"]["balance_strength"] == 100.0);
  CHECK(to_json(a)["experiment"]["variants"] == nlohmann::ordered_json::array({"full", "ipm", "none"}));
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 40);
  apply_override(b, "train.epochs=399");
  CHECK(config_hash(a) != config_hash(b));
  CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");

  // Every key of the snapshot can be read back.
  ExperimentConfig c;
  apply_override(c, "data.confounding=1.25");
  apply_override(c, "experiment.seeds=8,2");
  ExperimentConfig d;
  std::string ini;
  const auto snapshot = to_json(c);
  for (const auto& section : snapshot.items()) {
    ini += "[" + section.key() + "]\n";
    for (const auto& entry : section.value().items()) {
      const auto& value = entry.value();
      std::string text;
      if (value.is_array()) {
        for (const auto& v : value) text += (text.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      } else {
        text = value.is_string() ? value.get<std::string>() : value.dump();
      }
      ini += entry.key() + " = " + text + "\n";
    }
  }
  apply_config_text(d, ini);
  CHECK(config_hash(c) == config_hash(d));
}

TEST_CASE("job lists") {
  ExperimentConfig c;
  apply_budget(c, Budget::Desk);
  const auto t1 = table_jobs(c, "1", Budget::Desk);
  CHECK(t1.size() == 2 * 3 * 5);
  CHECK(table_jobs(ExperimentConfig{}, "1", Budget::Full).size() == 5 * 3 * 10);
  const auto t3 = table_jobs(c, "3", Budget::Desk);
  CHECK(t3.size() == 3 * 5);
  CHECK(t3.front().n_experimental == 100);
  CHECK(t3.back().n_experimental == 2000);
  CHECK(table_jobs(c, "2", Budget::Desk).size() == 5);
  CHECK(table_jobs(c, "fig3", Budget::Desk).size() == (4 + 3 + 4) * 5);
  CHECK(default_sweep_values("train.balance_strength") == std::vector<std::string>{"50", "100", "150", "200"});
  CHECK(default_sweep_values("train.short_term_share") == std::vector<std::string>{"0.25", "0.5", "0.75"});
  c.variants = {model::Variant::Full};
  CHECK(sweep_jobs(c, "train.balance_strength", {"1", "2", "3"}).size() == 3 * 5);
  CHECK_THROWS_AS(sweep_jobs(c, "train.nothing", {"1"}), ConfigError);
  CHECK_THROWS_AS(table_jobs(c, "4", Budget::Desk), ConfigError);

  std::set<std::string> labels;
  for (const auto& j : table_jobs(c, "fig3", Budget::Desk)) labels.insert(j.label());
  CHECK(labels.size() == (4 + 3 + 4) * 5);
}

TEST_CASE("job overrides reach the training configuration") {
  const auto c = tiny();
  const JobSpec spec{model::Variant::Ipm, 7, 1.5, 40, "train.balance_strength", "25"};
  const auto j = job_config(c, spec);
  CHECK(j.train.loss.balance_strength == 25);
  CHECK(j.synthetic.confounding == 1.5);
  CHECK(j.synthetic.n_experimental == 40);
  CHECK(j.train.seed == 7);
  CHECK(c.train.loss.balance_strength == 100);
}

TEST_CASE("summary statistics") {
  std::vector<JobResult> rs(3);
  const double mise[] = {1.0, 2.0, 3.0};
  for (int i = 0; i < 3; ++i) {
    rs[static_cast<std::size_t>(i)].dataset = "synthetic";
    rs[static_cast<std::size_t>(i)].status = "complete";
    rs[static_cast<std::size_t>(i)].spec.seed = static_cast<std::uint64_t>(i);
    rs[static_cast<std::size_t>(i)].metrics.mise = mise[i];
  }
  std::ostringstream s;
  write_summary_csv(s, rs);
  std::string header, row;
  std::istringstream in(s.str());
  std::getline(in, header);
  std::getline(in, row);
  CHECK(row.rfind("synthetic,1,0,full,,,3,0,2,1,2.00±1.00,", 0) == 0);
  CHECK(runs_csv(rs).find("synthetic,1,0,full,2,,,complete,-1,3,") != std::string::npos);
}

TEST_CASE("jobs are deterministic and independent of the worker count") {
  auto c = tiny();
  const auto jobs = table_jobs(c, "1", Budget::Full);
  std::vector<JobSpec> some(jobs.begin(), jobs.begin() + 4);
  RunOptions options;
  options.write_artifacts = false;
  const auto serial = run_jobs(c, some, options, 1);
  const auto parallel = run_jobs(c, some, options, 3);
  CHECK(runs_csv(serial) == runs_csv(parallel));
  for (std::size_t i = 0; i < some.size(); ++i) CHECK(serial[i].spec.label() == some[i].label());
}

TEST_CASE("training beats the random initialisation on the same data") {
  auto c = tiny();
  c.synthetic.n_observational = 300;
  c.synthetic.covariate_dim = 6;
  c.train.pretrain_epochs = 15;
  c.train.epochs = 15;
  const auto pair = make_datasets(c, 3);
  RunOptions options;
  options.write_artifacts = false;
  const auto trained = run_job(c, JobSpec{model::Variant::Full, 3, 1.0, 0, {}, {}}, options, &pair);
  auto mc = c.model;
  mc.covariate_dim = 6;
  mc.horizon = c.synthetic.horizon;
  const auto split = data::split_indices(pair.observational.size(), 3);
  const auto untrained = evaluate(model::LearnModel(mc, 3), pair.observational.subset(split.test), pair.experimental, c, false);
  CHECK(std::isfinite(untrained.mise));
  CHECK(trained.metrics.mise < untrained.mise);
}

TEST_CASE("manifests: running until complete, checkpoint alongside") {
  TempDir tmp("learn_manifest_test");
  auto c = tiny();
  RunOptions options;
  options.directory = tmp.path;
  const JobSpec spec{model::Variant::Full, 1, 1.0, 0, {}, {}};
  const auto r = run_job(c, spec, options);
  std::ifstream in(r.directory / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["schema_version"] == kManifestSchemaVersion);
  CHECK(j["status"] == "complete");
  CHECK(j["config_hash"] == config_hash(job_config(c, spec)));
  CHECK(j["training"]["epochs"].size() == 4);
  CHECK(fs::exists(r.directory / "model.ckpt"));
  CHECK(j["metrics"]["mise"].get<double>() == doctest::Approx(r.metrics.mise));

  // A run that fails after starting leaves its manifest marked as running.
  auto broken = c;
  broken.dataset = "semisynthetic";
  broken.covariates = tmp.path / "absent.csv";
  const JobSpec other{model::Variant::Full, 2, 1.0, 0, {}, {}};
  CHECK_THROWS(run_job(broken, other, options));
  std::ifstream partial(tmp.path / other.label() / "manifest.json");
  CHECK(nlohmann::json::parse(partial)["status"] == "running");
}
