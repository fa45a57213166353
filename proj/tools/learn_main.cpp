// SPDX-License-Identifier: Apache-2.0
//
// learn: dataset generation, training, evaluation and table reproduction.
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 data error, 4 numeric divergence.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "learn/data/io.hpp"
#include "learn/exp/config.hpp"
#include "learn/exp/manifest.hpp"
#include "learn/exp/runner.hpp"

namespace fs = std::filesystem;
using namespace learn;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string variant = "full";
  std::string budget = "full";
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App& cmd, CommonOptions& o) {
  cmd.add_option("--config", o.config_file, "INI configuration file")->check(CLI::ExistingFile);
  cmd.add_option("--seed", o.seed, "master seed (single-run commands use it as the run seed)");
  cmd.add_option("--variant", o.variant, "none, ipm or full")->capture_default_str();
  cmd.add_option("--budget", o.budget, "full or desk")->capture_default_str();
  cmd.add_option("--out", o.out, "output directory (default: [experiment] output)");
  cmd.add_option("--set", o.overrides, "section.key=value override, repeatable");
}

exp::ExperimentConfig assemble(const CommonOptions& o) {
  exp::ExperimentConfig c;
  exp::apply_budget(c, exp::parse_budget(o.budget));
  if (!o.config_file.empty()) exp::apply_config_file(c, o.config_file);
  for (const auto& s : o.overrides) exp::apply_override(c, s);
  if (o.seed) c.master_seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  exp::validate(c);
  return c;
}

model::Variant variant_of(const CommonOptions& o) {
  try {
    return model::parse_variant(o.variant);
  } catch (const std::invalid_argument& e) {
    throw exp::ConfigError(e.what());
  }
}

void require_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const auto probe = dir / ".write_probe";
  std::ofstream(probe) << "";
  if (ec || !fs::exists(probe)) throw exp::ConfigError("output directory is not writable: " + dir.string());
  fs::remove(probe);
}

std::string file_sha1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return exp::sha1_hex(bytes.str());
}

void write_pair(const fs::path& dir, const data::DatasetPair& pair) {
  for (const auto& [name, ds] : {std::pair{"observational.csv", &pair.observational},
                                 std::pair{"experimental.csv", &pair.experimental}}) {
    const auto path = dir / name;
    data::write_dataset(path, *ds);
    std::cout << file_sha1(path) << "  " << path.string() << "\n";
    spdlog::info("wrote {} ({} rows)", path.string(), ds->size());
  }
}

data::DatasetPair read_pair(const fs::path& dir) {
  data::DatasetPair pair;
  for (const auto& [name, ds] : {std::pair{"observational.csv", &pair.observational},
                                 std::pair{"experimental.csv", &pair.experimental}}) {
    const auto path = dir / name;
    if (!fs::exists(path)) throw DataError("missing dataset " + path.string() + " (run `learn generate` first)");
    *ds = data::read_dataset(path);
  }
  if (!pair.observational.has_oracle()) throw DataError("evaluation needs " + data::oracle_path(dir / "observational.csv").string());
  return pair;
}

int cmd_generate(const CommonOptions& o, bool beta_sweep) {
  auto c = assemble(o);
  require_writable(c.output_dir);
  if (!beta_sweep) {
    write_pair(c.output_dir, exp::make_datasets(c, c.master_seed));
    return kOk;
  }
  if (c.dataset != "synthetic") throw exp::ConfigError("--beta-sweep applies to synthetic data only");
  for (double beta : {1.0, 1.25, 1.5, 1.75, 2.0}) {
    c.synthetic.confounding = beta;
    write_pair(c.output_dir / fmt::format("beta_{:g}", beta), exp::make_datasets(c, c.master_seed));
  }
  return kOk;
}

int cmd_train(const CommonOptions& o, const std::string& data_dir) {
  const auto c = assemble(o);
  const auto pair = read_pair(data_dir.empty() ? c.output_dir : fs::path(data_dir));
  require_writable(c.output_dir);
  const exp::JobSpec spec{variant_of(o), c.master_seed, c.synthetic.confounding, 0, {}, {}};
  exp::RunOptions options;
  options.directory = c.output_dir;
  const auto result = exp::run_job(c, spec, options, &pair);
  std::ostringstream row;
  exp::write_runs_csv(row, {result});
  data::write_file_atomic(result.directory / "metrics.csv", row.str());
  std::cout << row.str();
  return result.status == "complete" ? kOk : kNumeric;
}

int cmd_eval(const CommonOptions& o, const std::string& data_dir, const std::string& checkpoint) {
  auto c = assemble(o);
  const auto pair = read_pair(data_dir.empty() ? c.output_dir : fs::path(data_dir));
  c.model.covariate_dim = pair.observational.view().covariate_dim();
  c.model.horizon = pair.observational.view().horizon();
  model::LearnModel m = checkpoint.empty() ? model::LearnModel(c.model, c.master_seed)
                                           : model::load_model(checkpoint, c.model);
  const auto split = data::split_indices(pair.observational.size(), c.master_seed);
  const auto metrics = exp::evaluate(m, pair.observational.subset(split.test), pair.experimental, c, true);
  exp::JobResult r;
  r.spec = exp::JobSpec{variant_of(o), c.master_seed, c.synthetic.confounding, 0, {}, {}};
  r.dataset = c.dataset;
  r.status = checkpoint.empty() ? "untrained" : "complete";
  r.metrics = metrics;
  exp::write_runs_csv(std::cout, {r});
  return kOk;
}

int run_table(const exp::ExperimentConfig& c, const std::vector<exp::JobSpec>& jobs, const fs::path& dir) {
  require_writable(dir);
  exp::RunOptions options;
  options.directory = dir / "runs";
  spdlog::info("{} runs into {} with {} worker(s)", jobs.size(), dir.string(), exp::worker_count());
  const auto results = exp::run_jobs(c, jobs, options, exp::worker_count());
  const auto files = exp::write_tables(dir, results);
  std::ifstream summary(files.summary);
  std::cout << summary.rdbuf();
  const bool diverged = std::any_of(results.begin(), results.end(), [](const auto& r) { return r.status != "complete"; });
  return diverged ? kNumeric : kOk;
}

int cmd_reproduce(const CommonOptions& o, const std::string& table) {
  const auto c = assemble(o);
  const auto jobs = exp::table_jobs(c, table, exp::parse_budget(o.budget));
  return run_table(c, jobs, c.output_dir / ("table" + table));
}

int cmd_sweep(const CommonOptions& o, const std::string& key, const std::vector<std::string>& values) {
  auto c = assemble(o);
  c.variants = {variant_of(o)};
  const auto jobs = exp::sweep_jobs(c, key, values.empty() ? exp::default_sweep_values(key) : values);
  return run_table(c, jobs, c.output_dir / ("sweep_" + key));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-term dose-response estimation with transport reweighting"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false, verbose = false;
  app.add_flag("-q,--quiet", quiet, "only warnings and errors");
  app.add_flag("-v,--verbose", verbose, "per-epoch logging");

  CommonOptions common;
  bool beta_sweep = false;
  std::string data_dir, checkpoint, table = "1", param;
  std::vector<std::string> values;

  auto* gen = app.add_subcommand("generate", "write observational and experimental datasets");
  add_common(*gen, common);
  gen->add_flag("--beta-sweep", beta_sweep, "one synthetic dataset per beta_U in {1, 1.25, 1.5, 1.75, 2}");

  auto* tr = app.add_subcommand("train", "train one variant on generated datasets");
  add_common(*tr, common);
  tr->add_option("--data", data_dir, "directory holding observational.csv and experimental.csv");

  auto* ev = app.add_subcommand("eval", "test-split metrics of a checkpoint (random initialisation without one)");
  add_common(*ev, common);
  ev->add_option("--data", data_dir, "directory holding observational.csv and experimental.csv");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("reproduce", "run a result table over variants and seeds");
  add_common(*rep, common);
  rep->add_option("--table", table, "1, 2, 3 or fig3")->capture_default_str();

  auto* sw = app.add_subcommand("sweep", "sweep one configuration key");
  add_common(*sw, common);
  sw->add_option("--param", param, "section.key, e.g. train.balance_strength")->required();
  sw->add_option("--values", values, "comma-separated values (default: the standard grid)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("learn"));
  spdlog::set_level(quiet ? spdlog::level::warn : verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*gen) return cmd_generate(common, beta_sweep);
    if (*tr) return cmd_train(common, data_dir);
    if (*ev) return cmd_eval(common, data_dir, checkpoint);
    if (*rep) return cmd_reproduce(common, table);
    if (*sw) return cmd_sweep(common, param, values);
  } catch (const exp::ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return kConfig;
  } catch (const model::NumericError& e) {
    spdlog::error("numeric: {}", e.what());
    return kNumeric;
  } catch (const DataError& e) {
    spdlog::error("data: {}", e.what());
    return kData;
  } catch (const data::DatasetFormatError& e) {
    spdlog::error("data: {}", e.what());
    return kData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
