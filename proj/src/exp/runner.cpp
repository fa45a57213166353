// SPDX-License-Identifier: Apache-2.0
#include "learn/exp/runner.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "learn/data/io.hpp"
#include "learn/exp/manifest.hpp"
#include "learn/metrics/metrics.hpp"

namespace learn::exp {
namespace {

using Eigen::MatrixXd;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

MatrixXd to_eigen(const diff::Tensor& t) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                    static_cast<Eigen::Index>(t.cols()));
}

MatrixXd column(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string real(double v) { return std::isfinite(v) ? fmt::format("{:.10g}", v) : "nan"; }

std::string sanitize(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '-';
  return s;
}

bool is_synthetic(const ExperimentConfig& c) { return c.dataset == "synthetic"; }

MetricsRow missing_metrics() {
  MetricsRow m;
  m.mise = m.hsic_before = m.hsic_after = kNaN;
  m.hsconic_s_before = m.hsconic_s_after = m.hsconic_y_before = m.hsconic_y_after = kNaN;
  return m;
}

struct Moments {
  double mean = kNaN, std = kNaN;
  std::size_t count = 0;
};

Moments moments(const std::vector<double>& values) {
  Moments m;
  std::vector<double> finite;
  std::copy_if(values.begin(), values.end(), std::back_inserter(finite), [](double v) { return std::isfinite(v); });
  m.count = finite.size();
  if (finite.empty()) return m;
  m.mean = std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
  if (finite.size() < 2) {
    m.std = 0.0;
    return m;
  }
  double ss = 0.0;
  for (double v : finite) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(finite.size() - 1));
  return m;
}

std::string beta_text(const JobResult& r) { return r.dataset == "synthetic" ? real(r.spec.confounding) : ""; }

}  // namespace

std::string JobSpec::label() const {
  std::string s = fmt::format("{}_b{:g}_s{}", model::variant_name(variant), confounding, seed);
  if (n_experimental > 0) s += fmt::format("_ne{}", n_experimental);
  if (!override_key.empty()) s += "_" + sanitize(override_key + "-" + override_value);
  return s;
}

namespace {
// NaN when either side is missing or the baseline is degenerate.
double ratio(double before, double after) {
  return before > 0 && std::isfinite(before) && std::isfinite(after) ? metrics::reduction_ratio(before, after) : kNaN;
}
}  // namespace

double MetricsRow::ratio_hsic() const { return ratio(hsic_before, hsic_after); }
double MetricsRow::ratio_s() const { return ratio(hsconic_s_before, hsconic_s_after); }
double MetricsRow::ratio_y() const { return ratio(hsconic_y_before, hsconic_y_after); }

ExperimentConfig job_config(const ExperimentConfig& base, const JobSpec& spec) {
  ExperimentConfig c = base;
  c.synthetic.confounding = spec.confounding;
  if (spec.n_experimental > 0) c.synthetic.n_experimental = spec.n_experimental;
  c.synthetic.seed = spec.seed;
  c.train.seed = spec.seed;
  if (!spec.override_key.empty()) apply_override(c, spec.override_key + "=" + spec.override_value);
  return c;
}

data::DatasetPair make_datasets(const ExperimentConfig& config, std::uint64_t seed) {
  if (is_synthetic(config)) {
    auto cfg = config.synthetic;
    cfg.seed = seed;
    auto d = data::generate_synthetic(cfg);
    return {std::move(d.observational), std::move(d.experimental)};
  }
  auto d = data::generate_semisynthetic(data::load_covariate_matrix(config.covariates), config.semisynthetic(seed));
  return {std::move(d.observational), std::move(d.experimental)};
}

MetricsRow evaluate(const model::LearnModel& model, const data::Dataset& test, const data::Dataset& experimental,
                    const ExperimentConfig& config, bool kernel_metrics) {
  MetricsRow m = missing_metrics();
  const auto& grid = test.grid();
  m.mise = metrics::mise(to_eigen(test.long_term_curves()), model::predict_hdrc(model, test.view().covariates, grid),
                         grid);
  if (!kernel_metrics) return m;

  std::vector<std::size_t> rows(std::min(config.kernel_metric_units, test.size()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const data::Dataset sub = test.subset(rows);
  const auto& view = sub.view();
  const MatrixXd a = column(view.treatment), x = to_eigen(view.covariates);
  MatrixXd z;
  {
    diff::NoGradGuard no_grad;
    z = to_eigen(model.represent(diff::constant(view.covariates)).value());
  }
  m.hsic_before = metrics::hsic(x, a).value;
  m.hsic_after = metrics::hsic(z, a).value;

  const auto weights =
      model::transport_weights(model, view, experimental.view(), config.train.transport, config.train.cost);
  const MatrixXd s = to_eigen(view.short_term), y = column(view.long_term);
  m.hsconic_s_before = metrics::hsconic(s, a, x).value;
  m.hsconic_s_after = metrics::hsconic(s, a, x, weights).value;
  m.hsconic_y_before = metrics::hsconic(y, a, x).value;
  m.hsconic_y_after = metrics::hsconic(y, a, x, weights).value;
  return m;
}

JobResult run_job(const ExperimentConfig& base, const JobSpec& spec, const RunOptions& options,
                  const data::DatasetPair* datasets) {
  ExperimentConfig cfg = job_config(base, spec);
  validate(cfg);
  JobResult result;
  result.spec = spec;
  result.dataset = cfg.dataset;

  RunManifest manifest;
  manifest.dataset = cfg.dataset;
  manifest.spec = spec;
  manifest.config = to_json(cfg);
  if (options.write_artifacts) result.directory = options.directory / spec.label();
  auto persist = [&] {
    if (options.write_artifacts) write_manifest(result.directory / "manifest.json", manifest);
  };
  persist();

  auto clock = std::chrono::steady_clock::now();
  std::optional<data::DatasetPair> generated;
  if (!datasets) generated = make_datasets(cfg, spec.seed);
  const data::DatasetPair& pair = datasets ? *datasets : *generated;
  const auto split = data::split_indices(pair.observational.size(), spec.seed);
  const auto train_set = pair.observational.subset(split.train);
  const auto validation_set = pair.observational.subset(split.validation);
  const auto test_set = pair.observational.subset(split.test);
  cfg.model.covariate_dim = pair.observational.view().covariate_dim();
  cfg.model.horizon = pair.observational.view().horizon();
  manifest.generate_seconds = seconds_since(clock);

  clock = std::chrono::steady_clock::now();
  std::optional<model::TrainResult> trained;
  try {
    trained = model::train(train_set, validation_set, pair.experimental, cfg.model, cfg.train, spec.variant);
  } catch (const model::DivergenceError& e) {
    result.status = manifest.status = "diverged";
    result.report = e.report();
    result.metrics = missing_metrics();
    manifest.report = result.report;
    manifest.error = e.what();
  }
  result.train_seconds = manifest.train_seconds = seconds_since(clock);

  if (trained) {
    clock = std::chrono::steady_clock::now();
    result.metrics = evaluate(trained->model, test_set, pair.experimental, cfg, options.kernel_metrics);
    manifest.evaluate_seconds = seconds_since(clock);
    result.report = trained->report;
    result.status = manifest.status = "complete";
    manifest.report = result.report;
    manifest.metrics = result.metrics;
    if (options.write_artifacts) {
      save_model(result.directory / "model.ckpt", trained->model);
      manifest.checkpoint = "model.ckpt";
    }
  }
  persist();
  spdlog::info("{}: {} mise {} ({:.1f}s)", spec.label(), result.status, real(result.metrics.mise),
               result.train_seconds);
  return result;
}

std::size_t worker_count() {
  const char* env = std::getenv("LEARN_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("LEARN_WORKERS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(n);
}

std::vector<JobResult> run_jobs(const ExperimentConfig& config, const std::vector<JobSpec>& jobs,
                                const RunOptions& options, std::size_t workers) {
  std::vector<JobResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_job(config, jobs[i], options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(jobs.size(), 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

std::vector<std::string> default_sweep_values(const std::string& key) {
  if (key == "train.balance_strength") return {"50", "100", "150", "200"};
  if (key == "train.short_term_share") return {"0.25", "0.5", "0.75"};
  if (key == "train.entropy_strength") return {"0", "10", "100", "1000"};
  if (key == "train.transport_iterations") return {"50", "100", "500"};
  throw ConfigError("no default sweep values for '" + key + "'");
}

std::vector<JobSpec> sweep_jobs(const ExperimentConfig& config, const std::string& key,
                                const std::vector<std::string>& values) {
  // Fail early on unknown keys or malformed values.
  for (const auto& v : values) {
    ExperimentConfig probe = config;
    apply_override(probe, key + "=" + v);
  }
  std::vector<JobSpec> jobs;
  for (const auto& v : values)
    for (auto variant : config.variants)
      for (auto seed : config.run_seeds())
        jobs.push_back(JobSpec{variant, seed, config.synthetic.confounding, 0, key, v});
  return jobs;
}

std::vector<JobSpec> table_jobs(const ExperimentConfig& config, const std::string& table, Budget budget) {
  const auto seeds = config.run_seeds();
  const double beta = config.synthetic.confounding;
  std::vector<JobSpec> jobs;
  if (table == "1") {
    std::vector<double> betas{beta};
    if (is_synthetic(config)) {
      betas = budget == Budget::Desk ? std::vector<double>{1.0, 2.0} : std::vector<double>{1.0, 1.25, 1.5, 1.75, 2.0};
    }
    for (double b : betas)
      for (auto v : config.variants)
        for (auto s : seeds) jobs.push_back(JobSpec{v, s, b, 0, {}, {}});
  } else if (table == "2") {
    for (auto s : seeds) jobs.push_back(JobSpec{model::Variant::Full, s, beta, 0, {}, {}});
  } else if (table == "3") {
    const std::vector<std::size_t> sizes = budget == Budget::Desk ? std::vector<std::size_t>{100, 500, 2000}
                                                                  : std::vector<std::size_t>{100, 250, 500, 1000, 2000};
    for (auto n : sizes)
      for (auto s : seeds) jobs.push_back(JobSpec{model::Variant::Full, s, beta, n, {}, {}});
  } else if (table == "fig3") {
    ExperimentConfig full_only = config;
    full_only.variants = {model::Variant::Full};
    for (const char* key : {"train.balance_strength", "train.short_term_share", "train.entropy_strength"}) {
      auto part = sweep_jobs(full_only, key, default_sweep_values(key));
      jobs.insert(jobs.end(), part.begin(), part.end());
    }
  } else {
    throw ConfigError("unknown table '" + table + "' (expected 1, 2, 3 or fig3)");
  }
  return jobs;
}

void write_runs_csv(std::ostream& out, const std::vector<JobResult>& results) {
  out << "dataset,beta_u,n_experimental,variant,seed,param,value,status,best_epoch,mise,hsic_before,hsic_after,"
         "hsconic_s_before,hsconic_s_after,hsconic_y_before,hsconic_y_after,ratio_hsic,ratio_s,ratio_y\n";
  for (const auto& r : results) {
    const auto& m = r.metrics;
    out << r.dataset << ',' << beta_text(r) << ',' << r.spec.n_experimental << ','
        << model::variant_name(r.spec.variant) << ',' << r.spec.seed << ',' << r.spec.override_key << ','
        << r.spec.override_value << ',' << r.status << ',' << r.report.best_epoch << ',' << real(m.mise) << ','
        << real(m.hsic_before) << ',' << real(m.hsic_after) << ',' << real(m.hsconic_s_before) << ','
        << real(m.hsconic_s_after) << ',' << real(m.hsconic_y_before) << ',' << real(m.hsconic_y_after) << ','
        << real(m.ratio_hsic()) << ',' << real(m.ratio_s()) << ',' << real(m.ratio_y()) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const std::vector<JobResult>& results) {
  // Groups in order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const JobResult*>> groups;
  for (const auto& r : results) {
    const std::string key = fmt::format("{},{},{},{},{},{}", r.dataset, beta_text(r), r.spec.n_experimental,
                                        model::variant_name(r.spec.variant), r.spec.override_key,
                                        r.spec.override_value);
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  out << "dataset,beta_u,n_experimental,variant,param,value,runs,diverged,mise_mean,mise_std,mise,"
         "ratio_hsic_mean,ratio_s_mean,ratio_y_mean,ratio_s_positive,ratio_y_positive\n";
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> mise, rh, rs, ry;
    std::size_t diverged = 0, s_pos = 0, y_pos = 0;
    for (const auto* r : g) {
      diverged += r->status == "diverged";
      mise.push_back(r->metrics.mise);
      rh.push_back(r->metrics.ratio_hsic());
      rs.push_back(r->metrics.ratio_s());
      ry.push_back(r->metrics.ratio_y());
      s_pos += r->metrics.ratio_s() > 0;
      y_pos += r->metrics.ratio_y() > 0;
    }
    const auto m = moments(mise);
    out << key << ',' << g.size() << ',' << diverged << ',' << real(m.mean) << ',' << real(m.std) << ','
        << (m.count ? fmt::format("{:.2f}±{:.2f}", m.mean, m.std) : "nan") << ',' << real(moments(rh).mean) << ','
        << real(moments(rs).mean) << ',' << real(moments(ry).mean) << ',' << s_pos << ',' << y_pos << '\n';
  }
}

TableFiles write_tables(const std::filesystem::path& directory, const std::vector<JobResult>& results) {
  TableFiles files{directory / "runs.csv", directory / "summary.csv"};
  std::ostringstream runs, summary;
  write_runs_csv(runs, results);
  write_summary_csv(summary, results);
  data::write_file_atomic(files.runs, runs.str());
  data::write_file_atomic(files.summary, summary.str());
  return files;
}

}  // namespace learn::exp
