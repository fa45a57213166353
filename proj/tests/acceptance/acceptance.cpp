// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks A1..A9. Prints one PASS/FAIL line per
// criterion. The exit status reports whether the checks ran, not whether they
// passed; --strict turns any FAIL into exit status 1.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "learn/balance/ipm.hpp"
#include "learn/exp/runner.hpp"
#include "learn/metrics/metrics.hpp"
#include "learn/nn/recurrent.hpp"
#include "learn/nn/spline.hpp"
#include "learn/ot/transport.hpp"

namespace fs = std::filesystem;
using namespace learn;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using diff::Tensor;

namespace {

// Tolerances and sizes.
constexpr double kGradRtol = 1e-3, kGradAtol = 1e-6;
constexpr int kGradCases = 100;
constexpr std::size_t kGradCoords = 20;
constexpr double kMirrorGap = 0.02, kMarginalTol = 1e-9;
constexpr double kCouplingTol = 1e-12, kBoundTol = 1e-9;
constexpr int kInstances = 20;
constexpr double kCpuBudgetMinutes = 30.0;
constexpr double kHsicReduction = 0.5;
constexpr int kSeedsPositive = 4;
constexpr double kNullRate = 0.05, kNullSlack = 0.03;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double wall() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_).count(); }
  double cpu() const { return static_cast<double>(std::clock() - cpu_) / CLOCKS_PER_SEC; }

 private:
  std::chrono::steady_clock::time_point wall_ = std::chrono::steady_clock::now();
  std::clock_t cpu_ = std::clock();
};

MatrixXd uniform_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& g, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  MatrixXd m(r, c);
  for (auto& v : m.reshaped()) v = d(g);
  return m;
}

VectorXd uniform_mass(Eigen::Index n) { return VectorXd::Constant(n, 1.0 / static_cast<double>(n)); }

std::vector<double> random_treatments(std::size_t n, std::mt19937_64& g) {
  std::uniform_real_distribution<double> d(0.02, 0.98);
  std::vector<double> a(n);
  for (auto& v : a) v = d(g);
  return a;
}

std::vector<diff::Var> params_of(const auto& block) {
  std::vector<diff::Var> ps;
  block.collect(ps);
  return ps;
}

// ---- A1 ---------------------------------------------------------------------

Outcome gradients() {
  using testing::grad_check;
  using testing::random_tensor;
  std::mt19937_64 g(101);
  std::uniform_int_distribution<std::size_t> dim(2, 4);
  std::map<std::string, std::size_t> failures, cases;
  std::size_t coords = 0;
  std::string first;
  const balance::IpmConfig converged{.iterations = 4000, .tolerance = 1e-14};

  for (int c = 0; c < kGradCases; ++c) {
    const std::uint64_t seed = g();
    nn::Rng rng(seed);
    const std::size_t batch = dim(g), in = dim(g), out = dim(g), steps = dim(g);
    const auto treatments = random_treatments(batch, g);
    const Tensor basis = nn::spline_basis_matrix(treatments);
    Tensor x = random_tensor(batch, in, g);
    std::function<diff::Var()> loss;
    std::vector<diff::Var> ps;
    std::string kind;
    model::ModelConfig small;
    std::optional<nn::MlpBlock> mlp;
    std::optional<nn::VcLinear> vc;
    std::optional<nn::BiGruBlock> gru;
    std::optional<nn::AttentionBlock> att;
    std::optional<model::LearnModel> net;
    std::vector<diff::Var> seq;
    diff::Var za, zb;
    std::vector<double> wa, wb;
    model::ObservationalBatch obs;
    model::ExperimentalBatch expb;

    switch (c % 6) {
      case 0:
        kind = "mlp";
        mlp.emplace("mlp", in, dim(g) + 2, out, 1, c % 12 == 0, rng);
        ps = params_of(*mlp);
        loss = [&] { return diff::sum(diff::square(mlp->forward(diff::constant(x)))); };
        break;
      case 1:
        kind = "varying_coefficient";
        vc.emplace("vc", in, out, nn::kSplineBasisSize, true, rng);
        ps = params_of(*vc);
        loss = [&] { return diff::sum(diff::square(vc->forward(diff::constant(x), basis))); };
        break;
      case 2:
        kind = "bigru";
        gru.emplace("q", in, out, nn::kSplineBasisSize, rng);
        for (std::size_t t = 0; t < steps; ++t) seq.push_back(diff::parameter(random_tensor(batch, in, g), "x"));
        ps = params_of(*gru);
        ps.insert(ps.end(), seq.begin(), seq.end());
        loss = [&] { return diff::sum(diff::square(diff::concat(gru->forward(seq, basis), 1))); };
        break;
      case 3:
        kind = "attention";
        att.emplace("f", in, out, nn::kSplineBasisSize, rng);
        for (std::size_t t = 0; t < steps; ++t) seq.push_back(diff::parameter(random_tensor(batch, in, g), "r"));
        ps = params_of(*att);
        ps.insert(ps.end(), seq.begin(), seq.end());
        loss = [&] { return diff::sum(diff::square(att->forward(seq, basis).pooled)); };
        break;
      case 4: {
        kind = "ipm";
        std::uniform_real_distribution<double> wd(0.5, 2.0);
        za = diff::parameter(random_tensor(batch, in, g), "za");
        zb = diff::constant(random_tensor(batch + 1, in, g, -0.5, 1.5));
        wa.resize(batch);
        wb.resize(batch + 1);
        for (auto& v : wa) v = wd(g);
        for (auto& v : wb) v = wd(g);
        ps = {za};
        loss = [&] { return balance::ipm_wasserstein(za, wa, zb, wb, converged); };
        break;
      }
      default: {
        kind = "full_loss";
        small.covariate_dim = in;
        small.horizon = steps;
        small.representation_dim = dim(g);
        small.hidden = dim(g);
        small.recurrent_hidden = dim(g);
        net.emplace(small, seed);
        obs.covariates = x;
        obs.treatment = treatments;
        obs.short_term = random_tensor(batch, steps, g, -2, 2);
        obs.long_term.resize(batch);
        for (auto& v : obs.long_term) v = std::normal_distribution<double>(0, 2)(g);
        expb.covariates = random_tensor(batch + 1, in, g);
        expb.treatment = random_treatments(batch + 1, g);
        expb.short_term = random_tensor(batch + 1, steps, g, -2, 2);
        wa.resize(batch);
        for (auto& v : wa) v = std::uniform_real_distribution<double>(0.3, 2.0)(g);
        wb.assign(obs.treatment.rbegin(), obs.treatment.rend());
        ps = net->parameters();
        loss = [&] {
          model::LossConfig lc;
          lc.balance_strength = 3.0;
          lc.ipm = converged;
          return model::loss_batch(*net, obs, wa, expb, wb, lc).total;
        };
      }
    }
    const auto r = grad_check(loss, ps, kGradCoords, seed, 1e-5, kGradRtol, kGradAtol);
    coords += r.checked;
    cases[kind] += 1;
    failures[kind] += r.failures;
    if (r.failures && first.empty()) first = kind + ": " + r.first_failure;
  }
  std::size_t total = 0;
  std::string parts;
  for (const auto& [kind, n] : cases) {
    total += failures[kind];
    parts += fmt::format(" {}={}/{}", kind, failures[kind], n);
  }
  return {total == 0, fmt::format("{} cases, {} coordinates, failures/cases per block:{}{}", kGradCases,
                                  coords, parts, first.empty() ? "" : "; first: " + first)};
}

// ---- A2 ---------------------------------------------------------------------

Outcome mirror_descent() {
  std::mt19937_64 g(202);
  std::uniform_int_distribution<int> dim(2, 5);
  double worst_gap = 0.0, worst_objective_gap = 0.0, worst_marginal = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    const int b = dim(g), ne = dim(g);
    const MatrixXd cost = uniform_matrix(b, ne, g);
    double optimum = 0.0;
    for (int j = 0; j < ne; ++j) optimum += cost.col(j).minCoeff() / ne;
    const ot::MirrorDescentConfig cfg{.entropy_strength = 1e-3, .step_size = 0.5, .iterations = 5000};
    const auto r = ot::mirror_descent_weights(cost, cfg, [&](int, const MatrixXd& plan, double) {
      worst_marginal = std::max(worst_marginal, (plan.colwise().sum().array() - 1.0 / ne).abs().maxCoeff());
    });
    // The entropy term shifts the objective by up to lambda_e (1 + log b) below
    // the unregularised optimum; plan optimality is judged on <P, C>.
    const double transport = (r.plan.array() * cost.array()).sum();
    worst_gap = std::max(worst_gap, std::abs(transport - optimum) / optimum);
    worst_objective_gap = std::max(worst_objective_gap, std::abs(r.objective - optimum) / optimum);
  }
  return {worst_gap <= kMirrorGap && worst_marginal <= kMarginalTol,
          fmt::format("{} instances: worst relative gap of <P,C> {:.3e} (tol {}), of the regularised objective "
                      "{:.3e}; worst column deviation {:.2e} (tol {:g})",
                      kInstances, worst_gap, kMirrorGap, worst_objective_gap, worst_marginal, kMarginalTol)};
}

// ---- A3 ---------------------------------------------------------------------

Outcome minibatch_bound() {
  std::mt19937_64 g(303);
  double worst_marginal = 0.0, worst_slack = 1e300;
  for (int k = 0; k < kInstances; ++k) {
    const std::size_t b = 2 + static_cast<std::size_t>(k % 3);
    const std::size_t batches = std::uniform_int_distribution<std::size_t>(1, 12 / b)(g);
    const std::size_t n = b * batches;
    const auto ne = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(2, 6)(g));
    const MatrixXd cost = uniform_matrix(static_cast<Eigen::Index>(n), ne, g);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), g);
    std::vector<std::vector<std::size_t>> parts;
    std::vector<MatrixXd> plans;
    for (std::size_t i = 0; i < batches; ++i) {
      parts.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i * b),
                         order.begin() + static_cast<std::ptrdiff_t>((i + 1) * b));
      MatrixXd sub(static_cast<Eigen::Index>(b), ne);
      for (std::size_t r = 0; r < b; ++r) sub.row(static_cast<Eigen::Index>(r)) = cost.row(static_cast<Eigen::Index>(parts.back()[r]));
      plans.push_back(ot::exact_ot(sub, uniform_mass(static_cast<Eigen::Index>(b)), uniform_mass(ne)).plan);
    }
    const MatrixXd coupling = ot::pad_and_average(plans, parts, n);
    const double dev = std::max((coupling.rowwise().sum() - uniform_mass(static_cast<Eigen::Index>(n))).cwiseAbs().maxCoeff(),
                                (coupling.colwise().sum().transpose() - uniform_mass(ne)).cwiseAbs().maxCoeff());
    worst_marginal = std::max(worst_marginal, dev);
    const double minibatch = (coupling.array() * cost.array()).sum();
    const double exact = ot::exact_ot(cost, uniform_mass(static_cast<Eigen::Index>(n)), uniform_mass(ne)).cost;
    worst_slack = std::min(worst_slack, minibatch - exact);
  }
  return {worst_marginal <= kCouplingTol && worst_slack >= -kBoundTol,
          fmt::format("{} instances: worst marginal deviation {:.2e}, min (mini-batch - exact) {:.3e}", kInstances,
                      worst_marginal, worst_slack)};
}

// ---- A4 ---------------------------------------------------------------------

Outcome conditional_bound() {
  std::mt19937_64 g(404);
  auto sq = [](const MatrixXd& a, const MatrixXd& b) {
    MatrixXd d(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    return d;
  };
  double worst = 1e300;
  for (int k = 0; k < kInstances; ++k) {
    const int levels = 2 + k % 2;
    auto sample = [&](int n) {
      ot::LeveledSample s{uniform_matrix(n, 2, g), std::vector<int>(static_cast<std::size_t>(n)), uniform_mass(n)};
      for (int i = 0; i < n; ++i) s.levels[static_cast<std::size_t>(i)] = i < levels ? i : std::uniform_int_distribution<int>(0, levels - 1)(g);
      return s;
    };
    const auto src = sample(std::uniform_int_distribution<int>(levels, 6)(g));
    const auto dst = sample(std::uniform_int_distribution<int>(levels, 6)(g));
    // Separable joint cost: outcome part plus a positive charge between distinct (x, a) cells.
    const MatrixXd level_values = uniform_matrix(levels, 2, g, 0.0, 2.0);
    MatrixXd joint = sq(src.outcomes, dst.outcomes);
    for (Eigen::Index i = 0; i < joint.rows(); ++i)
      for (Eigen::Index j = 0; j < joint.cols(); ++j)
        joint(i, j) += (level_values.row(src.levels[static_cast<std::size_t>(i)]) -
                        level_values.row(dst.levels[static_cast<std::size_t>(j)]))
                           .squaredNorm();
    const double conditional = ot::conditional_ot_sum(src, dst, sq);
    const double full = ot::exact_ot(joint, src.mass, dst.mass).cost;
    worst = std::min(worst, full - conditional);
  }
  return {worst >= -kBoundTol, fmt::format("{} instances: min (joint - conditional) {:.3e}", kInstances, worst)};
}

// ---- A5 / A6 / A7 -----------------------------------------------------------

exp::ExperimentConfig desk_config() {
  exp::ExperimentConfig c;
  exp::apply_budget(c, exp::Budget::Desk);
  c.master_seed = 1;
  return c;
}

double mean_mise(const std::vector<exp::JobResult>& rs, auto&& pick) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rs)
    if (pick(r)) sum += r.metrics.mise, ++n;
  return n ? sum / n : std::nan("");
}

struct DeskRuns {
  std::vector<exp::JobResult> results;
  double cpu_minutes = 0.0;
};

Outcome table1_trend(const DeskRuns& runs) {
  std::string detail;
  bool ordered = true;
  std::map<double, double> gain;
  for (double beta : {1.0, 2.0}) {
    auto at = [&](model::Variant v) {
      return mean_mise(runs.results, [&](const auto& r) { return r.spec.confounding == beta && r.spec.variant == v; });
    };
    const double full = at(model::Variant::Full), ipm = at(model::Variant::Ipm), none = at(model::Variant::None);
    ordered = ordered && full < ipm && ipm < none;
    gain[beta] = (ipm - full) / ipm;
    detail += fmt::format("beta_U={:g}: full {:.4f} ipm {:.4f} none {:.4f} (gain over ipm {:+.2f}%); ", beta, full,
                          ipm, none, 100 * gain[beta]);
  }
  const bool growing = gain[2.0] > gain[1.0];
  const bool in_budget = runs.cpu_minutes < kCpuBudgetMinutes;
  detail += fmt::format("ordering {}, gain grows with beta_U {}, cpu {:.1f} min (budget {:g})",
                        ordered ? "holds" : "violated", growing ? "yes" : "no", runs.cpu_minutes, kCpuBudgetMinutes);
  return {ordered && growing && in_budget, detail};
}

Outcome table2_analogue(const DeskRuns& runs) {
  std::vector<double> hsic_ratio;
  int s_pos = 0, y_pos = 0, n = 0;
  for (const auto& r : runs.results) {
    if (r.spec.confounding != 1.0 || r.spec.variant != model::Variant::Full) continue;
    ++n;
    hsic_ratio.push_back(r.metrics.ratio_hsic());
    s_pos += r.metrics.ratio_s() > 0;
    y_pos += r.metrics.ratio_y() > 0;
  }
  const double mean_ratio = std::accumulate(hsic_ratio.begin(), hsic_ratio.end(), 0.0) / std::max<std::size_t>(hsic_ratio.size(), 1);
  std::string per_seed;
  for (double v : hsic_ratio) per_seed += fmt::format(" {:.3f}", v);
  const bool pass = mean_ratio >= kHsicReduction && s_pos >= kSeedsPositive && y_pos >= kSeedsPositive;
  return {pass, fmt::format("HSIC reduction mean {:.3f} (per seed{}; need >= {}), HSCONIC ratio > 0 on {}/{} seeds "
                            "for S and {}/{} for Y (need {})",
                            mean_ratio, per_seed, kHsicReduction, s_pos, n, y_pos, n, kSeedsPositive)};
}

Outcome table3_trend(const std::vector<exp::JobResult>& runs) {
  const double small = mean_mise(runs, [](const auto& r) { return r.spec.n_experimental == 100; });
  const double large = mean_mise(runs, [](const auto& r) { return r.spec.n_experimental == 2000; });
  return {large <= small, fmt::format("mean MISE n_e=100 {:.4f}, n_e=2000 {:.4f}", small, large)};
}

// ---- A8 ---------------------------------------------------------------------

Outcome metric_oracles() {
  const auto grid = data::treatment_grid(65);
  const Eigen::Index n = 4, G = static_cast<Eigen::Index>(grid.size());
  MatrixXd truth(n, G), constant(n, G), linear(n, G);
  std::mt19937_64 g(808);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < G; ++k) {
      truth(i, k) = std::sin(3 * grid[static_cast<std::size_t>(k)]) + static_cast<double>(i);
      constant(i, k) = truth(i, k) + 1.7;
      linear(i, k) = truth(i, k) + grid[static_cast<std::size_t>(k)];
    }
  const double c_err = std::abs(metrics::mise(truth, constant, grid) - 1.7 * 1.7);
  const double l_err = std::abs(metrics::mise(truth, linear, grid) - 1.0 / 3.0);

  const int trials = 200, perms = 99;
  int hsic_rejects = 0, hsconic_rejects = 0;
  for (int t = 0; t < trials; ++t) {
    const MatrixXd x = uniform_matrix(30, 1, g), y = uniform_matrix(30, 1, g);
    hsic_rejects += metrics::hsic_permutation_test(x, y, perms, g()).p_value <= kNullRate;
    // x and y depend on a three-level z only.
    MatrixXd z(30, 1), cx(30, 1), cy(30, 1);
    std::vector<int> strata(30);
    std::normal_distribution<double> noise(0, 1);
    for (int i = 0; i < 30; ++i) {
      strata[static_cast<std::size_t>(i)] = i % 3;
      z(i, 0) = i % 3;
      cx(i, 0) = 2 * z(i, 0) + noise(g);
      cy(i, 0) = -z(i, 0) + noise(g);
    }
    hsconic_rejects += metrics::hsconic_permutation_test(cx, cy, z, strata, perms, g()).p_value <= kNullRate;
  }
  const double hr = static_cast<double>(hsic_rejects) / trials, cr = static_cast<double>(hsconic_rejects) / trials;
  auto calibrated = [](double rate) { return std::abs(rate - kNullRate) <= kNullSlack; };
  const bool pass = c_err <= 1e-12 && l_err <= 1e-3 && calibrated(hr) && calibrated(cr);
  return {pass, fmt::format("MISE constant offset error {:.1e}, linear offset error {:.1e}; null rejection at 5%: "
                            "HSIC {:.3f}, HSCONIC {:.3f} ({} trials)",
                            c_err, l_err, hr, cr, trials)};
}

// ---- A9 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  if (cli.empty()) return {false, "no CLI binary given (--cli)"};
  std::vector<fs::path> outs{work / "a9_first", work / "a9_second"};
  for (const auto& out : outs) {
    fs::remove_all(out);
    const std::string cmd = fmt::format(
        "\"{}\" -q reproduce --table 1 --budget desk --seed 7 --set experiment.replications=1 --out \"{}\" > \"{}\" 2>&1",
        cli, out.string(), (work / (out.filename().string() + ".log")).string());
    if (std::system(cmd.c_str()) != 0) return {false, "reproduce failed: " + cmd};
  }
  std::string detail;
  bool same = true;
  for (const char* name : {"runs.csv", "summary.csv"}) {
    const auto a = slurp(outs[0] / "table1" / name), b = slurp(outs[1] / "table1" / name);
    const bool eq = !a.empty() && a == b;
    same = same && eq;
    detail += fmt::format("{} {} ({} bytes); ", name, eq ? "identical" : "differs", a.size());
  }
  return {same, detail + "two desk reproductions of table 1, one replication, master seed 7"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string only, cli;
  std::string work = (fs::temp_directory_path() / "learn_acceptance").string();
  bool strict = false;
  app.add_option("--only", only, "comma-separated subset, e.g. A1,A8");
  app.add_option("--cli", cli, "path to the learn binary (A9)");
  app.add_option("--work", work, "scratch directory");
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  std::set<std::string> selected;
  for (std::stringstream s(only); s.good();) {
    std::string item;
    std::getline(s, item, ',');
    if (!item.empty()) selected.insert(item);
  }
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.contains(id); };
  fs::create_directories(work);

  int failed = 0;
  auto report = [&](const std::string& id, const std::function<Outcome()>& check) {
    if (!wanted(id)) return;
    Clock clock;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} {}  {} [{:.1f}s]", id, o.pass ? "PASS" : "FAIL", o.detail, clock.wall()) << std::endl;
  };

  report("A1", gradients);
  report("A2", mirror_descent);
  report("A3", minibatch_bound);
  report("A4", conditional_bound);

  std::optional<DeskRuns> desk;
  auto desk_runs = [&]() -> const DeskRuns& {
    if (!desk) {
      Clock clock;
      const auto cfg = desk_config();
      exp::RunOptions options;
      options.write_artifacts = false;
      desk.emplace();
      desk->results = exp::run_jobs(cfg, exp::table_jobs(cfg, "1", exp::Budget::Desk), options, exp::worker_count());
      desk->cpu_minutes = clock.cpu() / 60.0;
    }
    return *desk;
  };
  report("A5", [&] { return table1_trend(desk_runs()); });
  report("A6", [&] { return table2_analogue(desk_runs()); });
  report("A7", [&] {
    auto cfg = desk_config();
    cfg.synthetic.confounding = 1.0;
    std::vector<exp::JobSpec> jobs;
    for (auto& j : exp::table_jobs(cfg, "3", exp::Budget::Desk))
      if (j.n_experimental != 500) jobs.push_back(j);
    exp::RunOptions options;
    options.write_artifacts = false;
    options.kernel_metrics = false;
    return table3_trend(exp::run_jobs(cfg, jobs, options, exp::worker_count()));
  });
  report("A8", metric_oracles);
  report("A9", [&] { return determinism(cli, work); });

  std::cout << fmt::format("{} criteria failed", failed) << std::endl;
  return strict && failed ? 1 : 0;
}
