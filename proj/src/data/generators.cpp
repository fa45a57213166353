// SPDX-License-Identifier: Apache-2.0
#include "learn/data/generators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace learn::data {
namespace {

using Rng = std::mt19937_64;

double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::span<const double> row_of(const Tensor& t, std::size_t r) { return t.data().subspan(r * t.cols(), t.cols()); }

void check_horizon(std::size_t horizon, std::size_t long_term_step) {
  if (horizon == 0 || long_term_step < horizon) {
    throw std::invalid_argument("generator: need 1 <= horizon <= long-term step");
  }
}

// Shared tail of both generators: fill the noise-free curves and reference outcomes.
template <class Outcomes>
void fill_oracle(OracleData& o, std::size_t n, std::size_t horizon, std::size_t long_term_step,
                 std::size_t grid_points, double reference, const Outcomes& outcomes) {
  o.grid = treatment_grid(grid_points);
  o.reference_treatment = reference;
  o.long_term_curves = Tensor::matrix(n, o.grid.size());
  o.reference_short_term = Tensor::matrix(n, horizon);
  o.reference_long_term.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < o.grid.size(); ++k) o.long_term_curves.at(i, k) = outcomes(i, o.grid[k]).back();
    const auto ref = outcomes(i, reference);
    for (std::size_t t = 0; t < horizon; ++t) o.reference_short_term.at(i, t) = ref[t];
    o.reference_long_term[i] = ref[long_term_step - 1];
  }
}

}  // namespace

std::vector<double> treatment_grid(std::size_t points, double lo, double hi) {
  if (points < 2 || !(lo < hi)) throw std::invalid_argument("treatment_grid: need >= 2 points on a proper interval");
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k) g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
  return g;
}

// ---- synthetic --------------------------------------------------------------

double synthetic_treatment_logit(const SyntheticCoefficients& w, std::span<const double> x,
                                 std::span<const double> u, double confounding, Group group) {
  const std::size_t third = x.size() / 3;
  double logit = 0.0;
  for (std::size_t j = 0; j < third; ++j) logit += w.treatment[j] * std::sin(x[j]);
  for (std::size_t j = third; j < 2 * third; ++j) logit += w.treatment[j] * x[j] * x[j];
  if (group == Group::Observational && !u.empty()) {
    logit += confounding * std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
  }
  return logit;
}

std::vector<double> synthetic_outcomes(const SyntheticCoefficients& w, std::span<const double> x,
                                       std::span<const double> u, double a, double confounding, std::size_t steps) {
  const std::size_t third = x.size() / 3;
  double squares = 0.0, linear = 0.0, hidden = 0.0;
  for (std::size_t j = third; j < 2 * third; ++j) squares += w.outcome[j] * x[j] * x[j];
  for (std::size_t j = 2 * third; j < x.size(); ++j) linear += w.outcome[j] * x[j];
  for (std::size_t j = 0; j < u.size(); ++j) hidden += w.outcome[j] * std::cos(u[j]);
  std::vector<double> y(steps);
  double running = 0.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double prev_mean = t == 1 ? 0.0 : running / static_cast<double>(t - 1);
    const double td = static_cast<double>(t);
    y[t - 1] = squares + (td + 5.0) * a * linear + confounding * td * a / 5.0 * hidden + 0.25 * prev_mean;
    running += y[t - 1];
  }
  return y;
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  const std::size_t p = cfg.covariate_dim, q = cfg.unobserved_dim;
  if (p == 0 || p % 3 != 0) throw std::invalid_argument("generate_synthetic: covariate dimension must be a positive multiple of 3");
  if (cfg.confounding < 0.0) throw std::invalid_argument("generate_synthetic: confounding strength must be >= 0");
  if (cfg.n_observational == 0 || cfg.n_experimental == 0) throw std::invalid_argument("generate_synthetic: empty group");
  check_horizon(cfg.horizon, cfg.long_term_step);

  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> wt(0.0, 0.5), wy(0.5, 1.0);
  std::normal_distribution<double> std_normal(0.0, 1.0);

  SyntheticData out;
  SyntheticCoefficients& w = out.coefficients;
  w.treatment.resize(p);
  w.outcome.resize(std::max(p, q));
  for (auto& v : w.treatment) v = wt(rng);
  for (auto& v : w.outcome) v = wy(rng);

  auto make_group = [&](Group group, std::size_t n, double x_mean) {
    PublicView view;
    view.group = group;
    view.treatment.resize(n);
    view.covariates = Tensor::matrix(n, p);
    view.short_term = Tensor::matrix(n, cfg.horizon);
    OracleData oracle;
    oracle.unobserved = Tensor::matrix(n, q);
    std::vector<double> long_term(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) view.covariates.at(i, j) = x_mean + std_normal(rng);
      for (std::size_t j = 0; j < q; ++j) oracle.unobserved.at(i, j) = 0.25 + std_normal(rng);
      const auto x = row_of(view.covariates, i);
      const auto u = row_of(oracle.unobserved, i);
      const double a = sigmoid(synthetic_treatment_logit(w, x, u, cfg.confounding, group));
      view.treatment[i] = a;
      // Factual path: noise enters each step and feeds the running mean.
      const std::size_t third = p / 3;
      double squares = 0.0, linear = 0.0, hidden = 0.0, running = 0.0;
      for (std::size_t j = third; j < 2 * third; ++j) squares += w.outcome[j] * x[j] * x[j];
      for (std::size_t j = 2 * third; j < p; ++j) linear += w.outcome[j] * x[j];
      for (std::size_t j = 0; j < q; ++j) hidden += w.outcome[j] * std::cos(u[j]);
      for (std::size_t t = 1; t <= cfg.long_term_step; ++t) {
        const double td = static_cast<double>(t);
        const double prev_mean = t == 1 ? 0.0 : running / (td - 1.0);
        const double y = squares + (td + 5.0) * a * linear + cfg.confounding * td * a / 5.0 * hidden +
                         0.25 * prev_mean + cfg.noise_std * std_normal(rng);
        running += y;
        if (t <= cfg.horizon) view.short_term.at(i, t - 1) = y;
        if (t == cfg.long_term_step) long_term[i] = y;
      }
    }
    if (group == Group::Observational) {
      view.long_term = std::move(long_term);
    } else {
      oracle.hidden_long_term = std::move(long_term);
    }
    fill_oracle(oracle, n, cfg.horizon, cfg.long_term_step, cfg.grid_points, cfg.reference_treatment,
                [&](std::size_t i, double a) {
                  return synthetic_outcomes(w, row_of(view.covariates, i), row_of(oracle.unobserved, i), a,
                                            cfg.confounding, cfg.long_term_step);
                });
    return Dataset(std::move(view), std::move(oracle));
  };

  out.observational = make_group(Group::Observational, cfg.n_observational, 0.1);
  out.experimental = make_group(Group::Experimental, cfg.n_experimental, 0.5);
  return out;
}

// ---- semi-synthetic -----------------------------------------------------------

namespace {

constexpr double kMinMagnitude = 1e-6;
constexpr double kMaxExponent = 10.0;

double away_from_zero(double v) {
  if (std::abs(v) >= kMinMagnitude) return v;
  return v < 0 ? -kMinMagnitude : kMinMagnitude;
}

std::vector<double> unit_direction(std::size_t n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  double norm = 0.0;
  do {
    for (auto& x : v) x = nd(rng);
    norm = std::sqrt(dot(v, v));
  } while (norm == 0.0);
  for (auto& x : v) x /= norm;
  return v;
}

double sample_beta(double alpha, double beta, Rng& rng) {
  const double x = std::gamma_distribution<double>(alpha, 1.0)(rng);
  const double y = std::gamma_distribution<double>(beta, 1.0)(rng);
  const double a = x / (x + y);
  // Keep strictly inside (0, 1) when one draw underflows.
  return std::clamp(a, 1e-12, 1.0 - 1e-12);
}

}  // namespace

double semisynthetic_beta_shape(const SemiSyntheticCoefficients& v, std::span<const double> x,
                                std::span<const double> u, Group group) {
  double d = dot(v.observed[2], x) / (2.0 * away_from_zero(dot(v.observed[1], x)));
  if (group == Group::Observational) d += dot(v.unobserved[2], u) / (2.0 * away_from_zero(dot(v.unobserved[1], u)));
  d = std::max(std::abs(d), kMinMagnitude);
  constexpr double gamma = 2.0;
  return (gamma - 1.0) / d + 2.0 - gamma;
}

double semisynthetic_mean(const SemiSyntheticCoefficients& v, std::span<const double> x, std::span<const double> u,
                          double a, double previous_mean) {
  const double exponent = std::min(kMaxExponent, dot(v.observed[1], x) / away_from_zero(dot(v.observed[2], x)) +
                                                     dot(v.unobserved[1], u) / away_from_zero(dot(v.unobserved[2], u)) -
                                                     0.3);
  const double shape = 4.0 * (a - 0.5) * (a - 0.5) * std::sin(std::numbers::pi / 2.0 * a) * 2.0 *
                       std::max(-2.0, std::exp(exponent));
  return shape + 20.0 * a * (dot(v.observed[0], x) + dot(v.unobserved[0], u)) + 0.5 * previous_mean;
}

SemiSyntheticData generate_semisynthetic(const Tensor& covariates, const SemiSyntheticConfig& cfg) {
  if (covariates.rank() != 2 || covariates.rows() < 100) {
    throw std::invalid_argument("generate_semisynthetic: need a covariate matrix with at least 100 rows");
  }
  const std::size_t n = covariates.rows(), d = covariates.cols();
  const std::size_t d_obs = d * 8 / 10;
  if (d_obs == 0 || d_obs == d) {
    throw std::invalid_argument("generate_semisynthetic: need at least 2 covariate columns for the 8:2 split");
  }
  check_horizon(cfg.horizon, cfg.long_term_step);

  Rng rng(cfg.seed);
  std::vector<std::size_t> rows(n), cols(d);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(rows[i], rows[rng() % (i + 1)]);
  for (std::size_t i = d - 1; i > 0; --i) std::swap(cols[i], cols[rng() % (i + 1)]);

  SemiSyntheticData out;
  out.observed_columns.assign(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(d_obs));
  out.unobserved_columns.assign(cols.begin() + static_cast<std::ptrdiff_t>(d_obs), cols.end());
  auto& v = out.coefficients;
  for (int i = 0; i < 3; ++i) v.observed[i] = unit_direction(d_obs, rng);
  for (int i = 0; i < 3; ++i) v.unobserved[i] = unit_direction(d - d_obs, rng);

  auto outcomes = [&](std::span<const double> x, std::span<const double> u, double a, double noise_std) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> y(cfg.long_term_step);
    double running = 0.0;
    for (std::size_t t = 1; t <= cfg.long_term_step; ++t) {
      const double prev_mean = t == 1 ? 0.0 : running / static_cast<double>(t - 1);
      y[t - 1] = semisynthetic_mean(v, x, u, a, prev_mean) + (noise_std > 0 ? noise_std * noise(rng) : 0.0);
      running += y[t - 1];
    }
    return y;
  };

  const std::size_t n_obs = n * 9 / 10;
  auto make_group = [&](Group group, std::size_t begin, std::size_t end) {
    const std::size_t m = end - begin;
    PublicView view;
    view.group = group;
    view.treatment.resize(m);
    view.covariates = Tensor::matrix(m, d_obs);
    view.short_term = Tensor::matrix(m, cfg.horizon);
    OracleData oracle;
    oracle.unobserved = Tensor::matrix(m, d - d_obs);
    std::vector<double> long_term(m);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t src = rows[begin + i];
      for (std::size_t j = 0; j < d_obs; ++j) view.covariates.at(i, j) = covariates.at(src, out.observed_columns[j]);
      for (std::size_t j = 0; j < d - d_obs; ++j)
        oracle.unobserved.at(i, j) = covariates.at(src, out.unobserved_columns[j]);
      const auto x = row_of(view.covariates, i);
      const auto u = row_of(oracle.unobserved, i);
      const double a = sample_beta(2.0, semisynthetic_beta_shape(v, x, u, group), rng);
      view.treatment[i] = a;
      const auto y = outcomes(x, u, a, cfg.noise_std);
      for (std::size_t t = 0; t < cfg.horizon; ++t) view.short_term.at(i, t) = y[t];
      long_term[i] = y.back();
    }
    if (group == Group::Observational) {
      view.long_term = std::move(long_term);
    } else {
      oracle.hidden_long_term = std::move(long_term);
    }
    fill_oracle(oracle, m, cfg.horizon, cfg.long_term_step, cfg.grid_points, cfg.reference_treatment,
                [&](std::size_t i, double a) {
                  return outcomes(row_of(view.covariates, i), row_of(oracle.unobserved, i), a, 0.0);
                });
    return Dataset(std::move(view), std::move(oracle));
  };
  out.observational = make_group(Group::Observational, 0, n_obs);
  out.experimental = make_group(Group::Experimental, n_obs, n);
  return out;
}

Tensor load_covariate_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("covariate file not found: " + path.string());
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    for (char& c : line)
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    std::istringstream fields(line);
    std::vector<double> row;
    std::string tok;
    bool numeric = true;
    while (fields >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows == 0 && cols == 0) continue;  // header
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
    }
    if (cols == 0) cols = row.size();
    if (row.size() != cols) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                               " columns, got " + std::to_string(row.size()));
    }
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("covariate file is empty: " + path.string());
  return Tensor({rows, cols}, std::move(values));
}

}  // namespace learn::data
