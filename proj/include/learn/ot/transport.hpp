// SPDX-License-Identifier: Apache-2.0
//
// Discrete optimal transport: cost construction, entropic solvers with a fixed
// or free source marginal, exact small-instance solvers and the bookkeeping
// for averaging mini-batch plans into a full coupling.
//
// Plans are rows = source (observational) units, columns = target
// (experimental) units.
#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

namespace learn::ot {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class OtError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- cost -----------------------------------------------------------------

/// Per-unit features entering the transport cost. Rows are units.
struct UnitFeatures {
  MatrixXd embedding;   // mean sequence embedding, n x d_r
  MatrixXd covariates;  // n x p
  VectorXd treatment;   // n
};

struct CostWeights {
  double embedding = 10.0;
  double covariates = 0.1;
  double treatment = 0.1;
};

/// C_ij = w_r |r_i - r_j| + w_x |x_i - x_j| + w_a |a_i - a_j| with Euclidean norms.
MatrixXd build_cost_matrix(const UnitFeatures& source, const UnitFeatures& target, const CostWeights& weights);

/// Euclidean distances between the rows of two matrices.
MatrixXd pairwise_distance(const MatrixXd& a, const MatrixXd& b);

// ---- learned source marginal ----------------------------------------------

struct MirrorDescentConfig {
  double entropy_strength = 100.0;  // lambda_e
  double step_size = 1e-3;          // eta
  int iterations = 100;             // n_ot
};

struct MirrorDescentResult {
  MatrixXd plan;
  VectorXd weights;  // row sums of the plan, sums to 1
  double objective = 0.0;
};

/// Called after every projection with (iteration, plan, objective).
using MirrorDescentObserver = std::function<void(int, const MatrixXd&, double)>;

/// Minimises <P, C> + lambda_e * sum_i w_i (log w_i - 1), w = P 1, over plans
/// whose columns each carry mass 1/n_e, by multiplicative mirror-descent steps
///   V = P .* exp(-eta (C + lambda_e log w 1^T))
/// followed by the column projection P_ij = V_ij / (n_e sum_i V_ij).
/// Starts from the uniform plan and runs exactly `iterations` steps. Updates
/// run on the plan directly and switch to log space when an entry would
/// underflow (and always when an observer is attached).
/// Stable for eta * lambda_e < 2.
MirrorDescentResult mirror_descent_weights(const MatrixXd& cost, const MirrorDescentConfig& config,
                                           const MirrorDescentObserver& observer = {});

/// lambda_e * sum_i w_i (log w_i - 1); the free-marginal regulariser.
double marginal_entropy_term(const VectorXd& weights, double entropy_strength);

// ---- fixed marginals ------------------------------------------------------

struct SinkhornResult {
  MatrixXd plan;
  double cost = 0.0;            // <plan, C>
  double marginal_error = 0.0;  // max abs deviation over both marginals
  int iterations = 0;
  bool converged = false;
  VectorXd log_row_scaling;  // f / eps
  VectorXd log_col_scaling;  // g / eps
};

/// Log-domain Sinkhorn for min <P, C> - eps H(P) with the given marginals.
/// Stops once both marginals are within `tolerance`; otherwise returns the
/// last iterate with converged == false.
SinkhornResult sinkhorn(const MatrixXd& cost, const VectorXd& row_marginal, const VectorXd& col_marginal,
                        double epsilon, int max_iterations, double tolerance = 1e-9);

// ---- exact solvers --------------------------------------------------------

struct ExactResult {
  double cost = 0.0;
  MatrixXd plan;
};

/// Exact Kantorovich optimum. Uniform square instances up to 6 x 6 are solved
/// by enumerating permutations; other instances with rows * cols <= 2500 by a
/// dense two-phase simplex. Larger instances throw.
ExactResult exact_ot(const MatrixXd& cost, const VectorXd& row_marginal, const VectorXd& col_marginal);

struct LinearProgramResult {
  double objective = 0.0;
  VectorXd solution;
};

/// min c^T x subject to A x = b, x >= 0 (dense tableau, Bland's rule).
/// Redundant equality rows are tolerated. Throws OtError when infeasible or
/// unbounded.
LinearProgramResult solve_linear_program(const MatrixXd& A, const VectorXd& b, const VectorXd& c);

// ---- mini-batch plans -----------------------------------------------------

/// Places each b x n_e batch plan at the rows listed in its batch and
/// averages: (1/k) sum_i Gamma_i. Batches must partition 0..n_source-1 into
/// equal sizes, and every plan must have uniform row sums 1/b and identical
/// column sums.
MatrixXd pad_and_average(std::span<const MatrixXd> plans, std::span<const std::vector<std::size_t>> batches,
                         std::size_t n_source);

/// Discrete (x, a) cell of each unit plus its S-part features.
struct LeveledSample {
  MatrixXd outcomes;        // n x d_s
  std::vector<int> levels;  // n, cell label
  VectorXd mass;            // n, sums to 1
};

/// Conditional transport value: the cheapest coupling of the two samples when
/// only same-cell pairs are charged, at S-distance cost C_s:
///   min_{P in Pi(mass_o, mass_e)} sum_{level_i == level_j} P_ij C_s(i, j).
/// This is a lower bound of the joint transport cost under any separable
/// cost C_s + C_x + C_a. Every level must occur in both samples.
double conditional_ot_sum(const LeveledSample& source, const LeveledSample& target,
                          const std::function<MatrixXd(const MatrixXd&, const MatrixXd&)>& outcome_cost);

// ---- export ---------------------------------------------------------------

/// CSV with header "row,col,mass", one line per entry.
void write_plan_csv(std::ostream& out, const MatrixXd& plan);
void write_plan_csv(const std::filesystem::path& path, const MatrixXd& plan);

}  // namespace learn::ot
