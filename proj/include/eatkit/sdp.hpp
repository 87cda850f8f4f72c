#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace eatkit {

// ---------------------------------------------------------------------------
// Standard-form SDP, as consumed by the interior-point solver:
//
//   primal:  minimize <C, X>   s.t. <A_i, X> = b_i,  X psd (block diagonal)
//   dual:    maximize b^T y    s.t. S = C - sum_i y_i A_i psd
//
// Matrices are symmetric and stored as upper-triangle triplets.
// ---------------------------------------------------------------------------

struct SymEntry {
  int block = 0;
  int row = 0;  // row <= col
  int col = 0;
  double value = 0.0;
};

using SparseSym = std::vector<SymEntry>;

struct StandardSdp {
  std::vector<int> block_sizes;
  SparseSym c;
  std::vector<SparseSym> a;
  Eigen::VectorXd b;

  int constraints() const noexcept { return static_cast<int>(a.size()); }
  /// Throws validation error on inconsistent dimensions.
  void check() const;
};

enum class SolveStatus { optimal, near_optimal, infeasible, numerical_failure };

std::string to_string(SolveStatus s);

struct SolverSettings {
  double feasibility_tol = 1e-8;
  double gap_tol = 1e-7;
  int max_iterations = 120;
  /// Accepted as near-optimal when the iteration stalls below these.
  double near_feasibility_tol = 1e-6;
  double near_gap_tol = 1e-5;
  /// Per-iteration progress on stderr.
  bool verbose = false;
};

using BlockMatrices = std::vector<Eigen::MatrixXd>;

struct StandardSolution {
  SolveStatus status = SolveStatus::numerical_failure;
  std::string message;
  Eigen::VectorXd y;
  BlockMatrices x;
  BlockMatrices s;
  double primal_objective = 0.0;  // <C, X>
  double dual_objective = 0.0;    // b^T y
  double primal_residual = 0.0;   // ||b - A(X)|| / (1 + ||b||)
  double dual_residual = 0.0;     // ||C - S - A^T y|| / (1 + ||C||)
  double relative_gap = 0.0;
  int iterations = 0;
  double solve_seconds = 0.0;
};

/// Primal-dual path-following method (HKM direction, Mehrotra
/// predictor-corrector) for small dense blocks. Deterministic.
StandardSolution solve_standard(const StandardSdp& sdp, const SolverSettings& settings = {});

/// <A, X> for a triplet matrix against dense blocks.
double inner(const SparseSym& a, const BlockMatrices& x);

// ---------------------------------------------------------------------------
// Moment-form problem: the interchange format produced by the relaxation
// builders.
//
//   optimize  c^T v + c0
//   s.t.      F_0 + sum_k v_k F_k psd     (block diagonal)
//             E v = e                     (named linear equalities)
//
// v are free real variables (moments).
// ---------------------------------------------------------------------------

enum class Sense { maximize, minimize };

struct LmiEntry {
  int variable = -1;  // -1: constant part F_0
  int block = 0;
  int row = 0;  // row <= col
  int col = 0;
  double value = 0.0;
};

struct LinearEquality {
  std::vector<std::pair<int, double>> terms;
  double rhs = 0.0;
  std::string tag;
};

struct SdpProblem {
  int variables = 0;
  std::vector<int> block_sizes;
  std::vector<LmiEntry> lmi;
  std::vector<LinearEquality> equalities;
  std::vector<std::pair<int, double>> objective;
  double objective_constant = 0.0;
  Sense sense = Sense::maximize;
  std::vector<std::string> variable_names;  // optional, for diagnostics
  nlohmann::json metadata = nlohmann::json::object();

  int add_variable(std::string name = {});
  /// Throws validation error on out-of-range indices or asymmetric entries.
  void check() const;
  /// Objective value at a variable assignment.
  double objective_value(const Eigen::VectorXd& v) const;
};

nlohmann::json to_json(const SdpProblem& p);
SdpProblem sdp_problem_from_json(const nlohmann::json& j);

/// Solution of a moment-form problem with its dual certificate.
///
/// For every right-hand side e', the optimum of the same problem with
/// E v = e' is bounded by  bound_constant + bound_slopes . e'  (an upper
/// bound for maximization, a lower bound for minimization), up to
/// `stationarity_residual`.
struct DualSolution {
  SolveStatus status = SolveStatus::numerical_failure;
  std::string message;
  std::vector<double> multipliers;  // one per equality, in problem order
  double bound_constant = 0.0;
  double primal_objective = 0.0;  // objective at the moment solution v
  double dual_objective = 0.0;    // bound_constant + multipliers . e
  double duality_gap = 0.0;       // |primal - dual|
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double stationarity_residual = 0.0;
  int iterations = 0;
  double solve_seconds = 0.0;
  Eigen::VectorXd moments;

  bool usable() const noexcept {
    return status == SolveStatus::optimal || status == SolveStatus::near_optimal;
  }
};

nlohmann::json to_json(const DualSolution& s);
DualSolution dual_solution_from_json(const nlohmann::json& j);

/// Backend interface; implementations own their workspaces.
class SdpBackend {
 public:
  virtual ~SdpBackend() = default;
  virtual DualSolution solve(const SdpProblem& problem, const SolverSettings& settings) const = 0;
  virtual std::string name() const = 0;
};

/// Eliminates the equalities, runs the interior-point method, and recovers
/// the equality multipliers from the stationarity conditions.
class InteriorPointBackend final : public SdpBackend {
 public:
  DualSolution solve(const SdpProblem& problem, const SolverSettings& settings) const override;
  std::string name() const override { return "interior-point"; }
};

/// Writes the problem JSON to a temporary file, runs
/// `command <problem.json> <solution.json>` and reads the solution JSON.
class ExternalBackend final : public SdpBackend {
 public:
  explicit ExternalBackend(std::string command) : command_(std::move(command)) {}
  DualSolution solve(const SdpProblem& problem, const SolverSettings& settings) const override;
  std::string name() const override { return "external:" + command_; }

 private:
  std::string command_;
};

/// Backend chosen by the EATKIT_SOLVER environment variable:
/// unset or "interior-point" -> in-process; "external:<command>" -> bridge.
std::shared_ptr<const SdpBackend> default_backend();

DualSolution solve(const SdpProblem& problem, const SolverSettings& settings = {});

}  // namespace eatkit
