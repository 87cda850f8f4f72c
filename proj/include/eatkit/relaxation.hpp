#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eatkit/bell_expression.hpp"
#include "eatkit/npa.hpp"
#include "eatkit/scenario.hpp"
#include "eatkit/sdp.hpp"

namespace eatkit {

struct Certificate {
  BellExpression expression;
  double target = 0.0;
};

using Setting = std::pair<int, int>;  // (x, y)

/// Whose spot-setting outcome Eve guesses: Alice's alone (key distribution)
/// or the pair (randomness generation).
enum class GuessTarget { alice, joint };

std::string to_string(GuessTarget g);

/// Tag prefix of certificate equalities; tags are "cert:<k>".
inline constexpr const char* kCertificateTag = "cert:";
inline constexpr const char* kNormalizationTag = "norm";

/// Normalized NPA relaxation maximizing (or minimizing) an expression.
SdpProblem build_npa_optimize(const Scenario& scenario, int level, const BellExpression& objective, Sense sense,
                              const std::vector<Certificate>& certificates = {});

/// Guessing probability as a sum over Eve's guesses of unnormalized moment
/// matrices whose sum reproduces the certificate values.
SdpProblem build_npa_minentropy(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                Setting spot, GuessTarget guess = GuessTarget::alice);

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  int m() const noexcept { return static_cast<int>(nodes.size()); }
};

/// Gauss-Radau rule for weight 1 on [0,1] with the node 1 fixed.
QuadratureRule gauss_radau(int m);

/// Von Neumann entropy bound, one SDP per quadrature node except the last:
///   H >= sum_i c_i (1 + inf sum_k <P_k(Z_k + Z_k* + (1-t_i) Z_k* Z_k) + t_i Z_k Z_k*>)
/// with c_i = w_i / (t_i ln 2), P_k the projectors of the guessed outcomes.
struct BffRelaxation {
  QuadratureRule rule;
  std::vector<double> c;           // per solved node
  std::vector<SdpProblem> nodes;   // minimization problems
};

SdpProblem build_bff_node(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                          Setting spot, double t, GuessTarget guess = GuessTarget::alice);
BffRelaxation build_bff_vonneumann(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                   Setting spot, int m_radau, GuessTarget guess = GuessTarget::alice);

enum class EntropyType { min_entropy, von_neumann };
enum class UseCase { randomness_generation, key_distribution };

std::string to_string(EntropyType e);
std::string to_string(UseCase u);
EntropyType entropy_type_from_string(const std::string& s);
UseCase use_case_from_string(const std::string& s);

/// Affine lower bound f(p) = constant + sum_k lambda_k * expr_k(p) on the
/// per-round entropy, plus the data needed to evaluate EAT bounds.
struct MinTradeoffInfo {
  Scenario scenario;
  std::vector<std::string> expressions;  // certificate expressions (text form)
  std::vector<double> targets;
  std::vector<double> coefficients;      // lambda_k
  double constant = 0.0;
  double certificate_value = 0.0;        // f at the targets
  double asymptotic_keyrate = 0.0;       // certificate_value, minus H(A|B) for key distribution
  Setting spot{0, 0};
  EntropyType entropy_type = EntropyType::min_entropy;
  UseCase use_case = UseCase::randomness_generation;
  GuessTarget guess = GuessTarget::alice;
  std::map<Setting, double> hab;
  int level = 2;
  int m_radau = 0;
  std::string setup_nickname;
  nlohmann::json metadata = nlohmann::json::object();

  /// Parsed certificate expressions (against `scenario`).
  std::vector<BellExpression> parsed_expressions() const;
  double evaluate(const BehaviorDistribution& p) const;
  double evaluate_values(const std::vector<double>& expression_values) const;
};

nlohmann::json to_json(const MinTradeoffInfo& m);
MinTradeoffInfo min_tradeoff_from_json(const nlohmann::json& j);

struct ExtractionOptions {
  double gap_tolerance = 1e-7;  // absolute
};

/// Min-entropy: the dual bound p_g <= nu0 + nu . e is made affine in the
/// entropy through the tangent of -log2 at the targets.
MinTradeoffInfo extract_min_tradeoff(const SdpProblem& problem, const DualSolution& dual,
                                     const std::vector<Certificate>& certificates, MinTradeoffInfo base,
                                     const ExtractionOptions& options = {});

/// Von Neumann entropy: node bounds combined with the quadrature weights.
MinTradeoffInfo extract_min_tradeoff(const BffRelaxation& relaxation, const std::vector<DualSolution>& duals,
                                     const std::vector<Certificate>& certificates, MinTradeoffInfo base,
                                     const ExtractionOptions& options = {});

/// Certificate-k multipliers summed over equalities tagged "cert:k".
std::vector<double> certificate_multipliers(const SdpProblem& problem, const DualSolution& dual, std::size_t count);

struct MinTradeoffRequest {
  Scenario scenario;
  std::vector<std::string> expressions;
  std::vector<double> values;
  Setting spot{0, 0};
  int level = 2;
  int m_radau = 8;
  EntropyType entropy_type = EntropyType::min_entropy;
  UseCase use_case = UseCase::randomness_generation;
  /// Guess target; defaults to joint for randomness generation and Alice's
  /// outcome for key distribution.
  std::optional<GuessTarget> guess;
  std::map<Setting, double> hab;
  std::string setup_nickname;
  nlohmann::json additional_data = nlohmann::json::object();
  SolverSettings solver = tight_settings();

  static SolverSettings tight_settings() {
    SolverSettings s;
    s.feasibility_tol = 1e-9;
    s.gap_tol = 1e-9;
    s.max_iterations = 200;
    return s;
  }
};

nlohmann::json to_json(const MinTradeoffRequest& r);
MinTradeoffRequest min_tradeoff_request_from_json(const nlohmann::json& j);

struct CertifiedSolve {
  DualSolution dual;
  SdpProblem problem;  // the problem actually solved (elastic variant on fallback)
  bool elastic = false;
  double slack = 0.0;  // total certificate slack at the optimum
};

/// Solves a relaxation; when the plain solve fails or reports infeasibility,
/// retries with certificate slacks penalized by `penalty`. That bounds every
/// certificate multiplier by the penalty, and the dual still bounds the
/// original problem. Slack above `slack_tolerance` means the certificate
/// values are infeasible and raises a solver error.
CertifiedSolve solve_certified(const SdpProblem& problem, const SdpBackend& backend, const SolverSettings& settings,
                               double penalty = 1e4, double slack_tolerance = 1e-6);

/// Upper bound on the guessing probability and the min-entropy it implies.
/// Every elastic dual bounds the original problem, so the smallest bound over
/// a penalty schedule is kept; this also covers certificate values on the
/// boundary of the quantum set, where the plain dual does not attain.
struct GuessingBound {
  double guessing_probability = 1.0;
  double min_entropy = 0.0;
  double gap = 0.0;
  bool elastic = false;
  double penalty = 0.0;
};

GuessingBound min_entropy_bound(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                Setting spot, GuessTarget guess, const SdpBackend& backend,
                                const SolverSettings& settings,
                                const std::vector<double>& penalties = {1e4, 3e4, 1e5});

/// Von Neumann entropy bound sum_i c_i (1 + node_i), each node at its
/// tightest valid dual over the same penalty schedule. `gap` is the
/// weighted sum of node gaps.
struct VonNeumannBound {
  double entropy = 0.0;
  double gap = 0.0;
  bool elastic = false;
};

VonNeumannBound von_neumann_bound(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                  Setting spot, int m_radau, GuessTarget guess, const SdpBackend& backend,
                                  const SolverSettings& settings,
                                  const std::vector<double>& penalties = {1e4, 3e4, 1e5});

/// Optimum of an expression over the normalized relaxation, with further
/// expressions evaluated at the optimal moments. `bound` is the dual value
/// (valid in the direction of `sense`); `value` is the primal one.
struct ProbedOptimum {
  double bound = 0.0;
  double value = 0.0;
  std::vector<double> probes;
  double gap = 0.0;
  bool elastic = false;
};

ProbedOptimum optimize_with_probes(const Scenario& scenario, int level, const BellExpression& objective, Sense sense,
                                   const std::vector<Certificate>& certificates,
                                   const std::vector<BellExpression>& probes, const SdpBackend& backend,
                                   const SolverSettings& settings);

/// Scenario with binary settings appended so that the spot setting exists.
Scenario scenario_for_spot(const Scenario& s, Setting spot);

/// Full pipeline: parse certificates, build the relaxation, solve, extract.
MinTradeoffInfo calculate_mintradeoff(const MinTradeoffRequest& request);

}  // namespace eatkit
