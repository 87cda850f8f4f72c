#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eatkit/relaxation.hpp"
#include "eatkit/scenario.hpp"
#include "eatkit/sdp.hpp"

namespace eatkit {

struct TradeoffStats {
  double max_f = 0.0;
  double min_f_gamma = 0.0;
  double var_f_gamma = 0.0;
  double d_f = 0.0;
  double gamma = 1.0;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json to_json(const TradeoffStats& s);
TradeoffStats tradeoff_stats_from_json(const nlohmann::json& j);

/// Min-tradeoff function on single test-round outcomes c = (a,b,x,y), the
/// settings of a test round being drawn uniformly. For a behavior P the
/// outcome distribution is q(c) = P(a,b|x,y) / (AS*BS), so
///   f(delta_c) = constant + AS*BS*w(a,b,x,y)
/// with w the coefficient vector of the affine function.
/// After a spot-checking lift with probability gamma:
///   F(delta_c) = M + (f(delta_c) - M) / gamma,  F(delta_bot) = M,
/// where M = max_c f(delta_c).
struct OutcomeTradeoff {
  BehaviorDistribution values;  // f(delta_c), or F(delta_c) once lifted
  double bottom = 0.0;          // F(delta_bot); equals max_base
  double max_base = 0.0;
  double gamma = 1.0;

  /// Expected value on (1 - gamma) delta_bot + gamma q_P.
  double expectation(const BehaviorDistribution& p) const;
  /// Second moment on the same mixture.
  double second_moment(const BehaviorDistribution& p) const;
};

OutcomeTradeoff outcome_tradeoff(const MinTradeoffInfo& f);
/// Lift of an unlifted outcome function (pure algebra, gamma in (0,1]).
OutcomeTradeoff lift(const OutcomeTradeoff& base, double gamma);

/// Expectation and second moment of the lifted function as affine
/// expressions in P(a,b|x,y).
BellExpression mixture_mean_expression(const OutcomeTradeoff& lifted);
BellExpression mixture_second_moment_expression(const OutcomeTradeoff& lifted);

struct LiftedTradeoff {
  OutcomeTradeoff lifted;
  TradeoffStats stats;
};

/// Lifts f and computes its statistics. Max f is the largest single-outcome
/// value. Min f|Gamma minimizes the mixture mean over quantum behaviors at
/// f.level (dual bound). Var f|Gamma is the larger of the mixture variance at
/// that minimizer and the largest variance compatible with the certificates.
LiftedTradeoff spot_check_lift(const MinTradeoffInfo& f, double gamma, const SdpBackend& backend,
                               const SolverSettings& settings = {});

struct EatParameters {
  double eps_s = 1e-12;
  double p_omega = 0.99;
  double gamma = 0.01;
  double beta = 0.5;
  double events_per_second = 1e6;
  double chunk_time = 3600.0;
  double switch_delay = 0.0;
  double alphabet_size_ab = 4.0;
  std::optional<double> hab;
  bool subtract_consumption = false;

  /// Throws validation errors naming the offending field.
  void validate() const;
};

double epsilon_v(double beta, double alphabet_size_ab, double var_f_gamma);
/// Evaluated in the log domain; returns +inf past double range.
double epsilon_k(double beta, double alphabet_size_ab, double d_f);
double epsilon_omega(double beta, double p_omega, double eps_s);
/// Rounds per chunk: chunk_time / (1/rate + 2 gamma switch_delay), floored.
double effective_rounds(double chunk_time, double events_per_second, double gamma, double switch_delay);

struct EatBreakdown {
  double n = 0.0;
  double t = 0.0;
  double n_t = 0.0;
  double n_eps_v = 0.0;
  double n_eps_k = 0.0;
  double eps_omega = 0.0;
  double bound = 0.0;  // n_t - n_eps_v - n_eps_k - eps_omega
};

EatBreakdown eat_bound(double t, double n, const EatParameters& params, const TradeoffStats& stats);

struct Consumption {
  double pxpy_bits_per_test_round = 0.0;
  double selection_bits_per_round = 0.0;
};

Consumption consumption_per_round(const Scenario& scenario, double gamma);

/// Per-round rate entering the bound: the certificate value, reduced by
/// H(A|B) for key distribution (which then requires `hab`).
double certificate_rate(const MinTradeoffInfo& f, std::optional<double> hab);

/// max(0, bound) / chunk_time, minus the setting randomness when requested.
double net_gain(double eat_bound_bits, const EatParameters& params, const Consumption& consumption);

struct EatCell {
  EatParameters params;
  int log2_inv_beta = 0;
  EatBreakdown breakdown;
  double gross_rate = 0.0;
  double net_gain = 0.0;
  double d_f = 0.0;
  double var_f_gamma = 0.0;
};

struct SweepRequest {
  std::vector<double> chunk_times{3600.0};
  std::vector<double> events_per_second{1e6};
  std::vector<double> eps_s{1e-12};
  std::vector<double> p_omega{0.99};
  std::vector<double> gammas{0.01};
  double switch_delay = 0.0;
  bool subtract_consumption = false;
  /// Defaults to the min-tradeoff's H(A|B) at the spot setting.
  std::optional<double> hab;
  /// Defaults to the product of outcome counts at the spot setting.
  std::optional<double> alphabet_size_ab;
  int min_log2_inv_beta = 1;
  int max_log2_inv_beta = 40;

  void validate() const;
};

nlohmann::json to_json(const SweepRequest& r);
SweepRequest sweep_request_from_json(const nlohmann::json& j);

struct EatSweepResult {
  std::vector<EatCell> cells;  // every parameter combination and beta
  std::size_t best = 0;        // argmax of net_gain (first on ties)
  std::vector<TradeoffStats> stats;  // one per gamma, request order
  double asymptotic_rate = 0.0;
  double pxpy_bits = 0.0;

  const EatCell& best_cell() const { return cells.at(best); }
  /// Best beta for every combination of the non-beta parameters.
  std::vector<EatCell> best_per_combination() const;
};

/// Precomputed stats may be passed per gamma (same order as the request);
/// otherwise they are computed with `backend`.
EatSweepResult sweep(const MinTradeoffInfo& f, const SweepRequest& request, const SdpBackend& backend,
                     const SolverSettings& settings = {}, const std::vector<TradeoffStats>* stats = nullptr);

/// Non-finite numbers are written as "inf", "-inf" or "nan".
nlohmann::json to_json(const EatCell& c);
EatCell eat_cell_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EatSweepResult& r);
EatSweepResult eat_sweep_result_from_json(const nlohmann::json& j);
/// One row per cell, header first.
std::string to_csv(const EatSweepResult& r);
/// Parameter dictionary of a cell in the reference output's key names.
nlohmann::json parameter_dictionary(const EatCell& c, const EatSweepResult& r, const MinTradeoffInfo& f);

}  // namespace eatkit
