#include "eatkit/eat.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "eatkit/bell_expression.hpp"
#include "eatkit/error.hpp"

namespace eatkit {

using nlohmann::json;

namespace {

void require_beta(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw validation_error("eat.beta", "beta must lie in (0,1)");
}

int pairs(const Scenario& s) { return s.alice_settings() * s.bob_settings(); }

template <typename F>
void for_each_outcome(const Scenario& s, F&& f) {
  for (int x = 0; x < s.alice_settings(); ++x)
    for (int y = 0; y < s.bob_settings(); ++y)
      for (int a = 0; a < s.alice_outcomes(x); ++a)
        for (int b = 0; b < s.bob_outcomes(y); ++b) f(a, b, x, y);
}

// Affine expression (1 - gamma) * c0 + gamma * sum_c q(c) * g(c).
BellExpression mixture_expression(const OutcomeTradeoff& t, double c0, auto&& g) {
  const auto& s = t.values.scenario();
  const double share = t.gamma / pairs(s);
  std::vector<BellTerm> terms;
  for_each_outcome(s, [&](int a, int b, int x, int y) {
    terms.push_back({share * g(t.values(a, b, x, y)), BellAtom::make_joint(a, b, x, y)});
  });
  terms.push_back({(1.0 - t.gamma) * c0, BellAtom::make_constant()});
  return BellExpression(std::move(terms), s);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// JSON has no infinities; they travel as strings.
json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double number_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw validation_error("sweep.number", "not a number: '" + s + "'");
}

template <typename T>
void product_check(const std::vector<T>& v, const char* name) {
  if (v.empty()) throw validation_error("sweep.empty", std::string("parameter list \"") + name + "\" is empty");
}

}  // namespace

json to_json(const TradeoffStats& s) {
  return {{"max_f", number(s.max_f)}, {"min_f_gamma", number(s.min_f_gamma)}, {"var_f_gamma", number(s.var_f_gamma)},
          {"d_f", number(s.d_f)},     {"gamma", s.gamma},                     {"metadata", s.metadata}};
}

TradeoffStats tradeoff_stats_from_json(const json& j) {
  TradeoffStats s;
  s.max_f = number_from(j.at("max_f"));
  s.min_f_gamma = number_from(j.at("min_f_gamma"));
  s.var_f_gamma = number_from(j.at("var_f_gamma"));
  s.d_f = number_from(j.at("d_f"));
  s.gamma = j.at("gamma").get<double>();
  s.metadata = j.value("metadata", json::object());
  return s;
}

double OutcomeTradeoff::expectation(const BehaviorDistribution& p) const {
  const auto& s = values.scenario();
  double test = 0.0;
  for_each_outcome(s, [&](int a, int b, int x, int y) { test += p(a, b, x, y) * values(a, b, x, y); });
  return (1.0 - gamma) * bottom + gamma * test / pairs(s);
}

double OutcomeTradeoff::second_moment(const BehaviorDistribution& p) const {
  const auto& s = values.scenario();
  double test = 0.0;
  for_each_outcome(s, [&](int a, int b, int x, int y) {
    const double v = values(a, b, x, y);
    test += p(a, b, x, y) * v * v;
  });
  return (1.0 - gamma) * bottom * bottom + gamma * test / pairs(s);
}

OutcomeTradeoff outcome_tradeoff(const MinTradeoffInfo& f) {
  const auto exprs = f.parsed_expressions();
  std::vector<BellTerm> terms{{f.constant, BellAtom::make_constant()}};
  for (std::size_t k = 0; k < exprs.size(); ++k)
    for (const auto& t : exprs[k].terms()) terms.push_back({f.coefficients.at(k) * t.coefficient, t.atom});
  const auto cv = expression_to_coefficient_vector(BellExpression(std::move(terms), f.scenario));

  OutcomeTradeoff out;
  out.values = BehaviorDistribution(f.scenario);
  const double scale = pairs(f.scenario);
  double m = -std::numeric_limits<double>::infinity();
  for_each_outcome(f.scenario, [&](int a, int b, int x, int y) {
    const double v = cv.constant + scale * cv.weights(a, b, x, y);
    out.values(a, b, x, y) = v;
    m = std::max(m, v);
  });
  out.max_base = m;
  out.bottom = m;
  out.gamma = 1.0;
  return out;
}

OutcomeTradeoff lift(const OutcomeTradeoff& base, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw validation_error("eat.gamma", "test round probability must lie in (0,1]");
  if (base.gamma != 1.0) throw validation_error("eat.lift", "function is already lifted");
  OutcomeTradeoff out = base;
  out.gamma = gamma;
  out.bottom = base.max_base;
  for (double& v : out.values.values()) v = base.max_base + (v - base.max_base) / gamma;
  return out;
}

BellExpression mixture_mean_expression(const OutcomeTradeoff& lifted) {
  return mixture_expression(lifted, lifted.bottom, [](double v) { return v; });
}

BellExpression mixture_second_moment_expression(const OutcomeTradeoff& lifted) {
  return mixture_expression(lifted, lifted.bottom * lifted.bottom, [](double v) { return v * v; });
}

LiftedTradeoff spot_check_lift(const MinTradeoffInfo& f, double gamma, const SdpBackend& backend,
                               const SolverSettings& settings) {
  LiftedTradeoff out;
  out.lifted = lift(outcome_tradeoff(f), gamma);
  const auto& lifted = out.lifted;
  auto& st = out.stats;
  st.gamma = gamma;
  st.max_f = lifted.bottom;
  double min_outcome = lifted.bottom;
  double max_outcome = lifted.bottom;
  for (double v : lifted.values.values()) {
    min_outcome = std::min(min_outcome, v);
    max_outcome = std::max(max_outcome, v);
  }
  st.max_f = max_outcome;
  st.min_f_gamma = min_outcome;
  st.d_f = st.max_f - st.min_f_gamma;
  st.metadata["min_over"] = "single test outcomes";
  st.metadata["max_over"] = "single outcomes";

  const double spread = max_outcome - min_outcome;
  if (spread <= 1e-12 * (1.0 + std::abs(max_outcome))) {
    st.d_f = 0.0;
    st.var_f_gamma = 0.0;
    st.metadata["variance_method"] = "constant function";
    return out;
  }

  const auto mean = mixture_mean_expression(lifted);
  const auto second = mixture_second_moment_expression(lifted);
  const auto at_min = optimize_with_probes(f.scenario, f.level, mean, Sense::minimize, {}, {second}, backend, settings);
  const double var_min = at_min.probes.at(0) - at_min.value * at_min.value;
  st.metadata["min_f_quantum_mixture"] = at_min.bound;
  st.metadata["var_at_gamma_minimizer"] = var_min;

  std::vector<Certificate> certs;
  const auto exprs = f.parsed_expressions();
  for (std::size_t k = 0; k < exprs.size(); ++k) certs.push_back({exprs[k], f.targets.at(k)});
  double var_cert = 0.0;
  try {
    const auto at_cert =
        optimize_with_probes(f.scenario, f.level, second, Sense::maximize, certs, {mean}, backend, settings);
    var_cert = at_cert.bound - at_cert.probes.at(0) * at_cert.probes.at(0);
    st.metadata["var_at_certificate"] = var_cert;
    st.metadata["variance_method"] = "max(gamma minimizer, certificate set)";
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::solver) throw;
    // range bound: every lifted value lies in [min_f, max_f]
    var_cert = spread * spread / 4.0;
    st.metadata["variance_method"] = std::string("range bound (certificate solve failed: ") + e.code() + ")";
  }
  st.var_f_gamma = std::max({0.0, var_min, var_cert});
  return out;
}

void EatParameters::validate() const {
  if (!(eps_s > 0.0 && eps_s < 1.0)) throw validation_error("eat.eps_s", "eps_s must lie in (0,1)");
  if (!(p_omega > 0.0 && p_omega <= 1.0)) throw validation_error("eat.p_omega", "p_omega must lie in (0,1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw validation_error("eat.gamma", "test round probability must lie in (0,1]");
  require_beta(beta);
  if (!(events_per_second > 0.0)) throw validation_error("eat.events_per_second", "events per second must be positive");
  if (!(chunk_time > 0.0)) throw validation_error("eat.chunk_time", "chunk time must be positive");
  if (!(switch_delay >= 0.0)) throw validation_error("eat.switch_delay", "switch delay must be non-negative");
  if (!(alphabet_size_ab >= 2.0)) throw validation_error("eat.alphabet", "alphabet size must be at least 2");
}

double epsilon_v(double beta, double alphabet_size_ab, double var_f_gamma) {
  require_beta(beta);
  const double inner = std::log2(2.0 * alphabet_size_ab * alphabet_size_ab + 1.0) + std::sqrt(var_f_gamma + 2.0);
  return beta * std::log(2.0) / 2.0 * inner * inner;
}

double epsilon_k(double beta, double alphabet_size_ab, double d_f) {
  require_beta(beta);
  const double ln2 = std::log(2.0);
  const double x = std::log2(alphabet_size_ab) + d_f;
  const double ln_theta1 = 2.0 * std::log(beta) - std::log(6.0) - 3.0 * std::log1p(-beta) - std::log(ln2);
  const double ln_theta2 = beta * x * ln2;
  // ln(2^x + e^2) without forming 2^x
  const double u = x * ln2;
  const double l = std::max(u, 2.0) + std::log1p(std::exp(-std::abs(u - 2.0)));
  const double ln_theta3 = 3.0 * std::log(l);
  return std::exp(ln_theta1 + ln_theta2 + ln_theta3);
}

double epsilon_omega(double beta, double p_omega, double eps_s) {
  require_beta(beta);
  const double prod = p_omega * eps_s;
  if (!(prod > 0.0 && prod < 1.0)) {
    throw validation_error("eat.p_omega_eps_s", "p_omega * eps_s must lie in (0,1)");
  }
  return (1.0 - 2.0 * std::log2(prod)) / beta;
}

double effective_rounds(double chunk_time, double events_per_second, double gamma, double switch_delay) {
  if (!(chunk_time > 0.0) || !(events_per_second > 0.0)) {
    throw validation_error("eat.rounds", "chunk time and event rate must be positive");
  }
  return std::floor(chunk_time / (1.0 / events_per_second + 2.0 * gamma * switch_delay));
}

EatBreakdown eat_bound(double t, double n, const EatParameters& params, const TradeoffStats& stats) {
  EatBreakdown b;
  b.n = n;
  b.t = t;
  b.n_t = n * t;
  b.n_eps_v = n * epsilon_v(params.beta, params.alphabet_size_ab, stats.var_f_gamma);
  b.n_eps_k = n * epsilon_k(params.beta, params.alphabet_size_ab, stats.d_f);
  b.eps_omega = epsilon_omega(params.beta, params.p_omega, params.eps_s);
  b.bound = b.n_t - b.n_eps_v - b.n_eps_k - b.eps_omega;
  return b;
}

Consumption consumption_per_round(const Scenario& scenario, double gamma) {
  return {std::log2(static_cast<double>(pairs(scenario))), binary_entropy(gamma)};
}

double certificate_rate(const MinTradeoffInfo& f, std::optional<double> hab) {
  if (f.use_case == UseCase::randomness_generation) return f.certificate_value;
  if (!hab) {
    const auto it = f.hab.find(f.spot);
    if (it == f.hab.end()) throw validation_error("eat.hab", "key distribution needs H(A|B) at the spot setting");
    hab = it->second;
  }
  return f.certificate_value - *hab;
}

double net_gain(double eat_bound_bits, const EatParameters& params, const Consumption& consumption) {
  double rate = std::max(0.0, eat_bound_bits) / params.chunk_time;
  if (params.subtract_consumption) {
    rate -= params.events_per_second *
            (consumption.selection_bits_per_round + params.gamma * consumption.pxpy_bits_per_test_round);
  }
  return rate;
}

void SweepRequest::validate() const {
  product_check(chunk_times, "chunk_times");
  product_check(events_per_second, "events_per_second");
  product_check(eps_s, "eps_s");
  product_check(p_omega, "p_omega");
  product_check(gammas, "gammas");
  if (min_log2_inv_beta < 1 || max_log2_inv_beta < min_log2_inv_beta || max_log2_inv_beta > 1000) {
    throw validation_error("sweep.beta_grid", "beta exponents must satisfy 1 <= min <= max");
  }
}

json to_json(const SweepRequest& r) {
  json j = {{"chunk_times", r.chunk_times},
            {"events_per_second", r.events_per_second},
            {"eps_s", r.eps_s},
            {"p_omega", r.p_omega},
            {"gammas", r.gammas},
            {"switch_delay", r.switch_delay},
            {"subtract_consumption", r.subtract_consumption},
            {"min_log2_inv_beta", r.min_log2_inv_beta},
            {"max_log2_inv_beta", r.max_log2_inv_beta}};
  j["hab"] = r.hab ? json(*r.hab) : json(nullptr);
  j["alphabet_size_ab"] = r.alphabet_size_ab ? json(*r.alphabet_size_ab) : json(nullptr);
  return j;
}

SweepRequest sweep_request_from_json(const json& j) {
  if (!j.is_object()) throw validation_error("sweep.not_object", "sweep request must be a JSON object");
  SweepRequest r;
  auto list = [&](const char* key, std::vector<double>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    out = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
  };
  try {
    list("chunk_times", r.chunk_times);
    list("events_per_second", r.events_per_second);
    list("eps_s", r.eps_s);
    list("p_omega", r.p_omega);
    list("gammas", r.gammas);
    r.switch_delay = j.value("switch_delay", 0.0);
    r.subtract_consumption = j.value("subtract_consumption", false);
    r.min_log2_inv_beta = j.value("min_log2_inv_beta", 1);
    r.max_log2_inv_beta = j.value("max_log2_inv_beta", 40);
    if (j.contains("hab") && !j.at("hab").is_null()) r.hab = j.at("hab").get<double>();
    if (j.contains("alphabet_size_ab") && !j.at("alphabet_size_ab").is_null())
      r.alphabet_size_ab = j.at("alphabet_size_ab").get<double>();
  } catch (const json::exception& e) {
    throw validation_error("sweep.field_type", std::string("sweep request: ") + e.what());
  }
  r.validate();
  return r;
}

std::vector<EatCell> EatSweepResult::best_per_combination() const {
  std::vector<EatCell> out;
  for (const auto& c : cells) {
    auto same = [&](const EatCell& o) {
      const auto& p = o.params;
      const auto& q = c.params;
      return p.chunk_time == q.chunk_time && p.events_per_second == q.events_per_second && p.eps_s == q.eps_s &&
             p.p_omega == q.p_omega && p.gamma == q.gamma;
    };
    auto it = std::find_if(out.begin(), out.end(), same);
    if (it == out.end()) {
      out.push_back(c);
    } else if (c.net_gain > it->net_gain) {
      *it = c;
    }
  }
  return out;
}

EatSweepResult sweep(const MinTradeoffInfo& f, const SweepRequest& request, const SdpBackend& backend,
                     const SolverSettings& settings, const std::vector<TradeoffStats>* stats) {
  request.validate();
  if (stats != nullptr && stats->size() != request.gammas.size()) {
    throw validation_error("sweep.stats", "precomputed stats must match the gamma list");
  }
  EatSweepResult r;
  const double t = certificate_rate(f, request.hab);
  r.asymptotic_rate = t;
  const auto consumption_base = consumption_per_round(f.scenario, 0.5);
  r.pxpy_bits = consumption_base.pxpy_bits_per_test_round;

  double alphabet = 0.0;
  if (request.alphabet_size_ab) {
    alphabet = *request.alphabet_size_ab;
  } else {
    const auto full = scenario_for_spot(f.scenario, f.spot);
    alphabet = static_cast<double>(full.alice_outcomes(f.spot.first) * full.bob_outcomes(f.spot.second));
  }

  for (std::size_t g = 0; g < request.gammas.size(); ++g) {
    r.stats.push_back(stats ? (*stats)[g] : spot_check_lift(f, request.gammas[g], backend, settings).stats);
  }

  for (double chunk : request.chunk_times)
    for (double rate : request.events_per_second)
      for (double eps : request.eps_s)
        for (double pom : request.p_omega)
          for (std::size_t g = 0; g < request.gammas.size(); ++g) {
            const auto& st = r.stats[g];
            EatParameters p;
            p.chunk_time = chunk;
            p.events_per_second = rate;
            p.eps_s = eps;
            p.p_omega = pom;
            p.gamma = request.gammas[g];
            p.switch_delay = request.switch_delay;
            p.alphabet_size_ab = alphabet;
            p.subtract_consumption = request.subtract_consumption;
            p.hab = request.hab;
            if (!p.hab && f.use_case == UseCase::key_distribution) p.hab = f.certificate_value - t;
            const double n = effective_rounds(chunk, rate, p.gamma, p.switch_delay);
            const auto cons = consumption_per_round(f.scenario, p.gamma);
            for (int k = request.min_log2_inv_beta; k <= request.max_log2_inv_beta; ++k) {
              p.beta = std::ldexp(1.0, -k);
              p.validate();
              EatCell c;
              c.params = p;
              c.log2_inv_beta = k;
              c.breakdown = eat_bound(t, n, p, st);
              c.gross_rate = std::max(0.0, c.breakdown.bound) / chunk;
              c.net_gain = net_gain(c.breakdown.bound, p, cons);
              c.d_f = st.d_f;
              c.var_f_gamma = st.var_f_gamma;
              r.cells.push_back(c);
            }
          }
  for (std::size_t i = 1; i < r.cells.size(); ++i)
    if (r.cells[i].net_gain > r.cells[r.best].net_gain) r.best = i;
  return r;
}

json to_json(const EatCell& c) {
  const auto& p = c.params;
  const auto& b = c.breakdown;
  json j = {{"chunk_time", p.chunk_time},
            {"events_per_second", p.events_per_second},
            {"eps_s", p.eps_s},
            {"p_omega", p.p_omega},
            {"gamma", p.gamma},
            {"switch_delay", p.switch_delay},
            {"alphabet_size_ab", p.alphabet_size_ab},
            {"subtract_consumption", p.subtract_consumption},
            {"log2_inv_beta", c.log2_inv_beta},
            {"beta", p.beta},
            {"n", b.n},
            {"t", number(b.t)},
            {"n_t", number(b.n_t)},
            {"n_eps_v", number(b.n_eps_v)},
            {"n_eps_k", number(b.n_eps_k)},
            {"eps_omega", number(b.eps_omega)},
            {"bound", number(b.bound)},
            {"d_f", number(c.d_f)},
            {"var_f_gamma", number(c.var_f_gamma)},
            {"gross_rate", number(c.gross_rate)},
            {"net_gain", number(c.net_gain)}};
  j["hab"] = p.hab ? json(*p.hab) : json(nullptr);
  return j;
}

EatCell eat_cell_from_json(const json& j) {
  try {
    EatCell c;
    auto& p = c.params;
    auto& b = c.breakdown;
    p.chunk_time = j.at("chunk_time").get<double>();
    p.events_per_second = j.at("events_per_second").get<double>();
    p.eps_s = j.at("eps_s").get<double>();
    p.p_omega = j.at("p_omega").get<double>();
    p.gamma = j.at("gamma").get<double>();
    p.switch_delay = j.at("switch_delay").get<double>();
    p.alphabet_size_ab = j.at("alphabet_size_ab").get<double>();
    p.subtract_consumption = j.at("subtract_consumption").get<bool>();
    p.beta = j.at("beta").get<double>();
    if (!j.at("hab").is_null()) p.hab = j.at("hab").get<double>();
    c.log2_inv_beta = j.at("log2_inv_beta").get<int>();
    b.n = j.at("n").get<double>();
    b.t = number_from(j.at("t"));
    b.n_t = number_from(j.at("n_t"));
    b.n_eps_v = number_from(j.at("n_eps_v"));
    b.n_eps_k = number_from(j.at("n_eps_k"));
    b.eps_omega = number_from(j.at("eps_omega"));
    b.bound = number_from(j.at("bound"));
    c.d_f = number_from(j.at("d_f"));
    c.var_f_gamma = number_from(j.at("var_f_gamma"));
    c.gross_rate = number_from(j.at("gross_rate"));
    c.net_gain = number_from(j.at("net_gain"));
    return c;
  } catch (const json::exception& e) {
    throw validation_error("sweep.json", std::string("malformed sweep cell: ") + e.what());
  }
}

json to_json(const EatSweepResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  json stats = json::array();
  for (const auto& s : r.stats) stats.push_back(to_json(s));
  return {{"cells", cells},
          {"best", r.best},
          {"best_cell", r.cells.empty() ? json(nullptr) : to_json(r.best_cell())},
          {"stats", stats},
          {"asymptotic_rate", r.asymptotic_rate},
          {"pxpy_bits", r.pxpy_bits}};
}

EatSweepResult eat_sweep_result_from_json(const json& j) {
  try {
    EatSweepResult r;
    for (const auto& c : j.at("cells")) r.cells.push_back(eat_cell_from_json(c));
    r.best = j.at("best").get<std::size_t>();
    for (const auto& s : j.at("stats")) r.stats.push_back(tradeoff_stats_from_json(s));
    r.asymptotic_rate = j.at("asymptotic_rate").get<double>();
    r.pxpy_bits = j.at("pxpy_bits").get<double>();
    if (!r.cells.empty() && r.best >= r.cells.size()) {
      throw validation_error("sweep.best", "best cell index out of range");
    }
    return r;
  } catch (const json::exception& e) {
    throw validation_error("sweep.json", std::string("malformed sweep result: ") + e.what());
  }
}

std::string to_csv(const EatSweepResult& r) {
  std::ostringstream os;
  os << "chunk_time,events_per_second,eps_s,p_omega,gamma,switch_delay,log2_inv_beta,beta,n,t,n_t,n_eps_v,"
        "n_eps_k,eps_omega,bound,d_f,var_f_gamma,gross_rate,net_gain\n";
  for (const auto& c : r.cells) {
    const auto& p = c.params;
    const auto& b = c.breakdown;
    const double row[] = {p.chunk_time, p.events_per_second, p.eps_s,       p.p_omega,   p.gamma,
                          p.switch_delay, static_cast<double>(c.log2_inv_beta), p.beta, b.n, b.t,
                          b.n_t,        b.n_eps_v,           b.n_eps_k,     b.eps_omega, b.bound,
                          c.d_f,        c.var_f_gamma,       c.gross_rate,  c.net_gain};
    for (std::size_t i = 0; i < std::size(row); ++i) os << (i ? "," : "") << fmt(row[i]);
    os << "\n";
  }
  return os.str();
}

json parameter_dictionary(const EatCell& c, const EatSweepResult& r, const MinTradeoffInfo& f) {
  const auto& p = c.params;
  return {{"diameter_of_min_tradeoff", c.d_f},
          {"pxpy_randomness_consumption_per_round", r.pxpy_bits},
          {"hab", p.hab ? json(*p.hab) : json(nullptr)},
          {"subtract_consumption_for_test_rounds", p.subtract_consumption},
          {"min-tradeoff certificate value", f.certificate_value},
          {"epsS", p.eps_s},
          {"events per second", p.events_per_second},
          {"single data chunk generation time", p.chunk_time},
          {"pOmega", p.p_omega},
          {"-log beta", static_cast<double>(c.log2_inv_beta)},
          {"test round probability", p.gamma},
          {"switch delay", p.switch_delay},
          {"entropy_lower_bound_const_values", f.constant}};
}

}  // namespace eatkit
