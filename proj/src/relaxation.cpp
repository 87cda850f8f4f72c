#include "eatkit/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "eatkit/error.hpp"

namespace eatkit {

using nlohmann::json;

std::string to_string(GuessTarget g) { return g == GuessTarget::alice ? "alice" : "joint"; }

namespace {

GuessTarget guess_from_string(const std::string& s) {
  if (s == "alice") return GuessTarget::alice;
  if (s == "joint") return GuessTarget::joint;
  throw validation_error("mintradeoff.guess", "guess target must be 'alice' or 'joint', got '" + s + "'");
}

void check_spot(const Scenario& s, Setting spot) {
  if (spot.first < 0 || spot.first >= s.alice_settings() || spot.second < 0 || spot.second >= s.bob_settings()) {
    throw validation_error("relaxation.spot", "spot setting (" + std::to_string(spot.first) + "," +
                                                  std::to_string(spot.second) + ") outside " + s.to_string());
  }
}

void collect_settings(const BellExpression& e, std::set<int>& xs, std::set<int>& ys) {
  for (const auto& t : e.terms()) {
    switch (t.atom.kind) {
      case BellAtom::Kind::correlator:
      case BellAtom::Kind::joint:
        xs.insert(t.atom.x);
        ys.insert(t.atom.y);
        break;
      case BellAtom::Kind::marginal_a:
        xs.insert(t.atom.x);
        break;
      case BellAtom::Kind::marginal_b:
        ys.insert(t.atom.y);
        break;
      case BellAtom::Kind::constant:
        break;
    }
  }
}

LetterSelection select_letters(const std::vector<Certificate>& certs, const std::vector<const BellExpression*>& extra,
                               std::optional<Setting> spot_a, std::optional<Setting> spot_b, int eve) {
  std::set<int> xs;
  std::set<int> ys;
  for (const auto& c : certs) collect_settings(c.expression, xs, ys);
  for (const auto* e : extra) collect_settings(*e, xs, ys);
  if (spot_a) xs.insert(spot_a->first);
  if (spot_b) ys.insert(spot_b->second);
  return {{xs.begin(), xs.end()}, {ys.begin(), ys.end()}, eve};
}

std::string cert_tag(std::size_t k) { return kCertificateTag + std::to_string(k); }

// Projector of Eve's k-th guess at the spot setting.
Polynomial guess_projector(const Scenario& s, Setting spot, GuessTarget guess, int k) {
  if (guess == GuessTarget::alice) return alice_projector(s, spot.first, k);
  const int bo = s.bob_outcomes(spot.second);
  return alice_projector(s, spot.first, k / bo) * bob_projector(s, spot.second, k % bo);
}

int guess_count(const Scenario& s, Setting spot, GuessTarget guess) {
  const int ao = s.alice_outcomes(spot.first);
  return guess == GuessTarget::alice ? ao : ao * s.bob_outcomes(spot.second);
}

LinearEquality make_equality(std::vector<std::pair<int, double>> terms, double rhs, std::string tag) {
  return {std::move(terms), rhs, std::move(tag)};
}

void add_normalized_constraints(SdpProblem& p, const MomentMatrix& mm, const std::vector<Certificate>& certs) {
  p.equalities.push_back(make_equality({{mm.variable(Word{}), 1.0}}, 1.0, kNormalizationTag));
  for (std::size_t k = 0; k < certs.size(); ++k) {
    p.equalities.push_back(
        make_equality(mm.linear_form(lower_expression(certs[k].expression)), certs[k].target, cert_tag(k)));
  }
}

void record_certificates(SdpProblem& p, const std::vector<Certificate>& certs) {
  json list = json::array();
  for (const auto& c : certs) list.push_back({{"expression", to_string(c.expression)}, {"target", c.target}});
  p.metadata["certificates"] = list;
}

}  // namespace

SdpProblem build_npa_optimize(const Scenario& scenario, int level, const BellExpression& objective, Sense sense,
                              const std::vector<Certificate>& certificates) {
  const auto sel = select_letters(certificates, {&objective}, std::nullopt, std::nullopt, 0);
  const auto basis = MonomialBasis::generate(alphabet(scenario, sel), level);
  SdpProblem p;
  p.sense = sense;
  MomentMatrix mm(p, basis, "G");
  add_normalized_constraints(p, mm, certificates);
  p.objective = mm.linear_form(lower_expression(objective));
  p.metadata = {{"relaxation", "npa"}, {"level", std::to_string(level)}, {"objective", to_string(objective)}};
  record_certificates(p, certificates);
  return p;
}

SdpProblem build_npa_minentropy(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                Setting spot, GuessTarget guess) {
  check_spot(scenario, spot);
  const auto sel = select_letters(certificates, {}, spot, guess == GuessTarget::joint ? std::optional(spot) : std::nullopt, 0);
  const auto basis = MonomialBasis::generate(alphabet(scenario, sel), level);
  const int guesses = guess_count(scenario, spot, guess);
  SdpProblem p;
  p.sense = Sense::maximize;
  std::vector<MomentMatrix> blocks;
  for (int g = 0; g < guesses; ++g) blocks.emplace_back(p, basis, "G" + std::to_string(g));

  std::vector<std::pair<int, double>> norm;
  for (const auto& b : blocks) norm.emplace_back(b.variable(Word{}), 1.0);
  p.equalities.push_back(make_equality(norm, 1.0, kNormalizationTag));
  for (std::size_t k = 0; k < certificates.size(); ++k) {
    const auto poly = lower_expression(certificates[k].expression);
    std::vector<std::pair<int, double>> terms;
    for (const auto& b : blocks) {
      auto f = b.linear_form(poly);
      terms.insert(terms.end(), f.begin(), f.end());
    }
    p.equalities.push_back(make_equality(std::move(terms), certificates[k].target, cert_tag(k)));
  }
  for (int g = 0; g < guesses; ++g) {
    auto f = blocks[static_cast<std::size_t>(g)].linear_form(guess_projector(scenario, spot, guess, g));
    p.objective.insert(p.objective.end(), f.begin(), f.end());
  }
  p.metadata = {{"relaxation", "nieto-silleras"},
                {"level", std::to_string(level)},
                {"guess", to_string(guess)},
                {"spot", {spot.first, spot.second}},
                {"basis_size", basis.size()}};
  record_certificates(p, certificates);
  return p;
}

QuadratureRule gauss_radau(int m) {
  if (m < 2) throw validation_error("quadrature.m", "Gauss-Radau rule needs at least 2 nodes, got " + std::to_string(m));
  // Monic Legendre recurrence on [-1, 1]: alpha_k = 0, beta_k = k^2 / (4k^2 - 1).
  auto beta = [](int k) { return static_cast<double>(k) * k / (4.0 * k * k - 1.0); };
  double p_prev = 1.0;  // p_0(1)
  double p_cur = 1.0;   // p_1(1)
  for (int k = 1; k < m - 1; ++k) {
    const double next = p_cur - beta(k) * p_prev;
    p_prev = p_cur;
    p_cur = next;
  }
  // p_cur = p_{m-1}(1), p_prev = p_{m-2}(1)
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(beta(k));
  j(m - 1, m - 1) = 1.0 - beta(m - 1) * p_prev / p_cur;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  QuadratureRule rule;
  for (int i = 0; i < m; ++i) {
    const double x = es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    rule.nodes.push_back(std::min(1.0, 0.5 * (1.0 + x)));
    rule.weights.push_back(v * v);  // 2 v^2 on [-1,1], halved on [0,1]
  }
  rule.nodes.back() = 1.0;
  return rule;
}

SdpProblem build_bff_node(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                          Setting spot, double t, GuessTarget guess) {
  check_spot(scenario, spot);
  if (!(t > 0.0 && t < 1.0)) throw validation_error("relaxation.node", "quadrature node must lie in (0, 1)");
  const int ops = guess_count(scenario, spot, guess);
  const auto sel =
      select_letters(certificates, {}, spot, guess == GuessTarget::joint ? std::optional(spot) : std::nullopt, ops);
  const auto basis = MonomialBasis::generate(alphabet(scenario, sel), level);
  SdpProblem p;
  p.sense = Sense::minimize;
  MomentMatrix mm(p, basis, "G");
  add_normalized_constraints(p, mm, certificates);
  // The infimum is attained with Z*Z, ZZ* <= alpha, so <w* w> <= alpha^(#Z in w).
  // Without these bounds the moments of Eve's operators have unbounded flat
  // directions and the solver loses accuracy.
  const double alpha = 1.5 * std::max(1.0 / t, 1.0 / (1.0 - t));
  for (const auto& w : basis.words) {
    const auto z = std::count_if(w.begin(), w.end(), [](const Letter& l) { return l.party == Letter::Party::eve; });
    if (z == 0) continue;
    Word sq = adjoint(w);
    sq.insert(sq.end(), w.begin(), w.end());
    auto diag = canonicalize(std::move(sq));
    if (!diag) continue;
    const int blk = static_cast<int>(p.block_sizes.size());
    p.block_sizes.push_back(1);
    p.lmi.push_back({-1, blk, 0, 0, std::pow(alpha, static_cast<double>(z))});
    p.lmi.push_back({mm.variable(*diag), blk, 0, 0, -1.0});
  }
  Polynomial obj;
  for (int k = 0; k < ops; ++k) {
    const Word z{Letter::eve(k, false)};
    const Word zs{Letter::eve(k, true)};
    const Polynomial inner{{z, 1.0}, {zs, 1.0}, {Word{Letter::eve(k, true), Letter::eve(k, false)}, 1.0 - t}};
    obj += guess_projector(scenario, spot, guess, k) * inner;
    obj += Polynomial{{Word{Letter::eve(k, false), Letter::eve(k, true)}, t}};
  }
  // Z and Z* share a moment variable, so equal keys merge here.
  p.objective = mm.linear_form(obj);
  p.metadata = {{"relaxation", "bff-node"},
                {"level", std::to_string(level)},
                {"guess", to_string(guess)},
                {"spot", {spot.first, spot.second}},
                {"t", t},
                {"basis_size", basis.size()}};
  record_certificates(p, certificates);
  return p;
}

BffRelaxation build_bff_vonneumann(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                   Setting spot, int m_radau, GuessTarget guess) {
  BffRelaxation r;
  r.rule = gauss_radau(m_radau);
  for (int i = 0; i + 1 < r.rule.m(); ++i) {
    const double t = r.rule.nodes[static_cast<std::size_t>(i)];
    r.c.push_back(r.rule.weights[static_cast<std::size_t>(i)] / (t * std::numbers::ln2));
    r.nodes.push_back(build_bff_node(scenario, level, certificates, spot, t, guess));
  }
  return r;
}

std::string to_string(EntropyType e) { return e == EntropyType::min_entropy ? "min-entropy" : "von Neumann entropy"; }

std::string to_string(UseCase u) {
  return u == UseCase::randomness_generation ? "Randomness Generation" : "Key Distribution";
}

EntropyType entropy_type_from_string(const std::string& s) {
  if (s == "min-entropy" || s == "min") return EntropyType::min_entropy;
  if (s == "von Neumann entropy" || s == "vn" || s == "von-neumann") return EntropyType::von_neumann;
  throw validation_error("mintradeoff.entropy_type", "unknown entropy type '" + s + "' (expected min or vn)");
}

UseCase use_case_from_string(const std::string& s) {
  if (s == "Randomness Generation" || s == "rng") return UseCase::randomness_generation;
  if (s == "Key Distribution" || s == "qkd") return UseCase::key_distribution;
  throw validation_error("mintradeoff.use_case", "unknown use case '" + s + "' (expected rng or qkd)");
}

std::vector<BellExpression> MinTradeoffInfo::parsed_expressions() const {
  std::vector<BellExpression> out;
  for (const auto& e : expressions) out.push_back(parse_expression(e, scenario));
  return out;
}

double MinTradeoffInfo::evaluate_values(const std::vector<double>& values) const {
  if (values.size() != coefficients.size()) {
    throw validation_error("mintradeoff.arity", "expected " + std::to_string(coefficients.size()) + " expression values");
  }
  double v = constant;
  for (std::size_t k = 0; k < values.size(); ++k) v += coefficients[k] * values[k];
  return v;
}

double MinTradeoffInfo::evaluate(const BehaviorDistribution& p) const {
  std::vector<double> values;
  for (const auto& e : parsed_expressions()) values.push_back(evaluate_expression(e, p));
  return evaluate_values(values);
}

namespace {

json hab_to_json(const std::map<Setting, double>& hab) {
  json out = json::array();
  for (const auto& [s, v] : hab) out.push_back({{"setting", {s.first, s.second}}, {"value", v}});
  return out;
}

std::map<Setting, double> hab_from_json(const json& j) {
  std::map<Setting, double> out;
  if (j.is_null()) return out;
  for (const auto& e : j) {
    const auto s = e.at("setting").get<std::vector<int>>();
    if (s.size() != 2) throw validation_error("mintradeoff.hab", "hab setting must be a pair");
    out[{s[0], s[1]}] = e.at("value").get<double>();
  }
  return out;
}

}  // namespace

json to_json(const MinTradeoffInfo& m) {
  return {{"A_config", m.scenario.a_config()},
          {"B_config", m.scenario.b_config()},
          {"expressions", m.expressions},
          {"values", m.targets},
          {"coefficients", m.coefficients},
          {"entropy_lower_bound_const_values", m.constant},
          {"certificate_value", m.certificate_value},
          {"asymptotic_keyrate", m.asymptotic_keyrate},
          {"spot_setting", {m.spot.first, m.spot.second}},
          {"entropy_type", to_string(m.entropy_type)},
          {"use_case", to_string(m.use_case)},
          {"guess", to_string(m.guess)},
          {"hab_dict", hab_to_json(m.hab)},
          {"relaxation_level", m.level},
          {"m_radau", m.m_radau},
          {"setup_nickname", m.setup_nickname},
          {"metadata", m.metadata}};
}

MinTradeoffInfo min_tradeoff_from_json(const json& j) {
  try {
    MinTradeoffInfo m;
    m.scenario = Scenario(j.at("A_config").get<std::vector<int>>(), j.at("B_config").get<std::vector<int>>());
    m.expressions = j.at("expressions").get<std::vector<std::string>>();
    m.targets = j.at("values").get<std::vector<double>>();
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    m.constant = j.at("entropy_lower_bound_const_values").get<double>();
    m.certificate_value = j.at("certificate_value").get<double>();
    m.asymptotic_keyrate = j.at("asymptotic_keyrate").get<double>();
    const auto spot = j.at("spot_setting").get<std::vector<int>>();
    if (spot.size() != 2) throw validation_error("mintradeoff.spot", "spot_setting must be a pair");
    m.spot = {spot[0], spot[1]};
    m.entropy_type = entropy_type_from_string(j.at("entropy_type").get<std::string>());
    m.use_case = use_case_from_string(j.at("use_case").get<std::string>());
    m.guess = guess_from_string(j.value("guess", std::string("alice")));
    m.hab = hab_from_json(j.value("hab_dict", json::array()));
    m.level = j.value("relaxation_level", 2);
    m.m_radau = j.value("m_radau", 0);
    m.setup_nickname = j.value("setup_nickname", std::string{});
    m.metadata = j.value("metadata", json::object());
    if (m.expressions.size() != m.targets.size() || m.expressions.size() != m.coefficients.size()) {
      throw validation_error("mintradeoff.arity", "expressions, values and coefficients differ in length");
    }
    return m;
  } catch (const json::exception& e) {
    throw validation_error("mintradeoff.json", std::string("malformed min-tradeoff document: ") + e.what());
  }
}

std::vector<double> certificate_multipliers(const SdpProblem& problem, const DualSolution& dual, std::size_t count) {
  std::vector<double> out(count, 0.0);
  const std::string prefix = kCertificateTag;
  for (std::size_t i = 0; i < problem.equalities.size(); ++i) {
    const auto& tag = problem.equalities[i].tag;
    if (tag.rfind(prefix, 0) != 0) continue;
    const auto k = static_cast<std::size_t>(std::stoul(tag.substr(prefix.size())));
    if (k < count && i < dual.multipliers.size()) out[k] += dual.multipliers[i];
  }
  return out;
}

namespace {

// Bound constant with every non-certificate equality folded in.
double folded_constant(const SdpProblem& problem, const DualSolution& dual) {
  double c = dual.bound_constant;
  const std::string prefix = kCertificateTag;
  for (std::size_t i = 0; i < problem.equalities.size() && i < dual.multipliers.size(); ++i)
    if (problem.equalities[i].tag.rfind(prefix, 0) != 0) c += dual.multipliers[i] * problem.equalities[i].rhs;
  return c;
}

void require_usable(const DualSolution& dual, const ExtractionOptions& options, const std::string& what) {
  if (dual.status == SolveStatus::infeasible) {
    throw solver_error("solver.infeasible", what + ": certificate values are infeasible for the relaxation (" +
                                                dual.message + ")");
  }
  if (!dual.usable()) {
    throw solver_error("solver.failure", what + ": solver status " + to_string(dual.status) + " (" + dual.message + ")");
  }
  if (dual.duality_gap > options.gap_tolerance) {
    std::ostringstream os;
    os << what << ": duality gap " << dual.duality_gap << " exceeds tolerance " << options.gap_tolerance;
    throw solver_error("solver.gap", os.str());
  }
}

// No timings: min-tradeoff documents are reproducible byte for byte.
json solve_report(const DualSolution& d) {
  return {{"status", to_string(d.status)},
          {"primal_objective", d.primal_objective},
          {"dual_objective", d.dual_objective},
          {"duality_gap", d.duality_gap},
          {"stationarity_residual", d.stationarity_residual},
          {"iterations", d.iterations}};
}

void finish(MinTradeoffInfo& info, const std::vector<Certificate>& certs) {
  info.targets.clear();
  info.expressions.clear();
  for (const auto& c : certs) {
    info.targets.push_back(c.target);
    info.expressions.push_back(to_string(c.expression));
  }
  info.certificate_value = info.evaluate_values(info.targets);
  info.asymptotic_keyrate = info.certificate_value;
  if (info.use_case == UseCase::key_distribution) {
    auto it = info.hab.find(info.spot);
    if (it == info.hab.end()) {
      throw validation_error("mintradeoff.hab", "key distribution needs H(A|B) at spot setting (" +
                                                     std::to_string(info.spot.first) + "," +
                                                     std::to_string(info.spot.second) + ")");
    }
    info.asymptotic_keyrate -= it->second;
  }
}

}  // namespace

MinTradeoffInfo extract_min_tradeoff(const SdpProblem& problem, const DualSolution& dual,
                                     const std::vector<Certificate>& certificates, MinTradeoffInfo base,
                                     const ExtractionOptions& options) {
  require_usable(dual, options, "guessing-probability SDP");
  const auto mu = certificate_multipliers(problem, dual, certificates.size());
  const double nu0 = folded_constant(problem, dual);
  double u0 = nu0;
  for (std::size_t k = 0; k < certificates.size(); ++k) u0 += mu[k] * certificates[k].target;
  if (!(u0 > 0.0)) throw solver_error("solver.failure", "non-positive guessing-probability bound");
  // tangent of -log2 at U(e0)
  const double h0 = -std::log2(u0);
  base.coefficients.assign(certificates.size(), 0.0);
  base.constant = h0;
  for (std::size_t k = 0; k < certificates.size(); ++k) {
    base.coefficients[k] = -mu[k] / (u0 * std::numbers::ln2);
    base.constant -= base.coefficients[k] * certificates[k].target;
  }
  base.entropy_type = EntropyType::min_entropy;
  base.metadata["guessing_probability_bound"] = u0;
  base.metadata["solve"] = solve_report(dual);
  finish(base, certificates);
  return base;
}

MinTradeoffInfo extract_min_tradeoff(const BffRelaxation& relaxation, const std::vector<DualSolution>& duals,
                                     const std::vector<Certificate>& certificates, MinTradeoffInfo base,
                                     const ExtractionOptions& options) {
  if (duals.size() != relaxation.nodes.size()) {
    throw validation_error("mintradeoff.arity", "one dual solution per quadrature node is required");
  }
  base.coefficients.assign(certificates.size(), 0.0);
  base.constant = 0.0;
  json nodes = json::array();
  for (std::size_t i = 0; i < duals.size(); ++i) {
    require_usable(duals[i], options, "quadrature node " + std::to_string(i));
    const double ci = relaxation.c[i];
    const auto mu = certificate_multipliers(relaxation.nodes[i], duals[i], certificates.size());
    base.constant += ci * (1.0 + folded_constant(relaxation.nodes[i], duals[i]));
    for (std::size_t k = 0; k < certificates.size(); ++k) base.coefficients[k] += ci * mu[k];
    auto rep = solve_report(duals[i]);
    rep["t"] = relaxation.rule.nodes[i];
    rep["c"] = ci;
    nodes.push_back(rep);
  }
  base.entropy_type = EntropyType::von_neumann;
  base.m_radau = relaxation.rule.m();
  base.metadata["nodes"] = nodes;
  finish(base, certificates);
  return base;
}

json to_json(const MinTradeoffRequest& r) {
  json j = {{"A_config", r.scenario.a_config()},
            {"B_config", r.scenario.b_config()},
            {"expressions", r.expressions},
            {"values", r.values},
            {"spot_setting", {r.spot.first, r.spot.second}},
            {"relaxation_level", r.level},
            {"m_radau", r.m_radau},
            {"entropy_type", to_string(r.entropy_type)},
            {"use_case", to_string(r.use_case)},
            {"hab_dict", hab_to_json(r.hab)},
            {"setup_nickname", r.setup_nickname},
            {"additional_data_dict", r.additional_data}};
  if (r.guess) j["guess"] = to_string(*r.guess);
  return j;
}

MinTradeoffRequest min_tradeoff_request_from_json(const json& j) {
  try {
    MinTradeoffRequest r;
    r.scenario = Scenario(j.at("A_config").get<std::vector<int>>(), j.at("B_config").get<std::vector<int>>());
    r.expressions = j.at("expressions").get<std::vector<std::string>>();
    r.values = j.at("values").get<std::vector<double>>();
    const auto spot = j.at("spot_setting").get<std::vector<int>>();
    if (spot.size() != 2) throw validation_error("mintradeoff.spot", "spot_setting must be a pair");
    r.spot = {spot[0], spot[1]};
    r.level = j.value("relaxation_level", 2);
    r.m_radau = j.value("m_radau", 8);
    r.entropy_type = entropy_type_from_string(j.value("entropy_type", std::string("min-entropy")));
    r.use_case = use_case_from_string(j.value("use_case", std::string("Randomness Generation")));
    if (j.contains("guess")) r.guess = guess_from_string(j.at("guess").get<std::string>());
    r.hab = hab_from_json(j.value("hab_dict", json::array()));
    r.setup_nickname = j.value("setup_nickname", std::string{});
    r.additional_data = j.value("additional_data_dict", json::object());
    return r;
  } catch (const json::exception& e) {
    throw validation_error("mintradeoff.json", std::string("malformed min-tradeoff request: ") + e.what());
  }
}

namespace {

SdpProblem elastic_variant(const SdpProblem& problem, double penalty, std::vector<int>& slack_vars) {
  SdpProblem p = problem;
  const double sign = p.sense == Sense::maximize ? -1.0 : 1.0;
  const std::string prefix = kCertificateTag;
  for (auto& eq : p.equalities) {
    if (eq.tag.rfind(prefix, 0) != 0) continue;
    for (double dir : {1.0, -1.0}) {
      const int v = p.add_variable("slack(" + eq.tag + (dir > 0 ? ")+" : ")-"));
      const int block = static_cast<int>(p.block_sizes.size());
      p.block_sizes.push_back(1);
      p.lmi.push_back({v, block, 0, 0, 1.0});
      eq.terms.emplace_back(v, dir);
      p.objective.emplace_back(v, sign * penalty);
      slack_vars.push_back(v);
    }
  }
  p.metadata["elastic_penalty"] = penalty;
  return p;
}

}  // namespace

namespace {

// Elastic solve only; throws when the solve fails or the slack is too large.
CertifiedSolve solve_elastic(const SdpProblem& problem, const SdpBackend& backend, const SolverSettings& settings,
                             double penalty, double slack_tolerance, const DualSolution* plain) {
  CertifiedSolve out;
  std::vector<int> slack_vars;
  out.problem = elastic_variant(problem, penalty, slack_vars);
  out.elastic = true;
  out.dual = backend.solve(out.problem, settings);
  if (!out.dual.usable()) {
    std::string msg = "relaxation solve failed: ";
    if (plain) msg += to_string(plain->status) + " (" + plain->message + "); elastic retry: ";
    throw solver_error("solver.failure", msg + to_string(out.dual.status) + " (" + out.dual.message + ")");
  }
  for (int v : slack_vars) out.slack += std::abs(out.dual.moments(v));
  double scale = 1.0;
  for (const auto& eq : problem.equalities) scale = std::max(scale, std::abs(eq.rhs));
  if (out.slack > slack_tolerance * scale) {
    std::ostringstream os;
    os << "certificate values are infeasible for the relaxation (total slack " << out.slack << ")";
    throw solver_error("solver.infeasible", os.str());
  }
  // The elastic objective differs from the original by the penalized slack.
  const double shift = (problem.sense == Sense::maximize ? 1.0 : -1.0) * penalty * out.slack;
  out.dual.primal_objective += shift;
  out.dual.duality_gap = std::abs(out.dual.primal_objective - out.dual.dual_objective);
  return out;
}

struct Tightest {
  DualSolution dual;
  SdpProblem problem;
  bool elastic = false;
  double penalty = 0.0;
  double slack = 0.0;
};

constexpr double kScheduleGap = 1e-7;
const std::vector<double> kPenaltySchedule{1e4, 3e4, 1e5};

// Tightest valid dual bound over the plain solve and a penalty schedule.
Tightest tightest_bound(const SdpProblem& problem, const SdpBackend& backend, const SolverSettings& settings,
                        const std::vector<double>& penalties) {
  std::optional<Tightest> best;
  const bool maximize = problem.sense == Sense::maximize;
  auto consider = [&](const CertifiedSolve& c, double penalty) {
    const auto& d = c.dual;
    if (!d.usable()) return;
    if (best && (maximize ? d.dual_objective >= best->dual.dual_objective
                          : d.dual_objective <= best->dual.dual_objective))
      return;
    best = Tightest{d, c.problem, c.elastic, penalty, c.slack};
  };
  const DualSolution plain = backend.solve(problem, settings);
  if (plain.status == SolveStatus::infeasible) {
    throw solver_error("solver.infeasible", "certificate values are infeasible for the relaxation");
  }
  consider(CertifiedSolve{plain, problem, false, 0.0}, 0.0);
  if (plain.usable() && plain.duality_gap <= kScheduleGap) return *best;
  std::string last = to_string(plain.status) + " (" + plain.message + ")";
  for (double pen : penalties) {
    try {
      consider(solve_elastic(problem, backend, settings, pen, 1e-6, nullptr), pen);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::solver || e.code() == "solver.infeasible") throw;
      last = e.what();
    }
  }
  if (!best) throw solver_error("solver.failure", "relaxation solve failed: " + last);
  return *best;
}

}  // namespace

CertifiedSolve solve_certified(const SdpProblem& problem, const SdpBackend& backend, const SolverSettings& settings,
                               double penalty, double slack_tolerance) {
  const DualSolution plain = backend.solve(problem, settings);
  if (plain.usable()) return CertifiedSolve{plain, problem, false, 0.0};
  return solve_elastic(problem, backend, settings, penalty, slack_tolerance, &plain);
}

ProbedOptimum optimize_with_probes(const Scenario& scenario, int level, const BellExpression& objective, Sense sense,
                                   const std::vector<Certificate>& certificates,
                                   const std::vector<BellExpression>& probes, const SdpBackend& backend,
                                   const SolverSettings& settings) {
  std::vector<const BellExpression*> extra{&objective};
  for (const auto& e : probes) extra.push_back(&e);
  const auto sel = select_letters(certificates, extra, std::nullopt, std::nullopt, 0);
  const auto basis = MonomialBasis::generate(alphabet(scenario, sel), level);
  SdpProblem p;
  p.sense = sense;
  MomentMatrix mm(p, basis, "G");
  add_normalized_constraints(p, mm, certificates);
  p.objective = mm.linear_form(lower_expression(objective));
  p.metadata = {{"relaxation", "npa"}, {"level", std::to_string(level)}, {"objective", to_string(objective)}};
  record_certificates(p, certificates);
  std::vector<std::vector<std::pair<int, double>>> forms;
  for (const auto& e : probes) forms.push_back(mm.linear_form(lower_expression(e)));

  const auto solved = solve_certified(p, backend, settings);
  ProbedOptimum out;
  out.bound = solved.dual.dual_objective;
  out.value = solved.dual.primal_objective;
  out.gap = solved.dual.duality_gap;
  out.elastic = solved.elastic;
  for (const auto& f : forms) {
    double v = 0.0;
    for (const auto& [var, coef] : f) v += coef * solved.dual.moments(var);
    out.probes.push_back(v);
  }
  return out;
}

GuessingBound min_entropy_bound(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                Setting spot, GuessTarget guess, const SdpBackend& backend,
                                const SolverSettings& settings, const std::vector<double>& penalties) {
  const auto problem = build_npa_minentropy(scenario_for_spot(scenario, spot), level, certificates, spot, guess);
  const auto t = tightest_bound(problem, backend, settings, penalties);
  GuessingBound out;
  out.guessing_probability = std::min(1.0, t.dual.dual_objective);
  out.min_entropy = -std::log2(out.guessing_probability);
  out.gap = t.dual.duality_gap;
  out.elastic = t.elastic;
  out.penalty = t.penalty;
  return out;
}

VonNeumannBound von_neumann_bound(const Scenario& scenario, int level, const std::vector<Certificate>& certificates,
                                  Setting spot, int m_radau, GuessTarget guess, const SdpBackend& backend,
                                  const SolverSettings& settings, const std::vector<double>& penalties) {
  const auto relax = build_bff_vonneumann(scenario_for_spot(scenario, spot), level, certificates, spot, m_radau, guess);
  VonNeumannBound out;
  for (std::size_t i = 0; i < relax.nodes.size(); ++i) {
    const auto t = tightest_bound(relax.nodes[i], backend, settings, penalties);
    out.entropy += relax.c[i] * (1.0 + t.dual.dual_objective);
    out.gap += relax.c[i] * t.dual.duality_gap;
    out.elastic = out.elastic || t.elastic;
  }
  return out;
}

Scenario scenario_for_spot(const Scenario& s, Setting spot) {
  if (spot.first < 0 || spot.second < 0) throw validation_error("relaxation.spot", "spot setting indices must be non-negative");
  return s.extended_to(spot.first, spot.second);
}

MinTradeoffInfo calculate_mintradeoff(const MinTradeoffRequest& request) {
  if (request.expressions.empty()) throw validation_error("mintradeoff.empty", "at least one certificate expression is required");
  if (request.expressions.size() != request.values.size()) {
    throw validation_error("mintradeoff.arity", "expressions and values differ in length");
  }
  if (request.use_case == UseCase::key_distribution && !request.hab.contains(request.spot)) {
    throw validation_error("mintradeoff.hab", "key distribution needs H(A|B) at spot setting (" +
                                                   std::to_string(request.spot.first) + "," +
                                                   std::to_string(request.spot.second) + ")");
  }
  std::vector<Certificate> certs;
  for (std::size_t k = 0; k < request.expressions.size(); ++k)
    certs.push_back({parse_expression(request.expressions[k], request.scenario), request.values[k]});
  const Scenario full = scenario_for_spot(request.scenario, request.spot);
  const GuessTarget guess = request.guess.value_or(
      request.use_case == UseCase::randomness_generation ? GuessTarget::joint : GuessTarget::alice);

  MinTradeoffInfo base;
  base.scenario = request.scenario;
  base.spot = request.spot;
  base.use_case = request.use_case;
  base.guess = guess;
  base.hab = request.hab;
  base.level = request.level;
  base.m_radau = request.entropy_type == EntropyType::von_neumann ? request.m_radau : 0;
  base.setup_nickname = request.setup_nickname;
  base.metadata = {{"additional_data_dict", request.additional_data}, {"level", std::to_string(request.level)}};

  const auto backend = default_backend();
  base.metadata["solver"] = backend->name();
  if (request.entropy_type == EntropyType::min_entropy) {
    const auto problem = build_npa_minentropy(full, request.level, certs, request.spot, guess);
    auto solved = tightest_bound(problem, *backend, request.solver, kPenaltySchedule);
    base.metadata["elastic"] = solved.elastic;
    base.metadata["certificate_slack"] = solved.slack;
    return extract_min_tradeoff(solved.problem, solved.dual, certs, base);
  }
  auto relax = build_bff_vonneumann(full, request.level, certs, request.spot, request.m_radau, guess);
  std::vector<DualSolution> duals;
  json elastic = json::array();
  for (auto& node : relax.nodes) {
    auto solved = tightest_bound(node, *backend, request.solver, kPenaltySchedule);
    elastic.push_back({{"elastic", solved.elastic}, {"certificate_slack", solved.slack}});
    node = std::move(solved.problem);
    duals.push_back(std::move(solved.dual));
  }
  base.metadata["node_elastic"] = elastic;
  return extract_min_tradeoff(relax, duals, certs, base);
}

}  // namespace eatkit
