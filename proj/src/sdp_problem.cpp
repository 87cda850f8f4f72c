#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "eatkit/error.hpp"
#include "eatkit/sdp.hpp"

namespace eatkit {

using nlohmann::json;

int SdpProblem::add_variable(std::string name) {
  if (!name.empty() || !variable_names.empty()) {
    variable_names.resize(static_cast<std::size_t>(variables));
    variable_names.push_back(std::move(name));
  }
  return variables++;
}

void SdpProblem::check() const {
  auto check_var = [&](int k, const std::string& where) {
    if (k < 0 || k >= variables) {
      throw validation_error("sdp.dimension", where + ": variable index " + std::to_string(k) + " out of range");
    }
  };
  for (int n : block_sizes)
    if (n < 1) throw validation_error("sdp.dimension", "block sizes must be positive");
  for (const auto& e : lmi) {
    if (e.variable != -1) check_var(e.variable, "lmi");
    if (e.block < 0 || e.block >= static_cast<int>(block_sizes.size())) {
      throw validation_error("sdp.dimension", "lmi: block index out of range");
    }
    if (e.row < 0 || e.row > e.col || e.col >= block_sizes[static_cast<std::size_t>(e.block)]) {
      throw validation_error("sdp.dimension", "lmi: entry outside the upper triangle of its block");
    }
  }
  for (const auto& eq : equalities)
    for (const auto& [k, v] : eq.terms) check_var(k, "equality '" + eq.tag + "'");
  for (const auto& [k, v] : objective) check_var(k, "objective");
}

double SdpProblem::objective_value(const Eigen::VectorXd& v) const {
  double s = objective_constant;
  for (const auto& [k, c] : objective) s += c * v(k);
  return s;
}

json to_json(const SdpProblem& p) {
  json lmi = json::array();
  for (const auto& e : p.lmi) lmi.push_back({e.variable, e.block, e.row, e.col, e.value});
  json eqs = json::array();
  for (const auto& eq : p.equalities) eqs.push_back({{"terms", eq.terms}, {"rhs", eq.rhs}, {"tag", eq.tag}});
  return {{"variables", p.variables},
          {"block_sizes", p.block_sizes},
          {"lmi", lmi},
          {"equalities", eqs},
          {"objective", p.objective},
          {"objective_constant", p.objective_constant},
          {"sense", p.sense == Sense::maximize ? "maximize" : "minimize"},
          {"variable_names", p.variable_names},
          {"metadata", p.metadata}};
}

SdpProblem sdp_problem_from_json(const json& j) {
  try {
    SdpProblem p;
    p.variables = j.at("variables").get<int>();
    p.block_sizes = j.at("block_sizes").get<std::vector<int>>();
    for (const auto& e : j.at("lmi")) {
      p.lmi.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>(), e.at(3).get<int>(),
                       e.at(4).get<double>()});
    }
    for (const auto& e : j.at("equalities")) {
      p.equalities.push_back({e.at("terms").get<std::vector<std::pair<int, double>>>(), e.at("rhs").get<double>(),
                              e.value("tag", std::string{})});
    }
    p.objective = j.at("objective").get<std::vector<std::pair<int, double>>>();
    p.objective_constant = j.value("objective_constant", 0.0);
    const auto sense = j.value("sense", std::string("maximize"));
    if (sense != "maximize" && sense != "minimize") throw validation_error("sdp.sense", "unknown sense '" + sense + "'");
    p.sense = sense == "maximize" ? Sense::maximize : Sense::minimize;
    p.variable_names = j.value("variable_names", std::vector<std::string>{});
    p.metadata = j.value("metadata", json::object());
    p.check();
    return p;
  } catch (const json::exception& e) {
    throw validation_error("sdp.json", std::string("malformed SDP problem: ") + e.what());
  }
}

namespace {

SolveStatus status_from_string(const std::string& s) {
  for (auto st : {SolveStatus::optimal, SolveStatus::near_optimal, SolveStatus::infeasible, SolveStatus::numerical_failure})
    if (to_string(st) == s) return st;
  throw validation_error("sdp.json", "unknown solve status '" + s + "'");
}

}  // namespace

json to_json(const DualSolution& s) {
  return {{"status", to_string(s.status)},
          {"message", s.message},
          {"multipliers", s.multipliers},
          {"bound_constant", s.bound_constant},
          {"primal_objective", s.primal_objective},
          {"dual_objective", s.dual_objective},
          {"duality_gap", s.duality_gap},
          {"primal_residual", s.primal_residual},
          {"dual_residual", s.dual_residual},
          {"stationarity_residual", s.stationarity_residual},
          {"iterations", s.iterations},
          {"solve_seconds", s.solve_seconds},
          {"moments", std::vector<double>(s.moments.data(), s.moments.data() + s.moments.size())}};
}

DualSolution dual_solution_from_json(const json& j) {
  try {
    DualSolution s;
    s.status = status_from_string(j.at("status").get<std::string>());
    s.message = j.value("message", std::string{});
    s.multipliers = j.at("multipliers").get<std::vector<double>>();
    s.bound_constant = j.at("bound_constant").get<double>();
    s.primal_objective = j.value("primal_objective", 0.0);
    s.dual_objective = j.value("dual_objective", 0.0);
    s.duality_gap = j.value("duality_gap", 0.0);
    s.primal_residual = j.value("primal_residual", 0.0);
    s.dual_residual = j.value("dual_residual", 0.0);
    s.stationarity_residual = j.value("stationarity_residual", 0.0);
    s.iterations = j.value("iterations", 0);
    s.solve_seconds = j.value("solve_seconds", 0.0);
    const auto m = j.value("moments", std::vector<double>{});
    s.moments = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    return s;
  } catch (const json::exception& e) {
    throw validation_error("sdp.json", std::string("malformed SDP solution: ") + e.what());
  }
}

namespace {

// v = v0 + N z, with N stored column-wise as sparse (variable, weight) lists.
struct Elimination {
  Eigen::VectorXd v0;
  std::vector<std::vector<std::pair<int, double>>> basis;
  bool consistent = true;
  double inconsistency = 0.0;
};

// Gauss-Jordan with full pivoting on the (small) equality system.
Elimination eliminate(const SdpProblem& p) {
  const int n = p.variables;
  const int m = static_cast<int>(p.equalities.size());
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(m, n);
  Eigen::VectorXd rhs(m);
  for (int i = 0; i < m; ++i) {
    for (const auto& [k, v] : p.equalities[static_cast<std::size_t>(i)].terms) e(i, k) += v;
    rhs(i) = p.equalities[static_cast<std::size_t>(i)].rhs;
  }
  const double scale = e.size() > 0 ? std::max(1.0, e.cwiseAbs().maxCoeff()) : 1.0;
  const double tol = 1e-11 * scale;
  std::vector<int> pivot_col;
  std::vector<bool> is_pivot(static_cast<std::size_t>(n), false);
  int r = 0;
  for (; r < m; ++r) {
    Eigen::Index pr = 0;
    Eigen::Index pc = 0;
    const double best = e.bottomRows(m - r).cwiseAbs().maxCoeff(&pr, &pc);
    if (best <= tol) break;
    pr += r;
    e.row(r).swap(e.row(pr));
    std::swap(rhs(r), rhs(pr));
    const double piv = e(r, pc);
    e.row(r) /= piv;
    rhs(r) /= piv;
    for (int i = 0; i < m; ++i) {
      if (i == r || e(i, pc) == 0.0) continue;
      const double f = e(i, pc);
      e.row(i) -= f * e.row(r);
      rhs(i) -= f * rhs(r);
      e(i, pc) = 0.0;
    }
    pivot_col.push_back(static_cast<int>(pc));
    is_pivot[static_cast<std::size_t>(pc)] = true;
  }
  Elimination out;
  out.v0 = Eigen::VectorXd::Zero(n);
  for (int i = r; i < m; ++i) out.inconsistency = std::max(out.inconsistency, std::abs(rhs(i)));
  out.consistent = out.inconsistency <= 1e-9 * std::max(1.0, m > 0 ? rhs.cwiseAbs().maxCoeff() : 0.0);
  for (int i = 0; i < r; ++i) out.v0(pivot_col[static_cast<std::size_t>(i)]) = rhs(i);
  for (int k = 0; k < n; ++k) {
    if (is_pivot[static_cast<std::size_t>(k)]) continue;
    std::vector<std::pair<int, double>> col{{k, 1.0}};
    for (int i = 0; i < r; ++i)
      if (std::abs(e(i, k)) > 1e-15) col.emplace_back(pivot_col[static_cast<std::size_t>(i)], -e(i, k));
    out.basis.push_back(std::move(col));
  }
  return out;
}

}  // namespace

DualSolution InteriorPointBackend::solve(const SdpProblem& problem, const SolverSettings& settings) const {
  problem.check();
  const auto start = std::chrono::steady_clock::now();
  DualSolution out;
  const int n = problem.variables;
  const double sign = problem.sense == Sense::maximize ? 1.0 : -1.0;

  const Elimination el = eliminate(problem);
  if (!el.consistent) {
    out.status = SolveStatus::infeasible;
    std::ostringstream os;
    os << "linear equalities are inconsistent (residual " << el.inconsistency << ")";
    out.message = os.str();
    return out;
  }

  // F_k as per-variable entry lists
  std::vector<std::vector<const LmiEntry*>> by_var(static_cast<std::size_t>(n));
  for (const auto& e : problem.lmi)
    if (e.variable >= 0) by_var[static_cast<std::size_t>(e.variable)].push_back(&e);

  Eigen::VectorXd cvec = Eigen::VectorXd::Zero(n);
  for (const auto& [k, c] : problem.objective) cvec(k) += c;

  StandardSdp sdp;
  sdp.block_sizes = problem.block_sizes;
  for (const auto& e : problem.lmi) {
    const double w = e.variable < 0 ? 1.0 : el.v0(e.variable);
    if (w != 0.0) sdp.c.push_back({e.block, e.row, e.col, w * e.value});
  }
  std::vector<int> kept;  // basis columns that enter the LMI
  std::vector<double> b;
  for (std::size_t j = 0; j < el.basis.size(); ++j) {
    SparseSym a;
    double bj = 0.0;
    for (const auto& [k, w] : el.basis[j]) {
      bj += w * cvec(k);
      for (const auto* e : by_var[static_cast<std::size_t>(k)]) a.push_back({e->block, e->row, e->col, -w * e->value});
    }
    if (a.empty()) {
      if (std::abs(bj) > 1e-12) {
        out.status = SolveStatus::infeasible;
        out.message = "objective is unbounded along a direction not constrained by the LMI";
        return out;
      }
      continue;
    }
    sdp.a.push_back(std::move(a));
    b.push_back(sign * bj);
    kept.push_back(static_cast<int>(j));
  }
  sdp.b = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));

  const StandardSolution st = solve_standard(sdp, settings);
  out.status = st.status;
  out.message = st.message;
  out.iterations = st.iterations;
  out.primal_residual = st.dual_residual;
  out.dual_residual = st.primal_residual;

  out.moments = el.v0;
  for (std::size_t j = 0; j < kept.size(); ++j)
    for (const auto& [k, w] : el.basis[static_cast<std::size_t>(kept[j])]) out.moments(k) += w * st.y(static_cast<Eigen::Index>(j));
  out.primal_objective = problem.objective_value(out.moments);

  if (st.status == SolveStatus::infeasible) {
    out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

  // Stationarity: sign*c + F*(X) = E^T mu.
  Eigen::VectorXd g = sign * cvec;
  double f0x = 0.0;
  for (const auto& e : problem.lmi) {
    const auto& x = st.x[static_cast<std::size_t>(e.block)];
    const double ip = e.row == e.col ? e.value * x(e.row, e.row) : e.value * (x(e.row, e.col) + x(e.col, e.row));
    if (e.variable < 0) {
      f0x += ip;
    } else {
      g(e.variable) += ip;
    }
  }
  const int m = static_cast<int>(problem.equalities.size());
  Eigen::MatrixXd et = Eigen::MatrixXd::Zero(n, m);
  Eigen::VectorXd rhs(m);
  for (int i = 0; i < m; ++i) {
    for (const auto& [k, v] : problem.equalities[static_cast<std::size_t>(i)].terms) et(k, i) += v;
    rhs(i) = problem.equalities[static_cast<std::size_t>(i)].rhs;
  }
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  if (m > 0) mu = et.completeOrthogonalDecomposition().solve(g);
  out.stationarity_residual = m > 0 ? (et * mu - g).cwiseAbs().maxCoeff() : (n > 0 ? g.cwiseAbs().maxCoeff() : 0.0);

  out.multipliers.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) out.multipliers[static_cast<std::size_t>(i)] = sign * mu(i);
  out.bound_constant = problem.objective_constant + sign * f0x;
  out.dual_objective = out.bound_constant + (m > 0 ? sign * mu.dot(rhs) : 0.0);
  out.duality_gap = std::abs(out.primal_objective - out.dual_objective);
  out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

DualSolution ExternalBackend::solve(const SdpProblem& problem, const SolverSettings& settings) const {
  problem.check();
  static std::atomic<unsigned> counter{0};
  const auto dir = std::filesystem::temp_directory_path();
  const std::string stem = "eatkit-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  const auto in_path = dir / (stem + "-problem.json");
  const auto out_path = dir / (stem + "-solution.json");
  json j = to_json(problem);
  j["settings"] = {{"feasibility_tol", settings.feasibility_tol},
                   {"gap_tol", settings.gap_tol},
                   {"max_iterations", settings.max_iterations},
                   {"near_feasibility_tol", settings.near_feasibility_tol},
                   {"near_gap_tol", settings.near_gap_tol}};
  {
    std::ofstream f(in_path);
    if (!f) throw io_error("solver.external", "cannot write " + in_path.string());
    f << j.dump();
  }
  const std::string cmd = command_ + " " + shell_quote(in_path.string()) + " " + shell_quote(out_path.string());
  const int rc = std::system(cmd.c_str());
  std::error_code ec;
  std::filesystem::remove(in_path, ec);
  if (rc != 0) {
    std::filesystem::remove(out_path, ec);
    throw solver_error("solver.external", "external solver '" + command_ + "' exited with status " + std::to_string(rc));
  }
  std::ifstream f(out_path);
  if (!f) throw io_error("solver.external", "external solver produced no solution file");
  json sol;
  try {
    f >> sol;
  } catch (const json::exception& e) {
    throw solver_error("solver.external", std::string("unreadable solution: ") + e.what());
  }
  f.close();
  std::filesystem::remove(out_path, ec);
  return dual_solution_from_json(sol);
}

std::shared_ptr<const SdpBackend> default_backend() {
  const char* env = std::getenv("EATKIT_SOLVER");
  const std::string v = env ? env : "";
  if (v.empty() || v == "interior-point") return std::make_shared<InteriorPointBackend>();
  const std::string prefix = "external:";
  if (v.rfind(prefix, 0) == 0 && v.size() > prefix.size()) {
    return std::make_shared<ExternalBackend>(v.substr(prefix.size()));
  }
  throw validation_error("solver.backend", "EATKIT_SOLVER must be 'interior-point' or 'external:<command>', got '" + v + "'");
}

DualSolution solve(const SdpProblem& problem, const SolverSettings& settings) {
  return default_backend()->solve(problem, settings);
}

}  // namespace eatkit
