#include <cmath>

#include <gtest/gtest.h>

#include "eatkit/error.hpp"
#include "eatkit/bell_expression.hpp"
#include "eatkit/relaxation.hpp"
#include "eatkit/sdp.hpp"

using namespace eatkit;

namespace {

// maximize v s.t. [[1, v], [v, 1]] psd  ->  v* = 1
SdpProblem unit_off_diagonal() {
  SdpProblem p;
  const int v = p.add_variable("v");
  p.block_sizes = {2};
  p.lmi = {{-1, 0, 0, 0, 1.0}, {-1, 0, 1, 1, 1.0}, {v, 0, 0, 1, 1.0}};
  p.objective = {{v, 1.0}};
  return p;
}

// maximize trace(C X) over density matrices X, C = diag(1, 0)
SdpProblem trace_one_example() {
  SdpProblem p;
  const int x00 = p.add_variable("x00");
  const int x01 = p.add_variable("x01");
  const int x11 = p.add_variable("x11");
  p.block_sizes = {2};
  p.lmi = {{x00, 0, 0, 0, 1.0}, {x01, 0, 0, 1, 1.0}, {x11, 0, 1, 1, 1.0}};
  p.equalities = {{{{x00, 1.0}, {x11, 1.0}}, 1.0, "trace"}};
  p.objective = {{x00, 1.0}};
  return p;
}

// Weak duality in the bound direction plus small residuals for a usable solve.
void expect_certified(const SdpProblem& p, const DualSolution& sol, double tol = 1e-6) {
  ASSERT_TRUE(sol.usable()) << sol.message;
  const double slack = p.sense == Sense::maximize ? sol.dual_objective - sol.primal_objective
                                                  : sol.primal_objective - sol.dual_objective;
  EXPECT_GE(slack, -tol);
  EXPECT_NEAR(sol.duality_gap, std::abs(sol.primal_objective - sol.dual_objective), 1e-12);
  EXPECT_LT(sol.primal_residual, tol);
  EXPECT_LT(sol.dual_residual, tol);
  EXPECT_LT(sol.stationarity_residual, tol);
}

}  // namespace

TEST(StandardSdp, TwoByTwoExample) {
  // min <C,X> s.t. X11 = 1, X22 = 1 with C = [[0,1],[1,0]]  ->  -2
  StandardSdp sdp;
  sdp.block_sizes = {2};
  sdp.c = {{0, 0, 1, 1.0}};
  sdp.a = {{{0, 0, 0, 1.0}}, {{0, 1, 1, 1.0}}};
  sdp.b = Eigen::Vector2d(1.0, 1.0);
  const auto sol = solve_standard(sdp);
  ASSERT_EQ(sol.status, SolveStatus::optimal) << sol.message;
  EXPECT_NEAR(sol.primal_objective, -2.0, 1e-7);
  EXPECT_NEAR(sol.dual_objective, -2.0, 1e-7);
  EXPECT_NEAR(sol.x[0](0, 1), -1.0, 1e-6);
}

TEST(StandardSdp, DetectsInfeasibleDual) {
  // y s.t. C - y*A psd with C = -I, A = 0 on diagonal except constraint forcing X11 = 1:
  // max y  s.t. [[-1 - y, 0], [0, -1]] psd is infeasible (entry (1,1) = -1)
  StandardSdp sdp;
  sdp.block_sizes = {2};
  sdp.c = {{0, 0, 0, -1.0}, {0, 1, 1, -1.0}};
  sdp.a = {{{0, 0, 0, 1.0}}};
  sdp.b = Eigen::VectorXd::Constant(1, 1.0);
  const auto sol = solve_standard(sdp);
  EXPECT_EQ(sol.status, SolveStatus::infeasible) << sol.message;
}

TEST(StandardSdp, RejectsBadDimensions) {
  StandardSdp sdp;
  sdp.block_sizes = {2};
  sdp.a = {{{0, 1, 2, 1.0}}};
  sdp.b = Eigen::VectorXd::Constant(1, 1.0);
  EXPECT_THROW(sdp.check(), Error);
}

TEST(MomentSdp, OffDiagonalBound) {
  const auto sol = InteriorPointBackend().solve(unit_off_diagonal(), {});
  ASSERT_TRUE(sol.usable()) << sol.message;
  EXPECT_NEAR(sol.primal_objective, 1.0, 1e-7);
  EXPECT_NEAR(sol.dual_objective, 1.0, 1e-7);
  EXPECT_NEAR(sol.moments(0), 1.0, 1e-6);
}

TEST(MomentSdp, EqualityMultipliersBoundNeighbouringProblems) {
  // maximize v01 s.t. [[1, v01], [v01, v11]] psd, v11 = t.  Optimum sqrt(t).
  for (double t : {0.25, 1.0, 4.0}) {
    SdpProblem p;
    const int v01 = p.add_variable();
    const int v11 = p.add_variable();
    p.block_sizes = {2};
    p.lmi = {{-1, 0, 0, 0, 1.0}, {v01, 0, 0, 1, 1.0}, {v11, 0, 1, 1, 1.0}};
    p.equalities = {{{{v11, 1.0}}, t, "t"}};
    p.objective = {{v01, 1.0}};
    SolverSettings tight;
    tight.feasibility_tol = 1e-9;
    tight.gap_tol = 1e-9;
    const auto sol = InteriorPointBackend().solve(p, tight);
    ASSERT_TRUE(sol.usable()) << sol.message;
    EXPECT_NEAR(sol.primal_objective, std::sqrt(t), 1e-6);
    ASSERT_EQ(sol.multipliers.size(), 1u);
    // tangent of sqrt at t: slope 1/(2 sqrt t); the dual matrix converges
    // like the square root of the gap along the flat direction
    EXPECT_NEAR(sol.multipliers[0], 0.5 / std::sqrt(t), 1e-4);
    EXPECT_LT(sol.stationarity_residual, 1e-6);
    // the affine bound dominates the concave value function everywhere
    for (double s : {0.1, 0.5, 2.0, 9.0})
      EXPECT_GE(sol.bound_constant + sol.multipliers[0] * s + 1e-6, std::sqrt(s));
  }
}

TEST(MomentSdp, MinimizeMirrorsMaximize) {
  auto p = unit_off_diagonal();
  p.sense = Sense::minimize;
  const auto sol = InteriorPointBackend().solve(p, {});
  ASSERT_TRUE(sol.usable()) << sol.message;
  EXPECT_NEAR(sol.primal_objective, -1.0, 1e-7);
  EXPECT_NEAR(sol.dual_objective, -1.0, 1e-7);
}

TEST(MomentSdp, InconsistentEqualitiesAreInfeasible) {
  auto p = unit_off_diagonal();
  p.equalities = {{{{0, 1.0}}, 0.5, "a"}, {{{0, 2.0}}, 2.0, "b"}};
  const auto sol = InteriorPointBackend().solve(p, {});
  EXPECT_EQ(sol.status, SolveStatus::infeasible);
}

TEST(MomentSdp, EqualityOutsidePsdRangeIsInfeasible) {
  auto p = unit_off_diagonal();
  p.equalities = {{{{0, 1.0}}, 2.0, "v"}};
  const auto sol = InteriorPointBackend().solve(p, {});
  EXPECT_EQ(sol.status, SolveStatus::infeasible) << sol.message;
}

TEST(MomentSdp, JsonRoundTrip) {
  auto p = unit_off_diagonal();
  p.equalities = {{{{0, 1.0}}, 0.5, "half"}};
  p.metadata = {{"kind", "test"}};
  const auto q = sdp_problem_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(to_json(q), to_json(p));
  const auto sol = InteriorPointBackend().solve(p, {});
  const auto back = dual_solution_from_json(nlohmann::json::parse(to_json(sol).dump()));
  EXPECT_EQ(to_json(back), to_json(sol));
}

TEST(MomentSdp, Deterministic) {
  const auto a = InteriorPointBackend().solve(unit_off_diagonal(), {});
  const auto b = InteriorPointBackend().solve(unit_off_diagonal(), {});
  EXPECT_EQ(a.primal_objective, b.primal_objective);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(MomentSdp, ScalingObjectiveScalesOptimum) {
  auto p = unit_off_diagonal();
  p.objective = {{0, 1000.0}};
  const auto sol = InteriorPointBackend().solve(p, {});
  ASSERT_TRUE(sol.usable()) << sol.message;
  EXPECT_NEAR(sol.primal_objective / 1000.0, 1.0, 1e-7);
}

TEST(MomentSdp, TraceOneExample) {
  const auto p = trace_one_example();
  const auto sol = InteriorPointBackend().solve(p, {});
  expect_certified(p, sol);
  EXPECT_NEAR(sol.primal_objective, 1.0, 1e-7);
  EXPECT_NEAR(sol.dual_objective, 1.0, 1e-7);
  ASSERT_EQ(sol.multipliers.size(), 1u);
  EXPECT_NEAR(sol.multipliers[0], 1.0, 1e-5);
}

TEST(MomentSdp, ConflictingTracesAreInfeasible) {
  auto p = trace_one_example();
  p.equalities.push_back({{{0, 1.0}, {2, 1.0}}, 2.0, "trace2"});
  const auto sol = InteriorPointBackend().solve(p, {});
  EXPECT_EQ(sol.status, SolveStatus::infeasible) << sol.message;
}

TEST(MomentSdp, ChshLevelOneIsTsirelson) {
  const Scenario s({2, 2}, {2, 2});
  const auto p =
      build_npa_optimize(s, 1, parse_expression("C(0,0)+C(0,1)+C(1,0)-C(1,1)", s), Sense::maximize);
  const auto sol = InteriorPointBackend().solve(p, {});
  expect_certified(p, sol);
  EXPECT_NEAR(sol.primal_objective, 2.0 * std::sqrt(2.0), 1e-6);
  EXPECT_NEAR(sol.dual_objective, 2.0 * std::sqrt(2.0), 1e-6);
}

TEST(MomentSdp, KktAndWeakDualityOnAllExamples) {
  const Scenario s({2, 2}, {2, 2});
  const auto chsh = parse_expression("C(0,0)+C(0,1)+C(1,0)-C(1,1)", s);
  std::vector<SdpProblem> problems{unit_off_diagonal(), trace_one_example()};
  auto mirrored = unit_off_diagonal();
  mirrored.sense = Sense::minimize;
  problems.push_back(mirrored);
  for (int level : {1, 2}) {
    problems.push_back(build_npa_optimize(s, level, chsh, Sense::maximize));
    problems.push_back(build_npa_optimize(s, level, chsh, Sense::minimize));
  }
  problems.push_back(build_npa_minentropy(s, 2, {{chsh, 2.5}}, {0, 0}));
  problems.push_back(build_bff_node(s, 2, {{chsh, 2.5}}, {0, 0}, 0.5));
  for (const auto& p : problems) {
    SCOPED_TRACE(p.metadata.dump());
    const auto sol = InteriorPointBackend().solve(p, {});
    expect_certified(p, sol);
    EXPECT_LT(sol.duality_gap, 1e-5);
  }
}

TEST(MomentSdp, RepeatedSolvesAreBitIdentical) {
  const Scenario s({2, 2}, {2, 2});
  const auto p = build_npa_minentropy(s, 2, {{parse_expression("C(0,0)+C(0,1)+C(1,0)-C(1,1)", s), 2.6}}, {0, 0});
  const auto a = InteriorPointBackend().solve(p, {});
  const auto b = InteriorPointBackend().solve(p, {});
  auto ja = to_json(a);
  auto jb = to_json(b);
  ja.erase("solve_seconds");
  jb.erase("solve_seconds");
  EXPECT_EQ(ja, jb);
}

TEST(MomentSdp, ScalingObjectiveScalesMultipliers) {
  auto p = trace_one_example();
  const auto base = InteriorPointBackend().solve(p, {});
  p.objective = {{0, 3.0}};
  const auto scaled = InteriorPointBackend().solve(p, {});
  ASSERT_TRUE(base.usable() && scaled.usable());
  EXPECT_NEAR(scaled.primal_objective, 3.0 * base.primal_objective, 1e-6);
  EXPECT_NEAR(scaled.multipliers[0], 3.0 * base.multipliers[0], 1e-4);
}
