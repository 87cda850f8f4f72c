#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include <gtest/gtest.h>

#include "eatkit/eat.hpp"
#include "expect_error.hpp"
#include "qubit_behavior.hpp"

namespace eatkit {
namespace {

using fixtures::throws_code;

const Scenario kChsh({2, 2}, {2, 2});
const Scenario kMod({2, 2, 2}, {2, 2});

MinTradeoffInfo chsh_function(double lambda, double constant) {
  MinTradeoffInfo f;
  f.scenario = kChsh;
  f.expressions = {"C(0,0) + C(0,1) + C(1,0) - C(1,1)"};
  f.targets = {2.5};
  f.coefficients = {lambda};
  f.constant = constant;
  f.certificate_value = constant + lambda * 2.5;
  f.asymptotic_keyrate = f.certificate_value;
  f.level = 2;
  return f;
}

MinTradeoffInfo modchsh_function() {
  MinTradeoffRequest r;
  r.scenario = kMod;
  r.expressions = {"C(0,0)+C(0,1)+C(1,0)-C(1,1)+C(2,1)"};
  r.values = {3.8};
  r.spot = {2, 0};
  r.level = 2;
  return calculate_mintradeoff(r);
}

long double ln2l() { return std::log(2.0L); }

TEST(EpsilonV, FormulaOracle) {
  const double expected = (0.5 * std::log(2.0) / 2.0) * std::pow(std::log2(9.0) + std::sqrt(2.0), 2);
  EXPECT_NEAR(epsilon_v(0.5, 2.0, 0.0), expected, 1e-15);
}

TEST(EpsilonV, ModChshParametersHighPrecision) {
  const long double beta = std::ldexp(1.0L, -21);
  const long double var = 831038.5932731765L;
  const long double inner = std::log2(33.0L) + std::sqrt(var + 2.0L);
  const long double oracle = beta * ln2l() / 2.0L * inner * inner;
  EXPECT_NEAR(epsilon_v(std::ldexp(1.0, -21), 4.0, 831038.5932731765), static_cast<double>(oracle),
              1e-12 * static_cast<double>(oracle));
}

TEST(EpsilonV, RejectsBetaOutOfRange) {
  EXPECT_TRUE(throws_code([] { epsilon_v(0.0, 4, 1); }, "eat.beta"));
  EXPECT_TRUE(throws_code([] { epsilon_v(1.0, 4, 1); }, "eat.beta"));
  EXPECT_TRUE(throws_code([] { epsilon_k(1.5, 4, 1); }, "eat.beta"));
  EXPECT_TRUE(throws_code([] { epsilon_omega(-0.5, 0.9, 1e-9); }, "eat.beta"));
}

TEST(EpsilonK, FormulaOracle) {
  const double theta1 = 0.25 / (6.0 * 0.125 * std::log(2.0));
  const double theta2 = std::sqrt(2.0);
  const double theta3 = std::pow(std::log(2.0 + std::exp(2.0)), 3);
  EXPECT_NEAR(epsilon_k(0.5, 2.0, 0.0), theta1 * theta2 * theta3, 1e-14);
}

TEST(EpsilonK, ModChshParametersTenDigits) {
  const long double beta = std::ldexp(1.0L, -21);
  const long double x = 2.0L + 66.262L;
  const long double theta1 = beta * beta / (6.0L * std::pow(1.0L - beta, 3) * ln2l());
  const long double theta2 = std::pow(2.0L, beta * x);
  const long double theta3 = std::pow(std::log(std::pow(2.0L, x) + std::exp(2.0L)), 3);
  const double oracle = static_cast<double>(theta1 * theta2 * theta3);
  EXPECT_NEAR(epsilon_k(std::ldexp(1.0, -21), 4.0, 66.262), oracle, 1e-10 * oracle);
}

TEST(EpsilonK, LargeDiameterStaysFinite) {
  const double v = epsilon_k(std::ldexp(1.0, -30), 4.0, 5000.0);
  EXPECT_TRUE(std::isfinite(v));
  // ln^3(2^x + e^2) ~ (x ln 2)^3 here
  const long double beta = std::ldexp(1.0L, -30);
  const long double x = 5002.0L;
  const long double oracle = beta * beta / (6.0L * std::pow(1.0L - beta, 3) * ln2l()) *
                             std::pow(2.0L, beta * x) * std::pow(x * ln2l(), 3);
  EXPECT_NEAR(v, static_cast<double>(oracle), 1e-12 * static_cast<double>(oracle));
}

TEST(EpsilonOmega, Examples) {
  // p_omega * eps_s = 1/2 gives 3 / beta
  EXPECT_DOUBLE_EQ(epsilon_omega(0.25, 1.0, 0.5), 12.0);
  EXPECT_DOUBLE_EQ(epsilon_omega(0.5, 0.5, 1.0 - 0x1p-53) , (1.0 - 2.0 * std::log2(0.5 * (1.0 - 0x1p-53))) / 0.5);
  const double v = epsilon_omega(std::ldexp(1.0, -21), 0.99, 1e-12);
  EXPECT_NEAR(v / std::ldexp(1.0, 21), 1.0 - 2.0 * std::log2(9.9e-13), 1e-10);
  EXPECT_NEAR(v, 1.693e8, 0.001e8);
  EXPECT_GT(epsilon_omega(0.1, 0.9, 1e-6), epsilon_omega(0.2, 0.9, 1e-6));
  EXPECT_TRUE(throws_code([] { epsilon_omega(0.5, 1.0, 1.0); }, "eat.p_omega_eps_s"));
}

TEST(EffectiveRounds, Examples) {
  EXPECT_EQ(effective_rounds(3600.0, 1e6, 0.01, 0.0), 3.6e9);
  EXPECT_EQ(effective_rounds(10.0, 1e9, 0.0, 1e-3), 1e10);
  EXPECT_LT(effective_rounds(10.0, 1e9, 0.1, 2e-9), effective_rounds(10.0, 1e9, 0.1, 1e-9));
  EXPECT_EQ(effective_rounds(1.0, 1000.0, 0.5, 0.001), std::floor(1.0 / (0.001 + 0.001)));
}

TEST(Consumption, Examples) {
  EXPECT_EQ(consumption_per_round(kMod, 0.01).pxpy_bits_per_test_round, std::log2(6.0));
  EXPECT_NEAR(consumption_per_round(kMod, 0.01).pxpy_bits_per_test_round, 2.584962500721156, 1e-15);
  EXPECT_EQ(consumption_per_round(kChsh, 0.3).pxpy_bits_per_test_round, 2.0);
  EXPECT_DOUBLE_EQ(consumption_per_round(kChsh, 0.5).selection_bits_per_round, 1.0);
}

TEST(EatBound, LimitsAndClamping) {
  TradeoffStats st;
  EatParameters p;
  p.beta = 1e-300;
  const auto b = eat_bound(0.7, 1e6, p, st);
  EXPECT_EQ(b.n_t, 0.7e6);
  EXPECT_LT(b.n_eps_v, 1e-290);
  EXPECT_EQ(b.n_eps_k, 0.0);
  EXPECT_EQ(b.n_t - b.n_eps_v - b.n_eps_k, 0.7e6);

  p.beta = 0.01;
  EXPECT_LE(eat_bound(0.0, 1e6, p, st).bound, 0.0);
  EXPECT_EQ(net_gain(-5.0, p, {}), 0.0);
}

TEST(NetGain, ConsumptionIsSubtractedWhenRequested) {
  EatParameters p;
  p.chunk_time = 2.0;
  p.events_per_second = 100.0;
  p.gamma = 0.5;
  p.subtract_consumption = true;
  const Consumption c{2.0, 1.0};
  EXPECT_DOUBLE_EQ(net_gain(1000.0, p, c), 500.0 - 100.0 * (1.0 + 0.5 * 2.0));
  p.subtract_consumption = false;
  EXPECT_DOUBLE_EQ(net_gain(1000.0, p, c), 500.0);
}

TEST(CertificateRate, KeyDistributionNeedsHab) {
  auto f = chsh_function(0.3, 0.1);
  f.use_case = UseCase::key_distribution;
  EXPECT_TRUE(throws_code([&] { certificate_rate(f, std::nullopt); }, "eat.hab"));
  EXPECT_DOUBLE_EQ(certificate_rate(f, 0.25), f.certificate_value - 0.25);
  f.hab[f.spot] = 0.1;
  EXPECT_DOUBLE_EQ(certificate_rate(f, std::nullopt), f.certificate_value - 0.1);
  f.use_case = UseCase::randomness_generation;
  EXPECT_DOUBLE_EQ(certificate_rate(f, 0.25), f.certificate_value);
}

TEST(SpotCheckLift, GammaOneIsIdentity) {
  const auto f = chsh_function(0.4, -0.2);
  const auto base = outcome_tradeoff(f);
  const auto lifted = lift(base, 1.0);
  EXPECT_EQ(lifted.values.values(), base.values.values());
  const auto stats = spot_check_lift(f, 1.0, InteriorPointBackend()).stats;
  double lo = base.max_base;
  for (double v : base.values.values()) lo = std::min(lo, v);
  EXPECT_DOUBLE_EQ(stats.d_f, base.max_base - lo);
}

TEST(SpotCheckLift, OutcomeValuesForChsh) {
  const auto base = outcome_tradeoff(chsh_function(0.4, -0.2));
  // f(delta_c) = constant + AS*BS*w(c)
  EXPECT_DOUBLE_EQ(base.values(0, 0, 0, 0), -0.2 + 4 * 0.4);
  EXPECT_DOUBLE_EQ(base.values(0, 1, 0, 0), -0.2 - 4 * 0.4);
  EXPECT_DOUBLE_EQ(base.values(0, 0, 1, 1), -0.2 - 4 * 0.4);
  EXPECT_DOUBLE_EQ(base.max_base, 1.4);
}

TEST(SpotCheckLift, ConstantFunctionHasNoSpread) {
  const auto f = chsh_function(0.0, 0.8);
  const auto r = spot_check_lift(f, 0.05, InteriorPointBackend());
  EXPECT_EQ(r.stats.d_f, 0.0);
  EXPECT_EQ(r.stats.var_f_gamma, 0.0);
  for (double v : r.lifted.values.values()) EXPECT_DOUBLE_EQ(v, 0.8);
}

TEST(SpotCheckLift, DiameterScalesInverselyWithGamma) {
  const auto f = chsh_function(0.4, -0.2);
  const InteriorPointBackend be;
  const double d1 = spot_check_lift(f, 1.0, be).stats.d_f;
  EXPECT_NEAR(spot_check_lift(f, 0.1, be).stats.d_f, d1 / 0.1, 1e-9);
  EXPECT_NEAR(spot_check_lift(f, 0.01, be).stats.d_f, d1 / 0.01, 1e-7);
}

TEST(SpotCheckLift, RejectsZeroGamma) {
  EXPECT_TRUE(throws_code([] { spot_check_lift(chsh_function(1, 0), 0.0, InteriorPointBackend()); }, "eat.gamma"));
}

TEST(SpotCheckLift, VarianceWithinRangeBoundAndAtLeastPointVariances) {
  std::mt19937_64 rng(61);
  const InteriorPointBackend be;
  for (double gamma : {1.0, 0.3, 0.05}) {
    const auto f = chsh_function(0.6, -0.9);
    const auto r = spot_check_lift(f, gamma, be);
    EXPECT_GE(r.stats.d_f, 0.0);
    EXPECT_GE(r.stats.var_f_gamma, 0.0);
    EXPECT_LE(r.stats.var_f_gamma, r.stats.d_f * r.stats.d_f / 4.0 + 1e-9);
    for (int i = 0; i < 10; ++i) {
      const auto p = fixtures::random_qubit_behavior(kChsh, rng);
      const double var = r.lifted.second_moment(p) - std::pow(r.lifted.expectation(p), 2);
      EXPECT_LE(var, r.stats.d_f * r.stats.d_f / 4.0 + 1e-9);
      EXPECT_GE(r.lifted.expectation(p), r.stats.min_f_gamma - 1e-9);
      EXPECT_LE(r.lifted.expectation(p), r.stats.max_f + 1e-9);
    }
  }
}

TEST(SpotCheckLift, MixtureIdentity) {
  std::mt19937_64 rng(62);
  std::uniform_real_distribution<double> u(0.001, 1.0);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    MinTradeoffInfo f;
    f.scenario = kMod;
    f.expressions = {"C(0,0)+C(0,1)+C(1,0)-C(1,1)+C(2,1)", "P(0,1|2,0) - 0.5 PA(1|1)"};
    f.coefficients = {coef(rng), coef(rng)};
    f.constant = coef(rng);
    const auto base = outcome_tradeoff(f);
    const auto lifted = lift(base, u(rng));
    const auto p = fixtures::random_qubit_behavior(kMod, rng);
    EXPECT_NEAR(lifted.expectation(p), f.evaluate(p), 1e-12 * (1.0 + std::abs(f.evaluate(p))));
    EXPECT_NEAR(base.expectation(p), f.evaluate(p), 1e-12 * (1.0 + std::abs(f.evaluate(p))));
    EXPECT_NEAR(evaluate_expression(mixture_mean_expression(lifted), p), lifted.expectation(p),
                1e-12 * (1.0 + std::abs(lifted.expectation(p))));
    EXPECT_NEAR(evaluate_expression(mixture_second_moment_expression(lifted), p), lifted.second_moment(p),
                1e-12 * (1.0 + lifted.second_moment(p)));
  }
}

TEST(EatProperties, BreakdownIdentityIsExact) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    EatParameters p;
    p.beta = std::ldexp(1.0, -1 - static_cast<int>(39 * u(rng)));
    p.p_omega = 0.5 + 0.5 * u(rng);
    p.eps_s = std::pow(10.0, -1 - 14 * u(rng));
    p.alphabet_size_ab = 2 + std::floor(8 * u(rng));
    TradeoffStats st;
    st.d_f = 100 * u(rng);
    st.var_f_gamma = st.d_f * st.d_f / 4 * u(rng);
    const double t = 2 * u(rng);
    const double n = std::floor(1e10 * u(rng)) + 1;
    const auto b = eat_bound(t, n, p, st);
    EXPECT_EQ(b.bound, b.n_t - b.n_eps_v - b.n_eps_k - b.eps_omega);
    EXPECT_EQ(b.n_t, n * t);
    EXPECT_EQ(b.n_eps_v, n * epsilon_v(p.beta, p.alphabet_size_ab, st.var_f_gamma));
    EXPECT_EQ(b.n_eps_k, n * epsilon_k(p.beta, p.alphabet_size_ab, st.d_f));
    EXPECT_EQ(b.eps_omega, epsilon_omega(p.beta, p.p_omega, p.eps_s));
  }
}

TEST(EatProperties, EpsilonVIsLinearInBeta) {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double alphabet = 2 + std::floor(14 * u(rng));
    const double var = 1e4 * u(rng);
    const double slope = epsilon_v(0.5, alphabet, var) / 0.5;
    for (int k = 2; k <= 40; k += 3) {
      const double beta = std::ldexp(1.0, -k) * (0.5 + u(rng));
      EXPECT_NEAR(epsilon_v(beta, alphabet, var), slope * beta, 1e-13 * slope * beta);
    }
  }
}

TEST(EatProperties, EpsilonKIsQuadraticForSmallBeta) {
  for (double d_f : {0.0, 1.0, 66.262, 1e4}) {
    const double lo = std::log(epsilon_k(std::ldexp(1.0, -30), 4.0, d_f));
    const double hi = std::log(epsilon_k(std::ldexp(1.0, -20), 4.0, d_f));
    const double slope = (hi - lo) / (10.0 * std::log(2.0));
    EXPECT_NEAR(slope, 2.0, 0.05) << "d_f = " << d_f;
  }
}

TEST(EatProperties, EpsilonOmegaClosedForm) {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double beta = std::max(1e-12, u(rng)) * 0.999;
    const double p_omega = std::max(1e-6, u(rng));
    const double eps_s = std::pow(10.0, -20 * u(rng)) * 0.999;
    // natural-log form, extended precision
    const long double oracle = (1.0L - 2.0L * std::log(static_cast<long double>(p_omega) * eps_s) / ln2l()) /
                               static_cast<long double>(beta);
    const double v = epsilon_omega(beta, p_omega, eps_s);
    EXPECT_NEAR(v, static_cast<double>(oracle), 1e-12 * std::abs(static_cast<double>(oracle)));
  }
}

TEST(EatProperties, CorrectionsVanishAndBlowUpAtSmallBeta) {
  EXPECT_LT(epsilon_v(1e-200, 4, 100), 1e-195);
  EXPECT_LT(epsilon_k(1e-200, 4, 100), 1e-300);
  EXPECT_GT(epsilon_omega(1e-200, 0.99, 1e-12), 1e200);
}

TEST(Sweep, BestIsMaximumAndGridSupersetNeverLoses) {
  const auto f = chsh_function(0.9, -1.6);
  SweepRequest r;
  r.chunk_times = {60.0, 600.0};
  r.events_per_second = {1e5, 1e7};
  r.gammas = {0.05, 0.2};
  r.p_omega = {0.9, 0.99};
  r.min_log2_inv_beta = 8;
  r.max_log2_inv_beta = 20;
  const InteriorPointBackend be;
  const auto narrow = sweep(f, r, be);
  EXPECT_EQ(narrow.cells.size(), 2u * 2 * 1 * 2 * 2 * 13);
  for (const auto& c : narrow.cells) EXPECT_LE(c.net_gain, narrow.best_cell().net_gain);
  r.min_log2_inv_beta = 1;
  r.max_log2_inv_beta = 40;
  const auto wide = sweep(f, r, be);
  EXPECT_GE(wide.best_cell().net_gain, narrow.best_cell().net_gain);
  EXPECT_EQ(wide.best_per_combination().size(), 16u);
}

TEST(Sweep, DeterministicAndSerializable) {
  const auto f = chsh_function(0.9, -1.6);
  SweepRequest r;
  r.gammas = {0.1, 0.1};
  const InteriorPointBackend be;
  const auto a = sweep(f, r, be);
  const auto b = sweep(f, r, be);
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(to_csv(a), to_csv(b));
  const auto half = a.cells.size() / 2;
  for (std::size_t i = 0; i < half; ++i) EXPECT_EQ(to_json(a.cells[i]), to_json(a.cells[i + half]));
  const auto csv = to_csv(a);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), a.cells.size() + 1);
  EXPECT_EQ(sweep_request_from_json(to_json(r)).gammas, r.gammas);
}

TEST(Sweep, NetGainNeverExceedsAsymptoticRate) {
  const auto f = chsh_function(0.9, -1.6);
  SweepRequest r;
  r.chunk_times = {1.0, 100.0, 1e4};
  r.events_per_second = {1e3, 1e6, 1e9};
  r.gammas = {0.01, 0.5, 1.0};
  const auto res = sweep(f, r, InteriorPointBackend());
  for (const auto& c : res.cells) EXPECT_LE(c.net_gain, c.params.events_per_second * res.asymptotic_rate);
}

TEST(Sweep, BetaProfileIsUnimodal) {
  const auto f = chsh_function(0.9, -1.6);
  SweepRequest r;
  r.chunk_times = {10.0, 3600.0};
  r.events_per_second = {1e6, 1e9};
  r.gammas = {0.01, 0.1};
  const auto res = sweep(f, r, InteriorPointBackend());
  // Profiles are logged rather than asserted: clamping at zero makes ties.
  for (std::size_t start = 0; start < res.cells.size(); start += 40) {
    int turns = 0;
    for (std::size_t i = start + 2; i < start + 40; ++i) {
      const double d1 = res.cells[i - 1].breakdown.bound - res.cells[i - 2].breakdown.bound;
      const double d2 = res.cells[i].breakdown.bound - res.cells[i - 1].breakdown.bound;
      if (d1 < 0 && d2 > 0) ++turns;
    }
    if (turns > 0) {
      std::cout << "non-unimodal beta profile:";
      for (std::size_t i = start; i < start + 40; ++i) std::cout << ' ' << res.cells[i].breakdown.bound;
      std::cout << '\n';
    }
  }
  SUCCEED();
}

TEST(Sweep, KeyDistributionSubtractsHab) {
  auto f = chsh_function(0.9, -1.6);
  f.use_case = UseCase::key_distribution;
  SweepRequest r;
  EXPECT_TRUE(throws_code([&] { sweep(f, r, InteriorPointBackend()); }, "eat.hab"));
  r.hab = 0.05;
  const auto res = sweep(f, r, InteriorPointBackend());
  EXPECT_DOUBLE_EQ(res.asymptotic_rate, f.certificate_value - 0.05);
  EXPECT_DOUBLE_EQ(res.best_cell().breakdown.t, f.certificate_value - 0.05);
}

TEST(Sweep, EmptyListsAreRejected) {
  SweepRequest r;
  r.gammas.clear();
  EXPECT_TRUE(throws_code([&] { sweep(chsh_function(1, 0), r, InteriorPointBackend()); }, "sweep.empty"));
}

TEST(ModChshRates, ConsumptionAndBestBeta) {
  const auto f = modchsh_function();
  const auto res = sweep(f, SweepRequest{}, *default_backend());
  EXPECT_EQ(res.pxpy_bits, std::log2(6.0));
  EXPECT_NEAR(res.best_cell().log2_inv_beta, 21, 1);
  const auto dict = parameter_dictionary(res.best_cell(), res, f);
  EXPECT_TRUE(dict.at("hab").is_null());
  EXPECT_EQ(dict.at("subtract_consumption_for_test_rounds"), false);
}

TEST(ModChshRates, NetGainMatchesReference) {
  const auto res = sweep(modchsh_function(), SweepRequest{}, *default_backend());
  EXPECT_NEAR(res.best_cell().net_gain, 947239.7510144893, 0.01 * 947239.7510144893);
}

TEST(ModChshRates, DiameterMatchesReference) {
  const auto res = sweep(modchsh_function(), SweepRequest{}, *default_backend());
  EXPECT_NEAR(res.best_cell().d_f, 66.26207295685808, 0.01 * 66.26207295685808);
}

}  // namespace
}  // namespace eatkit
