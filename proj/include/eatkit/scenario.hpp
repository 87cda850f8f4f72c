#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace eatkit {

/// Bipartite Bell scenario: number of outcomes for every measurement setting
/// of Alice and Bob. Outcome counts may differ between settings.
class Scenario {
 public:
  Scenario() = default;
  /// Throws validation error if a list is empty or an entry is < 2.
  Scenario(std::vector<int> a_config, std::vector<int> b_config);

  const std::vector<int>& a_config() const noexcept { return a_config_; }
  const std::vector<int>& b_config() const noexcept { return b_config_; }

  int alice_settings() const noexcept { return static_cast<int>(a_config_.size()); }
  int bob_settings() const noexcept { return static_cast<int>(b_config_.size()); }
  int alice_outcomes(int x) const { return a_config_.at(static_cast<std::size_t>(x)); }
  int bob_outcomes(int y) const { return b_config_.at(static_cast<std::size_t>(y)); }
  /// AO / BO: largest outcome count (display metadata).
  int max_alice_outcomes() const noexcept;
  int max_bob_outcomes() const noexcept;

  bool binary_alice(int x) const { return alice_outcomes(x) == 2; }
  bool binary_bob(int y) const { return bob_outcomes(y) == 2; }

  /// Scenario with extra binary settings appended so that (x, y) is valid.
  Scenario extended_to(int x, int y) const;

  std::string to_string() const;

  friend bool operator==(const Scenario&, const Scenario&) = default;

 private:
  std::vector<int> a_config_;
  std::vector<int> b_config_;
};

/// Ragged table P(a,b|x,y), laid out setting pair by setting pair.
class BehaviorDistribution {
 public:
  BehaviorDistribution() = default;
  /// All entries zero.
  explicit BehaviorDistribution(Scenario scenario);

  const Scenario& scenario() const noexcept { return scenario_; }

  double operator()(int a, int b, int x, int y) const { return table_[index(a, b, x, y)]; }
  double& operator()(int a, int b, int x, int y) { return table_[index(a, b, x, y)]; }

  /// Raw storage, in the order produced by index().
  const std::vector<double>& values() const noexcept { return table_; }
  std::vector<double>& values() noexcept { return table_; }

  std::size_t index(int a, int b, int x, int y) const;
  std::size_t size() const noexcept { return table_.size(); }

  /// Largest |1 - sum_ab P(a,b|x,y)| over setting pairs.
  double normalization_error() const;
  bool nonnegative() const;

  /// Throws validation error when normalization or positivity fails.
  void check_valid(double tol = 1e-9) const;

 private:
  Scenario scenario_;
  std::vector<std::size_t> offsets_;  // per (x,y) block start
  std::vector<double> table_;
};

/// Largest violation of the no-signaling conditions and where it occurs.
struct SignalingReport {
  double max_discrepancy = 0.0;
  char party = 'A';  // party whose marginal depends on the partner setting
  int outcome = 0;
  int setting = 0;
  int partner_setting = 0;
  int other_partner_setting = 0;
};

SignalingReport signaling_report(const BehaviorDistribution& p);

enum class MarginalConvention {
  first_partner_setting,  // PA(a|x) = sum_b P(a,b|x,0)
  partner_average,        // average over the partner's settings
};

struct MarginalSet {
  std::vector<std::vector<double>> alice;  // alice[x][a]
  std::vector<std::vector<double>> bob;    // bob[y][b]
  MarginalConvention convention = MarginalConvention::first_partner_setting;
  SignalingReport signaling;
};

struct MarginalOptions {
  MarginalConvention convention = MarginalConvention::first_partner_setting;
  double signaling_tolerance = 1e-6;
  /// When set, signaling above tolerance throws instead of being reported.
  bool strict = false;
};

MarginalSet marginals(const BehaviorDistribution& p, const MarginalOptions& options = {});

/// Sum_{a,b} (-1)^{a+b} P(a,b|x,y); both measurements must be binary.
double correlator(const BehaviorDistribution& p, int x, int y);

BehaviorDistribution uniform_behavior(const Scenario& scenario);

/// H(A|B) in bits of the joint distribution P(.,.|x,y).
double conditional_entropy_ab(const BehaviorDistribution& p, int x, int y);

/// Binary entropy in bits; h(0) = h(1) = 0.
double binary_entropy(double p);

}  // namespace eatkit
