#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "eatkit/scenario.hpp"

namespace eatkit {

/// One atom of a Bell expression.
///   C(x,y)       correlator (binary measurements only)
///   P(a,b|x,y)   joint probability
///   PA(a|x)      Alice marginal
///   PB(b|y)      Bob marginal
///   constant     the unit term; its value is carried by the coefficient
struct BellAtom {
  enum class Kind { correlator, joint, marginal_a, marginal_b, constant };

  Kind kind = Kind::constant;
  int a = 0;
  int b = 0;
  int x = 0;
  int y = 0;

  static BellAtom make_correlator(int x, int y) { return {Kind::correlator, 0, 0, x, y}; }
  static BellAtom make_joint(int a, int b, int x, int y) { return {Kind::joint, a, b, x, y}; }
  static BellAtom make_marginal_a(int a, int x) { return {Kind::marginal_a, a, 0, x, 0}; }
  static BellAtom make_marginal_b(int b, int y) { return {Kind::marginal_b, 0, b, 0, y}; }
  static BellAtom make_constant() { return {}; }

  bool is_constant() const noexcept { return kind == Kind::constant; }

  friend auto operator<=>(const BellAtom&, const BellAtom&) = default;
};

std::string to_string(const BellAtom& atom);

struct BellTerm {
  double coefficient = 0.0;
  BellAtom atom;

  friend bool operator==(const BellTerm&, const BellTerm&) = default;
};

/// Affine expression over a behavior. Terms are kept sorted with equal atoms
/// merged; non-constant terms whose coefficients cancel are dropped. An
/// expression with no remaining terms holds a single zero constant.
class BellExpression {
 public:
  BellExpression() = default;
  /// Validates every atom against the scenario and canonicalizes.
  BellExpression(std::vector<BellTerm> terms, Scenario scenario);

  const std::vector<BellTerm>& terms() const noexcept { return terms_; }
  const Scenario& scenario() const noexcept { return scenario_; }

  double constant() const noexcept;
  /// Number of non-constant atoms.
  std::size_t atom_count() const noexcept;

  friend bool operator==(const BellExpression&, const BellExpression&) = default;

 private:
  std::vector<BellTerm> terms_;
  Scenario scenario_;
};

/// Parses e.g. "C(0,0) + C(0,1) + C(1,0) - C(1,1)" or "2*P(0,0|1,1) - PA(1|0) + 0.5".
/// Coefficients may multiply atoms with '*' or by juxtaposition. Errors carry
/// the character offset of the failure.
BellExpression parse_expression(std::string_view text, const Scenario& scenario);

/// Round-trippable text form with full double precision.
std::string to_string(const BellExpression& expr);

double evaluate_expression(const BellExpression& expr, const BehaviorDistribution& behavior);

/// Linear functional form: sum_{abxy} weights(a,b,x,y) * P(a,b|x,y) + constant.
/// Marginals are lowered through the partner's setting 0.
struct CoefficientVector {
  BehaviorDistribution weights;
  double constant = 0.0;

  double apply(const BehaviorDistribution& p) const;
};

CoefficientVector expression_to_coefficient_vector(const BellExpression& expr);

}  // namespace eatkit
