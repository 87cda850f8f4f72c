#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eatkit/bell_expression.hpp"
#include "eatkit/scenario.hpp"
#include "eatkit/sdp.hpp"

namespace eatkit {

/// Generator of the operator algebra. Alice and Bob letters are projectors
/// M_{a|x}, N_{b|y} for every outcome but the last one of each setting.
/// Eve letters are general operators Z_k and their adjoints.
struct Letter {
  enum class Party : std::uint8_t { alice, bob, eve };

  Party party = Party::alice;
  int setting = 0;  // x, y, or Eve's operator index k
  int outcome = 0;  // unused for Eve
  bool adjoint = false;

  static Letter alice(int x, int a) { return {Party::alice, x, a, false}; }
  static Letter bob(int y, int b) { return {Party::bob, y, b, false}; }
  static Letter eve(int k, bool adjoint = false) { return {Party::eve, k, 0, adjoint}; }

  friend auto operator<=>(const Letter&, const Letter&) = default;
};

using Word = std::vector<Letter>;

std::string to_string(const Word& w);

/// Normal form: parties commute, so letters are grouped Alice, Bob, Eve
/// (order within each group kept). Projector rules collapse repeated
/// letters and annihilate orthogonal neighbours. Returns nullopt for zero.
std::optional<Word> canonicalize(Word w);

/// Adjoint of a canonical word (reversed within each party, Eve letters flipped).
Word adjoint(const Word& w);

/// Moments are real, so w and its adjoint share one variable; the key is the
/// smaller of the two.
Word moment_key(const Word& canonical);

/// Noncommutative polynomial with canonical words as keys.
using Polynomial = std::map<Word, double>;

Polynomial operator*(const Polynomial& p, const Polynomial& q);
Polynomial& operator+=(Polynomial& p, const Polynomial& q);
Polynomial scaled(const Polynomial& p, double s);

/// M_{a|x} (or N_{b|y}) with the last outcome written as 1 - sum of the others.
Polynomial alice_projector(const Scenario& s, int x, int a);
Polynomial bob_projector(const Scenario& s, int y, int b);

/// Behavior-level expression as an operator polynomial.
Polynomial lower_expression(const BellExpression& expr);

/// Settings each party actually needs: letters for unused settings can be
/// dropped without changing the relaxation's optimum.
struct LetterSelection {
  std::vector<int> alice_settings;
  std::vector<int> bob_settings;
  int eve_operators = 0;
};

std::vector<Letter> alphabet(const Scenario& s, const LetterSelection& sel);

/// Words of length <= level over the alphabet, canonical and deduplicated,
/// with the identity first.
struct MonomialBasis {
  std::vector<Word> words;
  std::map<Word, int> index;

  static MonomialBasis generate(const std::vector<Letter>& letters, int level);
  std::size_t size() const noexcept { return words.size(); }
};

/// Adds one moment matrix to an SdpProblem and maps words to its variables.
class MomentMatrix {
 public:
  /// Registers a new PSD block of the basis size in `problem`.
  MomentMatrix(SdpProblem& problem, const MonomialBasis& basis, const std::string& label);

  /// Variable holding <w> (w canonical); throws if the word does not occur
  /// in the matrix (level too low for the requested moment).
  int variable(const Word& w) const;
  /// Linear form of a polynomial over this matrix's moment variables.
  std::vector<std::pair<int, double>> linear_form(const Polynomial& p) const;

  int block() const noexcept { return block_; }
  std::size_t moments() const noexcept { return vars_.size(); }

 private:
  std::map<Word, int> vars_;
  int block_ = 0;
  std::string label_;
};

}  // namespace eatkit
