#include "eatkit/bell_expression.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "eatkit/error.hpp"

namespace eatkit {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_atom(const BellAtom& atom, const Scenario& s) {
  auto fail = [&](const std::string& why) {
    throw validation_error("expression.index", to_string(atom) + ": " + why + " in " + s.to_string());
  };
  auto check_x = [&](int x) {
    if (x < 0 || x >= s.alice_settings()) fail("Alice setting " + std::to_string(x) + " out of range");
  };
  auto check_y = [&](int y) {
    if (y < 0 || y >= s.bob_settings()) fail("Bob setting " + std::to_string(y) + " out of range");
  };
  auto check_a = [&](int a, int x) {
    if (a < 0 || a >= s.alice_outcomes(x)) fail("Alice outcome " + std::to_string(a) + " out of range");
  };
  auto check_b = [&](int b, int y) {
    if (b < 0 || b >= s.bob_outcomes(y)) fail("Bob outcome " + std::to_string(b) + " out of range");
  };
  switch (atom.kind) {
    case BellAtom::Kind::correlator:
      check_x(atom.x);
      check_y(atom.y);
      if (!s.binary_alice(atom.x) || !s.binary_bob(atom.y)) {
        throw validation_error("expression.non_binary",
                               to_string(atom) + ": correlators need binary measurements on both sides");
      }
      break;
    case BellAtom::Kind::joint:
      check_x(atom.x);
      check_y(atom.y);
      check_a(atom.a, atom.x);
      check_b(atom.b, atom.y);
      break;
    case BellAtom::Kind::marginal_a:
      check_x(atom.x);
      check_a(atom.a, atom.x);
      break;
    case BellAtom::Kind::marginal_b:
      check_y(atom.y);
      check_b(atom.b, atom.y);
      break;
    case BellAtom::Kind::constant:
      break;
  }
}

class Parser {
 public:
  Parser(std::string_view text, const Scenario& scenario) : text_(text), scenario_(scenario) {}

  BellExpression parse() {
    std::vector<BellTerm> terms;
    skip_ws();
    if (at_end()) fail("empty expression");
    bool first = true;
    while (true) {
      skip_ws();
      double sign = 1.0;
      if (peek() == '+' || peek() == '-') {
        sign = peek() == '-' ? -1.0 : 1.0;
        ++pos_;
      } else if (!first) {
        fail("expected '+' or '-'");
      }
      first = false;
      skip_ws();
      terms.push_back(parse_term(sign));
      skip_ws();
      if (at_end()) break;
    }
    for (const auto& t : terms) check_atom(t.atom, scenario_);
    return BellExpression(std::move(terms), scenario_);
  }

 private:
  BellTerm parse_term(double sign) {
    // an optional sign directly on the number, e.g. "+ -2*C(0,0)"
    if (peek() == '-' || peek() == '+') {
      if (peek() == '-') sign = -sign;
      ++pos_;
      skip_ws();
    }
    double coefficient = 1.0;
    bool have_number = false;
    if (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.') {
      coefficient = parse_number();
      have_number = true;
      skip_ws();
      if (peek() == '*') {
        ++pos_;
        skip_ws();
        if (!std::isalpha(static_cast<unsigned char>(peek()))) fail("expected an atom after '*'");
      }
    }
    if (std::isalpha(static_cast<unsigned char>(peek()))) {
      return {sign * coefficient, parse_atom()};
    }
    if (!have_number) fail("expected a number or an atom");
    return {sign * coefficient, BellAtom::make_constant()};
  }

  double parse_number() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.')) ++pos_;
    if (!at_end() && (peek() == 'e' || peek() == 'E')) {
      std::size_t save = pos_++;
      if (!at_end() && (peek() == '+' || peek() == '-')) ++pos_;
      if (at_end() || !std::isdigit(static_cast<unsigned char>(peek()))) {
        pos_ = save;  // 'e' not followed by an exponent
      } else {
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
      }
    }
    double value = 0.0;
    const auto* first = text_.data() + start;
    const auto* last = text_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
      pos_ = start;
      fail("malformed number");
    }
    return value;
  }

  int parse_index() {
    skip_ws();
    const std::size_t start = pos_;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    if (start == pos_) fail("expected a non-negative integer index");
    int value = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (ec != std::errc()) {
      pos_ = start;
      fail("index too large");
    }
    skip_ws();
    return value;
  }

  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  BellAtom parse_atom() {
    const std::size_t start = pos_;
    while (!at_end() && std::isalpha(static_cast<unsigned char>(peek()))) ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);
    expect('(');
    BellAtom atom;
    if (name == "C") {
      const int x = parse_index();
      expect(',');
      const int y = parse_index();
      atom = BellAtom::make_correlator(x, y);
    } else if (name == "P") {
      const int a = parse_index();
      expect(',');
      const int b = parse_index();
      expect('|');
      const int x = parse_index();
      expect(',');
      const int y = parse_index();
      atom = BellAtom::make_joint(a, b, x, y);
    } else if (name == "PA" || name == "PB") {
      const int o = parse_index();
      expect('|');
      const int s = parse_index();
      atom = name == "PA" ? BellAtom::make_marginal_a(o, s) : BellAtom::make_marginal_b(o, s);
    } else {
      pos_ = start;
      fail("unknown atom '" + std::string(name) + "' (expected C, P, PA or PB)");
    }
    expect(')');
    return atom;
  }

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream os;
    os << "syntax error at position " << pos_ << ": " << what << " in \"" << text_ << "\"";
    throw validation_error("expression.syntax", os.str());
  }

  char peek() const { return at_end() ? '\0' : text_[pos_]; }
  bool at_end() const { return pos_ >= text_.size(); }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view text_;
  const Scenario& scenario_;
  std::size_t pos_ = 0;
};

double atom_value(const BellAtom& atom, const BehaviorDistribution& p) {
  const auto& s = p.scenario();
  switch (atom.kind) {
    case BellAtom::Kind::correlator:
      return correlator(p, atom.x, atom.y);
    case BellAtom::Kind::joint:
      return p(atom.a, atom.b, atom.x, atom.y);
    case BellAtom::Kind::marginal_a: {
      double v = 0.0;
      for (int b = 0; b < s.bob_outcomes(0); ++b) v += p(atom.a, b, atom.x, 0);
      return v;
    }
    case BellAtom::Kind::marginal_b: {
      double v = 0.0;
      for (int a = 0; a < s.alice_outcomes(0); ++a) v += p(a, atom.b, 0, atom.y);
      return v;
    }
    case BellAtom::Kind::constant:
      return 1.0;
  }
  return 0.0;
}

}  // namespace

std::string to_string(const BellAtom& atom) {
  const auto i = [](int v) { return std::to_string(v); };
  switch (atom.kind) {
    case BellAtom::Kind::correlator:
      return "C(" + i(atom.x) + "," + i(atom.y) + ")";
    case BellAtom::Kind::joint:
      return "P(" + i(atom.a) + "," + i(atom.b) + "|" + i(atom.x) + "," + i(atom.y) + ")";
    case BellAtom::Kind::marginal_a:
      return "PA(" + i(atom.a) + "|" + i(atom.x) + ")";
    case BellAtom::Kind::marginal_b:
      return "PB(" + i(atom.b) + "|" + i(atom.y) + ")";
    case BellAtom::Kind::constant:
      return "1";
  }
  return "?";
}

BellExpression::BellExpression(std::vector<BellTerm> terms, Scenario scenario) : scenario_(std::move(scenario)) {
  for (const auto& t : terms) check_atom(t.atom, scenario_);
  std::stable_sort(terms.begin(), terms.end(),
                   [](const BellTerm& l, const BellTerm& r) { return l.atom < r.atom; });
  for (const auto& t : terms) {
    if (!terms_.empty() && terms_.back().atom == t.atom) {
      terms_.back().coefficient += t.coefficient;
    } else {
      terms_.push_back(t);
    }
  }
  std::erase_if(terms_, [](const BellTerm& t) { return !t.atom.is_constant() && t.coefficient == 0.0; });
  if (terms_.empty()) terms_.push_back({0.0, BellAtom::make_constant()});
}

double BellExpression::constant() const noexcept {
  for (const auto& t : terms_)
    if (t.atom.is_constant()) return t.coefficient;
  return 0.0;
}

std::size_t BellExpression::atom_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(terms_.begin(), terms_.end(), [](const BellTerm& t) { return !t.atom.is_constant(); }));
}

BellExpression parse_expression(std::string_view text, const Scenario& scenario) {
  return Parser(text, scenario).parse();
}

std::string to_string(const BellExpression& expr) {
  std::string out;
  for (const auto& t : expr.terms()) {
    const double c = t.coefficient;
    const double mag = std::abs(c);
    if (out.empty()) {
      if (c < 0) out += "-";
    } else {
      out += c < 0 ? " - " : " + ";
    }
    if (t.atom.is_constant()) {
      out += format_double(mag);
    } else {
      if (mag != 1.0) out += format_double(mag) + "*";
      out += to_string(t.atom);
    }
  }
  return out;
}

double evaluate_expression(const BellExpression& expr, const BehaviorDistribution& behavior) {
  if (!(expr.scenario() == behavior.scenario())) {
    throw validation_error("expression.scenario_mismatch", "expression scenario " + expr.scenario().to_string() +
                                                               " differs from behavior scenario " +
                                                               behavior.scenario().to_string());
  }
  double v = 0.0;
  for (const auto& t : expr.terms()) v += t.coefficient * atom_value(t.atom, behavior);
  return v;
}

double CoefficientVector::apply(const BehaviorDistribution& p) const {
  const auto& w = weights.values();
  const auto& q = p.values();
  double v = constant;
  for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * q[i];
  return v;
}

CoefficientVector expression_to_coefficient_vector(const BellExpression& expr) {
  const auto& s = expr.scenario();
  CoefficientVector out{BehaviorDistribution(s), 0.0};
  auto& w = out.weights;
  for (const auto& t : expr.terms()) {
    const auto& at = t.atom;
    const double c = t.coefficient;
    switch (at.kind) {
      case BellAtom::Kind::correlator:
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) w(a, b, at.x, at.y) += ((a + b) % 2 ? -c : c);
        break;
      case BellAtom::Kind::joint:
        w(at.a, at.b, at.x, at.y) += c;
        break;
      case BellAtom::Kind::marginal_a:
        for (int b = 0; b < s.bob_outcomes(0); ++b) w(at.a, b, at.x, 0) += c;
        break;
      case BellAtom::Kind::marginal_b:
        for (int a = 0; a < s.alice_outcomes(0); ++a) w(a, at.b, 0, at.y) += c;
        break;
      case BellAtom::Kind::constant:
        out.constant += c;
        break;
    }
  }
  return out;
}

}  // namespace eatkit
