#include "eatkit/npa.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "eatkit/error.hpp"

namespace eatkit {

std::string to_string(const Word& w) {
  if (w.empty()) return "1";
  std::string out;
  for (const auto& l : w) {
    if (!out.empty()) out += " ";
    switch (l.party) {
      case Letter::Party::alice:
        out += "A" + std::to_string(l.outcome) + "|" + std::to_string(l.setting);
        break;
      case Letter::Party::bob:
        out += "B" + std::to_string(l.outcome) + "|" + std::to_string(l.setting);
        break;
      case Letter::Party::eve:
        out += "Z" + std::to_string(l.setting) + (l.adjoint ? "*" : "");
        break;
    }
  }
  return out;
}

std::optional<Word> canonicalize(Word w) {
  std::stable_sort(w.begin(), w.end(), [](const Letter& l, const Letter& r) { return l.party < r.party; });
  Word out;
  out.reserve(w.size());
  for (const auto& l : w) {
    if (l.party != Letter::Party::eve && !out.empty() && out.back().party == l.party &&
        out.back().setting == l.setting) {
      if (out.back().outcome == l.outcome) continue;  // idempotent
      return std::nullopt;                            // orthogonal
    }
    out.push_back(l);
  }
  return out;
}

Word adjoint(const Word& w) {
  Word out;
  out.reserve(w.size());
  auto it = w.begin();
  while (it != w.end()) {
    auto end = std::find_if(it, w.end(), [&](const Letter& l) { return l.party != it->party; });
    for (auto r = end; r != it;) {
      --r;
      Letter l = *r;
      if (l.party == Letter::Party::eve) l.adjoint = !l.adjoint;
      out.push_back(l);
    }
    it = end;
  }
  return out;
}

Word moment_key(const Word& canonical) {
  Word adj = adjoint(canonical);
  return std::min(canonical, adj);
}

Polynomial operator*(const Polynomial& p, const Polynomial& q) {
  Polynomial out;
  for (const auto& [wp, cp] : p) {
    for (const auto& [wq, cq] : q) {
      Word w = wp;
      w.insert(w.end(), wq.begin(), wq.end());
      if (auto c = canonicalize(std::move(w))) out[*c] += cp * cq;
    }
  }
  std::erase_if(out, [](const auto& kv) { return kv.second == 0.0; });
  return out;
}

Polynomial& operator+=(Polynomial& p, const Polynomial& q) {
  for (const auto& [w, c] : q) p[w] += c;
  std::erase_if(p, [](const auto& kv) { return kv.second == 0.0; });
  return p;
}

Polynomial scaled(const Polynomial& p, double s) {
  Polynomial out;
  if (s == 0.0) return out;
  for (const auto& [w, c] : p) out[w] = c * s;
  return out;
}

namespace {

Polynomial projector(int outcomes, int a, const auto& make) {
  if (a < outcomes - 1) return {{Word{make(a)}, 1.0}};
  Polynomial p{{Word{}, 1.0}};
  for (int o = 0; o < outcomes - 1; ++o) p[Word{make(o)}] = -1.0;
  return p;
}

}  // namespace

Polynomial alice_projector(const Scenario& s, int x, int a) {
  return projector(s.alice_outcomes(x), a, [x](int o) { return Letter::alice(x, o); });
}

Polynomial bob_projector(const Scenario& s, int y, int b) {
  return projector(s.bob_outcomes(y), b, [y](int o) { return Letter::bob(y, o); });
}

Polynomial lower_expression(const BellExpression& expr) {
  const auto& s = expr.scenario();
  Polynomial out;
  for (const auto& t : expr.terms()) {
    const auto& at = t.atom;
    Polynomial term;
    switch (at.kind) {
      case BellAtom::Kind::correlator:
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            term += scaled(alice_projector(s, at.x, a) * bob_projector(s, at.y, b), (a + b) % 2 ? -1.0 : 1.0);
        break;
      case BellAtom::Kind::joint:
        term = alice_projector(s, at.x, at.a) * bob_projector(s, at.y, at.b);
        break;
      case BellAtom::Kind::marginal_a:
        term = alice_projector(s, at.x, at.a);
        break;
      case BellAtom::Kind::marginal_b:
        term = bob_projector(s, at.y, at.b);
        break;
      case BellAtom::Kind::constant:
        term = {{Word{}, 1.0}};
        break;
    }
    out += scaled(term, t.coefficient);
  }
  return out;
}

std::vector<Letter> alphabet(const Scenario& s, const LetterSelection& sel) {
  std::vector<Letter> out;
  for (int x : sel.alice_settings)
    for (int a = 0; a < s.alice_outcomes(x) - 1; ++a) out.push_back(Letter::alice(x, a));
  for (int y : sel.bob_settings)
    for (int b = 0; b < s.bob_outcomes(y) - 1; ++b) out.push_back(Letter::bob(y, b));
  for (int k = 0; k < sel.eve_operators; ++k) {
    out.push_back(Letter::eve(k, false));
    out.push_back(Letter::eve(k, true));
  }
  return out;
}

MonomialBasis MonomialBasis::generate(const std::vector<Letter>& letters, int level) {
  if (level < 1) throw validation_error("relaxation.level", "relaxation level must be at least 1");
  MonomialBasis basis;
  auto add = [&](const Word& w) {
    if (basis.index.emplace(w, static_cast<int>(basis.words.size())).second) basis.words.push_back(w);
  };
  add(Word{});
  std::vector<Word> frontier{Word{}};
  for (int len = 1; len <= level; ++len) {
    std::vector<Word> next;
    for (const auto& w : frontier) {
      for (const auto& l : letters) {
        Word cand = w;
        cand.push_back(l);
        auto c = canonicalize(std::move(cand));
        if (!c || static_cast<int>(c->size()) != len || basis.index.contains(*c)) continue;
        add(*c);
        next.push_back(*c);
      }
    }
    frontier = std::move(next);
  }
  return basis;
}

MomentMatrix::MomentMatrix(SdpProblem& problem, const MonomialBasis& basis, const std::string& label)
    : label_(label) {
  block_ = static_cast<int>(problem.block_sizes.size());
  const int n = static_cast<int>(basis.size());
  problem.block_sizes.push_back(n);
  for (int i = 0; i < n; ++i) {
    const Word left = adjoint(basis.words[static_cast<std::size_t>(i)]);
    for (int j = i; j < n; ++j) {
      Word w = left;
      const auto& right = basis.words[static_cast<std::size_t>(j)];
      w.insert(w.end(), right.begin(), right.end());
      auto c = canonicalize(std::move(w));
      if (!c) continue;
      const Word key = moment_key(*c);
      auto it = vars_.find(key);
      if (it == vars_.end()) {
        const int v = problem.add_variable(label + "<" + to_string(key) + ">");
        it = vars_.emplace(key, v).first;
      }
      problem.lmi.push_back({it->second, block_, i, j, 1.0});
    }
  }
}

int MomentMatrix::variable(const Word& w) const {
  auto it = vars_.find(moment_key(w));
  if (it == vars_.end()) {
    throw validation_error("relaxation.level",
                           "moment <" + to_string(w) + "> does not occur in " + label_ + "; raise the relaxation level");
  }
  return it->second;
}

std::vector<std::pair<int, double>> MomentMatrix::linear_form(const Polynomial& p) const {
  std::map<int, double> acc;
  for (const auto& [w, c] : p) acc[variable(w)] += c;
  std::vector<std::pair<int, double>> out;
  for (const auto& [k, c] : acc)
    if (c != 0.0) out.emplace_back(k, c);
  return out;
}

}  // namespace eatkit
