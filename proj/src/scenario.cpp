#include "eatkit/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eatkit/error.hpp"

namespace eatkit {

namespace {

void check_config(const std::vector<int>& config, const char* name) {
  if (config.empty()) {
    throw validation_error("scenario.empty", std::string(name) + " must list at least one setting");
  }
  for (std::size_t i = 0; i < config.size(); ++i) {
    if (config[i] < 2) {
      std::ostringstream os;
      os << name << "[" << i << "] = " << config[i] << ": every measurement needs at least 2 outcomes";
      throw validation_error("scenario.outcomes", os.str());
    }
  }
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << ']';
  return os.str();
}

double plogp(double p) { return p > 0.0 ? p * std::log2(p) : 0.0; }

}  // namespace

Scenario::Scenario(std::vector<int> a_config, std::vector<int> b_config)
    : a_config_(std::move(a_config)), b_config_(std::move(b_config)) {
  check_config(a_config_, "A_config");
  check_config(b_config_, "B_config");
}

int Scenario::max_alice_outcomes() const noexcept {
  return a_config_.empty() ? 0 : *std::max_element(a_config_.begin(), a_config_.end());
}

int Scenario::max_bob_outcomes() const noexcept {
  return b_config_.empty() ? 0 : *std::max_element(b_config_.begin(), b_config_.end());
}

Scenario Scenario::extended_to(int x, int y) const {
  auto a = a_config_;
  auto b = b_config_;
  while (static_cast<int>(a.size()) <= x) a.push_back(2);
  while (static_cast<int>(b.size()) <= y) b.push_back(2);
  return Scenario(std::move(a), std::move(b));
}

std::string Scenario::to_string() const {
  return "A_config=" + join(a_config_) + " B_config=" + join(b_config_);
}

BehaviorDistribution::BehaviorDistribution(Scenario scenario) : scenario_(std::move(scenario)) {
  std::size_t offset = 0;
  for (int x = 0; x < scenario_.alice_settings(); ++x) {
    for (int y = 0; y < scenario_.bob_settings(); ++y) {
      offsets_.push_back(offset);
      offset += static_cast<std::size_t>(scenario_.alice_outcomes(x) * scenario_.bob_outcomes(y));
    }
  }
  table_.assign(offset, 0.0);
}

std::size_t BehaviorDistribution::index(int a, int b, int x, int y) const {
  if (x < 0 || x >= scenario_.alice_settings() || y < 0 || y >= scenario_.bob_settings() || a < 0 ||
      a >= scenario_.alice_outcomes(x) || b < 0 || b >= scenario_.bob_outcomes(y)) {
    std::ostringstream os;
    os << "P(" << a << "," << b << "|" << x << "," << y << ") is outside " << scenario_.to_string();
    throw validation_error("behavior.index", os.str());
  }
  const auto pair = static_cast<std::size_t>(x * scenario_.bob_settings() + y);
  return offsets_[pair] + static_cast<std::size_t>(a * scenario_.bob_outcomes(y) + b);
}

double BehaviorDistribution::normalization_error() const {
  double worst = 0.0;
  for (int x = 0; x < scenario_.alice_settings(); ++x) {
    for (int y = 0; y < scenario_.bob_settings(); ++y) {
      double s = 0.0;
      for (int a = 0; a < scenario_.alice_outcomes(x); ++a)
        for (int b = 0; b < scenario_.bob_outcomes(y); ++b) s += (*this)(a, b, x, y);
      worst = std::max(worst, std::abs(1.0 - s));
    }
  }
  return worst;
}

bool BehaviorDistribution::nonnegative() const {
  return std::all_of(table_.begin(), table_.end(), [](double v) { return v >= 0.0; });
}

void BehaviorDistribution::check_valid(double tol) const {
  if (!nonnegative()) throw validation_error("behavior.negative", "behavior has negative entries");
  if (const double err = normalization_error(); err > tol) {
    std::ostringstream os;
    os << "behavior is not normalized (max deviation " << err << ")";
    throw validation_error("behavior.normalization", os.str());
  }
}

SignalingReport signaling_report(const BehaviorDistribution& p) {
  const auto& s = p.scenario();
  SignalingReport report;
  for (int x = 0; x < s.alice_settings(); ++x) {
    for (int a = 0; a < s.alice_outcomes(x); ++a) {
      std::vector<double> m;
      for (int y = 0; y < s.bob_settings(); ++y) {
        double v = 0.0;
        for (int b = 0; b < s.bob_outcomes(y); ++b) v += p(a, b, x, y);
        m.push_back(v);
      }
      for (int y = 1; y < s.bob_settings(); ++y) {
        const double d = std::abs(m[static_cast<std::size_t>(y)] - m[0]);
        if (d > report.max_discrepancy) report = {d, 'A', a, x, 0, y};
      }
    }
  }
  for (int y = 0; y < s.bob_settings(); ++y) {
    for (int b = 0; b < s.bob_outcomes(y); ++b) {
      std::vector<double> m;
      for (int x = 0; x < s.alice_settings(); ++x) {
        double v = 0.0;
        for (int a = 0; a < s.alice_outcomes(x); ++a) v += p(a, b, x, y);
        m.push_back(v);
      }
      for (int x = 1; x < s.alice_settings(); ++x) {
        const double d = std::abs(m[static_cast<std::size_t>(x)] - m[0]);
        if (d > report.max_discrepancy) report = {d, 'B', b, y, 0, x};
      }
    }
  }
  return report;
}

MarginalSet marginals(const BehaviorDistribution& p, const MarginalOptions& options) {
  const auto& s = p.scenario();
  MarginalSet out;
  out.convention = options.convention;
  out.signaling = signaling_report(p);
  if (options.strict && out.signaling.max_discrepancy > options.signaling_tolerance) {
    const auto& r = out.signaling;
    std::ostringstream os;
    os << "no-signaling violated by " << r.max_discrepancy << ": P" << r.party << "(" << r.outcome << "|"
       << r.setting << ") differs between partner settings " << r.partner_setting << " and "
       << r.other_partner_setting;
    throw validation_error("behavior.signaling", os.str());
  }
  const bool average = options.convention == MarginalConvention::partner_average;
  for (int x = 0; x < s.alice_settings(); ++x) {
    std::vector<double> col(static_cast<std::size_t>(s.alice_outcomes(x)), 0.0);
    const int ys = average ? s.bob_settings() : 1;
    for (int y = 0; y < ys; ++y)
      for (int a = 0; a < s.alice_outcomes(x); ++a)
        for (int b = 0; b < s.bob_outcomes(y); ++b) col[static_cast<std::size_t>(a)] += p(a, b, x, y) / ys;
    out.alice.push_back(std::move(col));
  }
  for (int y = 0; y < s.bob_settings(); ++y) {
    std::vector<double> col(static_cast<std::size_t>(s.bob_outcomes(y)), 0.0);
    const int xs = average ? s.alice_settings() : 1;
    for (int x = 0; x < xs; ++x)
      for (int a = 0; a < s.alice_outcomes(x); ++a)
        for (int b = 0; b < s.bob_outcomes(y); ++b) col[static_cast<std::size_t>(b)] += p(a, b, x, y) / xs;
    out.bob.push_back(std::move(col));
  }
  return out;
}

double correlator(const BehaviorDistribution& p, int x, int y) {
  const auto& s = p.scenario();
  if (!s.binary_alice(x) || !s.binary_bob(y)) {
    std::ostringstream os;
    os << "correlator C(" << x << "," << y << ") needs binary measurements";
    throw validation_error("behavior.non_binary", os.str());
  }
  return p(0, 0, x, y) - p(0, 1, x, y) - p(1, 0, x, y) + p(1, 1, x, y);
}

BehaviorDistribution uniform_behavior(const Scenario& scenario) {
  BehaviorDistribution p(scenario);
  for (int x = 0; x < scenario.alice_settings(); ++x)
    for (int y = 0; y < scenario.bob_settings(); ++y) {
      const double v = 1.0 / (scenario.alice_outcomes(x) * scenario.bob_outcomes(y));
      for (int a = 0; a < scenario.alice_outcomes(x); ++a)
        for (int b = 0; b < scenario.bob_outcomes(y); ++b) p(a, b, x, y) = v;
    }
  return p;
}

double conditional_entropy_ab(const BehaviorDistribution& p, int x, int y) {
  const auto& s = p.scenario();
  double joint = 0.0;
  double bob = 0.0;
  for (int b = 0; b < s.bob_outcomes(y); ++b) {
    double pb = 0.0;
    for (int a = 0; a < s.alice_outcomes(x); ++a) {
      joint -= plogp(p(a, b, x, y));
      pb += p(a, b, x, y);
    }
    bob -= plogp(pb);
  }
  return std::max(0.0, joint - bob);
}

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

}  // namespace eatkit
