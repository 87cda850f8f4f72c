#pragma once

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "eatkit/scenario.hpp"

namespace eatkit::fixtures {

// Behavior of cos(theta)|00> + sin(theta)|11> with binary projective
// measurements in the x-z plane at the given angles.
inline BehaviorDistribution qubit_behavior(const Scenario& s, double theta, const std::vector<double>& alice_angles,
                                           const std::vector<double>& bob_angles) {
  using Eigen::Matrix2d;
  using Eigen::Matrix4d;
  using Eigen::Vector4d;
  auto projector = [](double angle, int outcome) {
    Matrix2d z;
    z << 1, 0, 0, -1;
    Matrix2d x;
    x << 0, 1, 1, 0;
    const Matrix2d obs = std::cos(angle) * z + std::sin(angle) * x;
    return Matrix2d(0.5 * (Matrix2d::Identity() + (outcome == 0 ? 1.0 : -1.0) * obs));
  };
  auto kron = [](const Matrix2d& a, const Matrix2d& b) {
    Matrix4d out;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
    return out;
  };
  Vector4d psi(std::cos(theta), 0.0, 0.0, std::sin(theta));
  BehaviorDistribution p(s);
  for (int x = 0; x < s.alice_settings(); ++x)
    for (int y = 0; y < s.bob_settings(); ++y)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const Matrix4d m = kron(projector(alice_angles[static_cast<std::size_t>(x)], a),
                                  projector(bob_angles[static_cast<std::size_t>(y)], b));
          p(a, b, x, y) = psi.dot(m * psi);
        }
  return p;
}

inline BehaviorDistribution random_qubit_behavior(const Scenario& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> theta(0.0, M_PI / 4.0);
  std::vector<double> a;
  std::vector<double> b;
  for (int x = 0; x < s.alice_settings(); ++x) a.push_back(angle(rng));
  for (int y = 0; y < s.bob_settings(); ++y) b.push_back(angle(rng));
  return qubit_behavior(s, theta(rng), a, b);
}

// Tsirelson-optimal strategy: CHSH = 2 sqrt 2.
inline BehaviorDistribution tsirelson_behavior(const Scenario& s) {
  return qubit_behavior(s, M_PI / 4.0, {0.0, M_PI / 2.0}, {M_PI / 4.0, -M_PI / 4.0});
}

}  // namespace eatkit::fixtures
