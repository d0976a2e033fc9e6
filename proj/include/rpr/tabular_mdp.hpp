#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace rpr {

/// Complete finite MDP: per-action transition matrices over ground states and
/// expected one-step rewards. Terminal states are absorbing with zero reward.
struct TabularMdp {
  std::size_t state_count = 0;
  std::size_t action_count = 0;
  std::vector<Eigen::MatrixXd> transition;  // [a](s, s')
  Eigen::MatrixXd reward;                   // (s, a), expected reward
  std::vector<bool> terminal;

  TabularMdp() = default;
  TabularMdp(std::size_t states, std::size_t actions);

  /// Throws ConfigError when rows are not stochastic or terminals not absorbing.
  void validate(double tol = 1e-9) const;
};

}  // namespace rpr
