#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rpr/classifier.hpp"
#include "rpr/dataset.hpp"
#include "rpr/env.hpp"

namespace rpr {

/// Partition index per state instance. Ignored instances carry kIgnored and
/// belong to no partition.
struct ClusterAssignment {
  static constexpr std::size_t kIgnored = std::numeric_limits<std::size_t>::max();

  std::vector<std::size_t> partition;
  std::size_t partition_count = 0;
  std::optional<std::size_t> terminal_partition;

  std::size_t size() const { return partition.size(); }
  bool ignored(std::size_t instance) const { return partition.at(instance) == kIgnored; }
  std::size_t ignored_count() const;
  /// Instances per partition.
  std::vector<std::size_t> sizes() const;
  /// Throws ConfigError on out-of-range indices or empty partitions.
  void validate() const;
};

/// Renumbers partitions by first appearance in instance order and drops
/// partitions left without members.
ClusterAssignment canonicalize(ClusterAssignment c);

/// Same set partition and same ignored instances, labels aside.
bool same_partition(const ClusterAssignment& a, const ClusterAssignment& b);

/// Linear successor feature model over the partitions of a clustering.
struct Lsfm {
  double gamma = 0.9;
  std::vector<Eigen::VectorXd> w;      // per action, length n
  std::vector<Eigen::MatrixXd> M;      // per action, n x n, row-stochastic
  Eigen::MatrixXd M_bar;
  Eigen::MatrixXd F;
  std::vector<Eigen::MatrixXd> F_a;
  std::optional<std::size_t> terminal_partition;

  std::size_t partition_count() const { return static_cast<std::size_t>(M_bar.rows()); }
  std::size_t action_count() const { return M.size(); }
  /// max |(I - gamma M_bar) F - I|
  double f_residual() const;
  /// max over actions of |F_a - (I + gamma M_a F)|
  double f_a_residual() const;
};

/// Mean reward per (partition, action) over transitions whose source is not
/// ignored. Pairs without data get 0 and a warning; terminal rows are 0.
std::vector<Eigen::VectorXd> estimate_reward_vectors(const TrajectoryDataset& data, const ClusterAssignment& c,
                                                     std::vector<std::string>* warnings = nullptr);

struct TransitionEstimate {
  std::vector<Eigen::MatrixXd> M;
  Eigen::MatrixXd M_bar;
};

/// Empirical partition transitions. Transitions touching an ignored instance
/// are skipped; rows without data become self-loops with a warning.
TransitionEstimate estimate_transition_matrices(const TrajectoryDataset& data, const ClusterAssignment& c,
                                                std::vector<std::string>* warnings = nullptr);

struct FMatrices {
  Eigen::MatrixXd F;
  std::vector<Eigen::MatrixXd> F_a;
};
FMatrices compute_f_matrices(const std::vector<Eigen::MatrixXd>& M, double gamma);

Lsfm build_lsfm(const TrajectoryDataset& data, const ClusterAssignment& c, double gamma,
                std::vector<std::string>* warnings = nullptr);

/// e_partition + gamma * F^T p, where p is the predicted next-partition
/// distribution. Row j of F is the discounted partition occupancy from j, so
/// the transpose mixes rows by p.
Eigen::VectorXd predict_sf(const Eigen::MatrixXd& F, std::size_t partition, const Eigen::VectorXd& next_distribution,
                           double gamma);

/// SF estimate for a dataset instance using the next-partition classifier.
Eigen::VectorXd predict_sf(const ClusterAssignment& c, const Eigen::MatrixXd& F, const Classifier& f_i,
                           const TrajectoryDataset& data, std::size_t instance, ActionId action, double gamma);

/// Monte Carlo estimate of sum_t gamma^t e_{c(s_t)} from hidden state `state`
/// after taking `action`, following `policy` afterwards. `c` ranges over the
/// hidden states of `env` including its terminal state, which is absorbing and
/// keeps contributing its feature until the horizon.
Eigen::VectorXd monte_carlo_sf(const Environment& env, const ClusterAssignment& c, const Policy& policy,
                               std::size_t state, ActionId action, double gamma, std::size_t horizon,
                               std::size_t rollouts, std::uint64_t seed);

/// One CSV per matrix with partition indices as the header row, plus lsfm_meta.csv.
void write_lsfm_bundle(const Lsfm& m, const std::filesystem::path& dir);
Lsfm read_lsfm_bundle(const std::filesystem::path& dir);

}  // namespace rpr
