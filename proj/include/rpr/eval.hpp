#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rpr/classifier.hpp"
#include "rpr/dataset.hpp"
#include "rpr/lsfm.hpp"
#include "rpr/refine.hpp"
#include "rpr/tabular_mdp.hpp"

namespace rpr {

/// Representation network plus the latent reward and transition model.
struct LatentModel {
  Classifier representation;
  Lsfm lsfm;

  std::size_t classify(const Observation& obs) const;
  /// Throws ConfigError if the classifier and the LSFM disagree on sizes.
  void validate() const;
};

/// Latent model for a clustering of `data`: LSFM from the data plus a freshly
/// trained representation network.
LatentModel make_latent_model(const TrajectoryDataset& data, const ClusterAssignment& c, const RefineConfig& cfg);

/// Propagates the latent distribution: r_t = w_{a_t}^T d_t, d_{t+1} = M_{a_t}^T d_t.
std::vector<double> predict_reward_sequence(const Lsfm& lsfm, std::size_t start_partition,
                                            std::span<const ActionId> actions);
std::vector<double> predict_reward_sequence(const LatentModel& m, const Observation& s0,
                                            std::span<const ActionId> actions);

/// Per trajectory: mean over steps of |predicted - observed| reward, with the
/// prediction rolled out open loop from the first observation.
std::vector<double> reward_sequence_error(const LatentModel& m, const TrajectoryDataset& test);

double median(std::vector<double> values);

using Labeling = std::function<std::size_t(const Observation&)>;

/// Rows are ground-truth labels (sorted), columns the partitions plus a final
/// ignore column.
struct ConfusionMatrix {
  std::vector<std::size_t> labels;
  std::size_t partition_count = 0;
  Eigen::Matrix<std::size_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  std::size_t total() const { return counts.sum(); }
  std::size_t row_of(std::size_t label) const;
};

/// Counts every dataset instance under its assigned partition.
ConfusionMatrix confusion_matrix(const TrajectoryDataset& data, const ClusterAssignment& c, const Labeling& labeling);
/// Counts every dataset instance under the partition the model assigns it.
ConfusionMatrix confusion_matrix(const TrajectoryDataset& data, const LatentModel& m, const Labeling& labeling);

/// Share of instances whose partition column is dominated by their own group,
/// where `group` maps a ground label to a group (identity when empty). The
/// ignore column never counts as pure.
double purity(const ConfusionMatrix& cm, const std::function<std::size_t(std::size_t)>& group = {});
/// Share of instances outside the dominant partition column of their group.
double group_spread(const ConfusionMatrix& cm, const std::function<std::size_t(std::size_t)>& group = {});

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);
/// trajectory_id,mean_abs_error,iteration
void write_errors_csv(const std::vector<std::pair<std::size_t, std::vector<double>>>& per_iteration,
                      const std::filesystem::path& path);

/// Coarsest reward-predictive partition of a tabular MDP by block splitting.
/// Starts from terminal / non-terminal, splits on one-step expected rewards
/// (within reward_tol), then on block transition profiles (within
/// transition_tol) until stable. Blocks are numbered by their smallest state.
ClusterAssignment oracle_partition(const TabularMdp& mdp, double reward_tol = 1e-9, double transition_tol = 1e-9);

struct SubClusteringCheck {
  bool holds = true;
  std::optional<std::pair<std::size_t, std::size_t>> witness;
};

/// Whether c(s) != c(s~) implies c_star(s) != c_star(s~) for all non-ignored pairs.
SubClusteringCheck check_sub_clustering(const ClusterAssignment& c, const ClusterAssignment& c_star);

/// Phi(k, l) = 1 iff some instance has c(s) = k and c_star(s) = l.
Eigen::MatrixXd projection_matrix(const ClusterAssignment& c, const ClusterAssignment& c_star);

/// Exact SFs under the uniform random policy. Entry [a] is states x partitions;
/// row s is sum_t gamma^t E[e_{c(s_t)} | s_0 = s, a_0 = a].
std::vector<Eigen::MatrixXd> exact_sf(const TabularMdp& mdp, const ClusterAssignment& c, double gamma);

/// LSFM computed from a tabular model by averaging over the members of each partition.
Lsfm lsfm_from_mdp(const TabularMdp& mdp, const ClusterAssignment& c, double gamma);

/// Exact expected rewards r_1..r_n from ground state `s` under the action sequence.
std::vector<double> expected_reward_sequence(const TabularMdp& mdp, std::size_t s, std::span<const ActionId> actions);

struct RewardPredictiveCheck {
  double max_reward_error = 0.0;  // max |w_a(c(s)) - r(s, a)|
  double max_sf_error = 0.0;      // max ||row c(s) of F_a - psi(s, a)||_2
};

/// Deviations of an LSFM from the reward and SF conditions on a tabular MDP.
RewardPredictiveCheck check_reward_predictive(const TabularMdp& mdp, const ClusterAssignment& c, const Lsfm& lsfm);

}  // namespace rpr
