#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rpr/classifier.hpp"
#include "rpr/dataset.hpp"
#include "rpr/lsfm.hpp"

namespace rpr {

enum class Distance { kL1, kL2 };
std::string to_string(Distance d);
Distance parse_distance(const std::string& text);

struct RefineConfig {
  double eps_r = 0.5;
  double eps_psi = 1.0;
  double gamma = 0.9;
  /// Upper bound on refinement steps, the reward step included.
  std::size_t max_iterations = 20;
  double spurious_fraction = 0.01;
  double reward_bin_width = 0.0;
  Distance sf_distance = Distance::kL2;
  FitConfig reward_fit;
  FitConfig sf_fit;
  FitConfig representation_fit;
  /// Carry the hidden layers of the previous next-partition network forward.
  bool warm_start = true;
  /// Fit seeds are derived from this; the seeds inside the FitConfigs are unused.
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the field.
  void validate() const;
  /// Non-fatal notes, e.g. gamma and eps_psi outside the separation regime.
  std::vector<std::string> warnings() const;
};

struct RewardBins {
  double width = 0.0;
  std::vector<double> values;  // w_r
  std::vector<long long> keys;  // interval index per bin when width > 0
  /// Bin of a reward. Exact match in distinct-value mode; unseen rewards go
  /// to the nearest bin.
  std::size_t bin_of(double reward) const;
  std::size_t size() const { return values.size(); }
};

RewardBins bin_rewards(const TrajectoryDataset& data, double bin_width);

/// Non-terminal instances in one partition, terminal instances in another.
ClusterAssignment initial_clustering(const TrajectoryDataset& data);

/// Leader clustering inside each partition of `base`. keys[i] is a dim x A
/// matrix (one column per action); the distance between two instances is the
/// sum over actions of the column distance. Ignored instances stay ignored and
/// the terminal partition is carried over untouched, so keys for those
/// instances are not read.
ClusterAssignment epsilon_cluster(const std::vector<Eigen::MatrixXd>& keys, double eps, Distance distance,
                                  const ClusterAssignment& base);

/// Dissolves non-terminal partitions holding fewer than fraction * (non-ignored
/// instances); their members become ignored.
ClusterAssignment filter_spurious(const ClusterAssignment& c, double fraction);

struct IterationRecord {
  std::size_t iteration = 0;
  std::string step;  // initial | reward | sf
  ClusterAssignment assignment;
  FitDiagnostics fit;
  /// Largest deviation of a prediction from the empirical mean target over
  /// the (instance, action) groups it was trained on; 0 for the initial step.
  double max_residual = 0.0;
  double residual_budget = 0.0;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;

  std::size_t partition_count() const { return assignment.partition_count; }
  std::size_t ignored_count() const { return assignment.ignored_count(); }
};

struct RefinementTrace {
  std::vector<IterationRecord> iterations;
};

struct StepOutput {
  ClusterAssignment assignment;
  Classifier classifier;
  IterationRecord record;
};

StepOutput reward_refine(const TrajectoryDataset& data, const ClusterAssignment& c0, const RefineConfig& cfg);

/// One SF refinement step. `previous` optionally donates hidden layers.
StepOutput sf_refine(const TrajectoryDataset& data, const ClusterAssignment& c, const RefineConfig& cfg,
                     std::size_t iteration, const Classifier* previous = nullptr);

struct RefineResult {
  ClusterAssignment assignment;
  Classifier representation;
  Lsfm lsfm;
  RefinementTrace trace;
  bool converged = false;
  /// Refinement steps taken, the reward step included.
  std::size_t iterations = 0;
};

RefineResult refine_to_fixpoint(const TrajectoryDataset& data, const RefineConfig& cfg);

/// Trains observation -> partition on every non-ignored instance.
Classifier fit_representation(const TrajectoryDataset& data, const ClusterAssignment& c, const RefineConfig& cfg);

/// iteration,step,partition_count,ignored_count,max_residual
void write_trace_csv(const RefinementTrace& trace, const std::filesystem::path& path);
/// instance_id,partition,ignored (partition left empty for ignored instances)
void write_assignment_csv(const ClusterAssignment& c, const std::filesystem::path& path);
ClusterAssignment read_assignment_csv(const std::filesystem::path& path);

}  // namespace rpr
