#pragma once

#include <cstddef>
#include <filesystem>
#include <unordered_map>
#include <vector>

#include "rpr/observation.hpp"

namespace rpr {

struct Transition {
  Observation state;
  ActionId action = 0;
  double reward = 0.0;
  Observation next_state;
  bool next_is_terminal = false;
};

/// A transition with its endpoints resolved to dataset-wide instance ids.
struct IndexedTransition {
  std::size_t trajectory = 0;
  std::size_t step = 0;
  std::size_t state = 0;
  ActionId action = 0;
  double reward = 0.0;
  std::size_t next_state = 0;
  bool next_is_terminal = false;
};

/// Offline dataset of trajectories. Every distinct observation is a state
/// instance; ids are assigned in order of first appearance.
class TrajectoryDataset {
 public:
  explicit TrajectoryDataset(std::size_t action_count);

  /// Validates chaining, terminal placement, finite rewards and action range.
  void add_trajectory(std::vector<Transition> steps);

  std::size_t action_count() const { return action_count_; }
  std::size_t trajectory_count() const { return trajectories_.size(); }
  const std::vector<std::vector<Transition>>& trajectories() const { return trajectories_; }
  const std::vector<IndexedTransition>& transitions() const { return transitions_; }
  bool empty() const { return transitions_.empty(); }

  std::size_t instance_count() const { return instances_.size(); }
  const Observation& instance(std::size_t id) const { return instances_.at(id); }
  const std::vector<Observation>& instances() const { return instances_; }
  /// Throws ConfigError for an observation not present in the dataset.
  std::size_t instance_id(const Observation& obs) const;
  bool contains(const Observation& obs) const { return index_.contains(obs); }
  /// True when the instance was reached by a terminating transition.
  bool is_terminal_instance(std::size_t id) const { return terminal_.at(id) != 0; }
  std::size_t terminal_instance_count() const;

 private:
  std::size_t intern(const Observation& obs);

  std::size_t action_count_;
  std::vector<std::vector<Transition>> trajectories_;
  std::vector<IndexedTransition> transitions_;
  std::vector<Observation> instances_;
  std::vector<char> terminal_;
  std::unordered_map<Observation, std::size_t, ObservationHash> index_;
};

/// CSV columns: trajectory_id,step,state_repr,action,reward,next_state_repr,terminal
void write_dataset_csv(const TrajectoryDataset& data, const std::filesystem::path& path);
/// `action_count` of 0 infers the count as one past the largest action seen.
TrajectoryDataset read_dataset_csv(const std::filesystem::path& path, std::size_t action_count = 0);

}  // namespace rpr
