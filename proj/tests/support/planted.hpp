#pragma once

#include <cstddef>
#include <vector>

#include "rpr/dataset.hpp"
#include "rpr/lsfm.hpp"
#include "rpr/rng.hpp"
#include "rpr/tabular_mdp.hpp"

namespace rpr::testing {

struct PlantedOptions {
  std::size_t max_states = 12;  // terminal state included
  std::size_t max_actions = 4;
  std::size_t min_blocks = 2;
  std::size_t max_blocks = 4;
  /// Ground transition probabilities are multiples of 1/q.
  std::size_t q = 4;
};

/// Non-terminal states are grouped into planted blocks. Every (block, action)
/// pair has one successor block (possibly the terminal state) and a 0/1
/// reward shared by all members; which member of the successor block is hit
/// varies per state. The last state is the absorbing terminal.
struct PlantedMdp {
  TabularMdp mdp;
  std::vector<std::size_t> block;  // per non-terminal state
  std::size_t block_count = 0;
  std::size_t q = 1;
};

PlantedMdp random_planted_mdp(Rng& rng, const PlantedOptions& opt = {});

/// Dense random MDP: rewards uniform in [0, 1), transition rows from
/// normalised uniform weights; the last `terminal_count` states are absorbing.
TabularMdp random_mdp(Rng& rng, std::size_t states, std::size_t actions, std::size_t terminal_count = 1);

/// Every (non-terminal state, action) pair as q single-step trajectories whose
/// next states follow the exact transition counts. Observation index = state id.
/// Requires transition probabilities that are multiples of 1/q.
TrajectoryDataset exact_dataset(const TabularMdp& mdp, std::size_t q);

/// Clustering over states (instances in state order).
ClusterAssignment assignment_from_labels(const std::vector<std::size_t>& labels);

/// Merges the blocks of `c` into at most `max_parts` random groups.
ClusterAssignment random_coarsening(const ClusterAssignment& c, std::size_t max_parts, Rng& rng);

/// Lifts a clustering of ground states onto dataset instances through the
/// observation index.
ClusterAssignment lift_to_instances(const ClusterAssignment& ground, const TrajectoryDataset& data);

}  // namespace rpr::testing
