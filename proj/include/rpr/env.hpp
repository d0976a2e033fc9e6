#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rpr/dataset.hpp"
#include "rpr/observation.hpp"
#include "rpr/rng.hpp"
#include "rpr/tabular_mdp.hpp"

namespace rpr {

enum class EnvKind { kColumnWorld, kPointColumnWorld, kCombinationLock };
enum class TransferVariant { kNone, kSwapDigits, kReversedDial, kLeftDialBroken };

/// kDefault: Column World starts in the right column, Combination Lock at all zeros.
enum class StartMode { kDefault, kLeftColumn, kRightColumn, kUniform };

struct EnvSpec {
  EnvKind kind = EnvKind::kColumnWorld;
  std::size_t grid_size = 4;
  std::size_t dial_count = 3;
  std::size_t digit_count = 10;
  std::size_t broken_dial = 2;
  /// One entry per dial; nullopt is a wildcard.
  std::vector<std::optional<std::size_t>> goal{9, 9, std::nullopt};
  TransferVariant variant = TransferVariant::kNone;
  /// Combination Lock: half-width of the uniform noise added to every slot.
  double noise = 0.0;
  StartMode start = StartMode::kDefault;
  std::uint64_t seed = 0;
};

std::string to_string(EnvKind kind);
std::string to_string(TransferVariant variant);
std::string to_string(StartMode mode);
EnvKind parse_env_kind(const std::string& text);
TransferVariant parse_transfer_variant(const std::string& text);
StartMode parse_start_mode(const std::string& text);

struct StepResult {
  std::size_t next_state = 0;
  double reward = 0.0;
  bool terminal = false;
};

/// Immutable environment. Hidden states are integers in [0, ground_state_count());
/// the absorbing terminal state is `terminal_state()` and emits a distinguished
/// observation that no ground state can produce.
///
/// Column World actions: 0 up, 1 down, 2 left, 3 right. Cell (row, col) has
/// hidden id row * grid_size + col, row 0 on top. Moving into the rightmost
/// column from outside it pays 1 and terminates.
///
/// Combination Lock: one action per dial. Dial digits are packed with the
/// left dial most significant.
class Environment {
 public:
  explicit Environment(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }
  std::size_t action_count() const;
  std::size_t ground_state_count() const;
  std::size_t terminal_state() const { return ground_state_count(); }
  bool is_vector_observation() const { return spec_.kind != EnvKind::kColumnWorld; }
  std::size_t observation_dimension() const;

  std::size_t reset(Rng& rng) const;
  StepResult step(std::size_t state, ActionId action, Rng& rng) const;
  /// Observation emitted in a hidden state (noise drawn from `rng`).
  Observation emit(std::size_t state, Rng& rng) const;
  Observation terminal_observation() const;
  /// Ground-truth labeling: hidden state that emitted `obs`.
  std::size_t label(const Observation& obs) const;

  /// Exact hidden model, ground states plus the absorbing terminal state.
  TabularMdp tabular_model() const;

  // Combination Lock helpers.
  std::vector<std::size_t> digits(std::size_t state) const;
  std::size_t pack(const std::vector<std::size_t>& digits) const;
  bool matches_goal(const std::vector<std::size_t>& digits) const;

 private:
  /// Deterministic successors with probabilities (used by step and the tabular model).
  std::vector<std::pair<std::size_t, double>> successors(std::size_t state, ActionId action) const;
  double transition_reward(std::size_t state, std::size_t next) const;

  EnvSpec spec_;
};

/// Throws ConfigError naming the offending field.
Environment make_env(const EnvSpec& spec);

/// Ground states and the labeling function of a block-structured environment.
struct GroundStates {
  std::vector<std::size_t> states;
  std::size_t terminal_label = 0;
  std::function<std::size_t(const Observation&)> label;
};
GroundStates enumerate_ground_states(const Environment& env);

using Policy = std::function<ActionId(const Observation&, Rng&)>;
Policy uniform_policy(std::size_t action_count);

/// Trajectory i uses the stream derived from (seed, i).
TrajectoryDataset sample_trajectories(const Environment& env, const Policy& policy,
                                      std::size_t count, std::size_t max_len, std::uint64_t seed);

}  // namespace rpr
