#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rpr/agents.hpp"
#include "rpr/env.hpp"
#include "rpr/refine.hpp"

namespace rpr {

struct DatasetConfig {
  std::size_t trajectories = 1000;
  std::size_t max_length = 100;
  /// Held-out trajectories for evaluation.
  std::size_t test_trajectories = 100;
};

struct TransferConfig {
  std::vector<EnvSpec> tests;
  std::size_t repeats = 20;
  std::size_t pretrain_episodes = 100;
};

/// Everything a CLI run needs, read from a JSON file. Unknown keys are errors.
struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  EnvSpec env;
  DatasetConfig dataset;
  RefineConfig refine;
  AgentConfig agent;
  std::optional<TransferConfig> transfer;
  std::filesystem::path output_dir = "out";

  /// Throws ConfigError naming the field.
  void validate() const;
  /// Applies a new master seed to every derived seed.
  void set_seed(std::uint64_t seed);
};

/// Throws ConfigError for bad content and IoError when the file is unreadable.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);

EnvSpec parse_env_spec_json(const std::string& json_text);

}  // namespace rpr
