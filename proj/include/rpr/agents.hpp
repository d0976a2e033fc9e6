#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rpr/classifier.hpp"
#include "rpr/env.hpp"
#include "rpr/refine.hpp"

namespace rpr {

enum class AgentKind { kScratch, kPretrainedInit, kRewardPredictive };
std::string to_string(AgentKind kind);
AgentKind parse_agent_kind(const std::string& text);

/// Linear action values Q(s, a) = theta.row(a) . x(s). Raw features are the
/// one-hot index for discrete observations and the vector plus a bias entry
/// otherwise; latent features are the one-hot partition of a frozen classifier.
struct QFunction {
  bool latent = false;
  bool discrete_input = false;
  Eigen::MatrixXd theta;  // actions x features

  std::size_t feature_count() const { return static_cast<std::size_t>(theta.cols()); }
};

struct AgentConfig {
  AgentKind kind = AgentKind::kScratch;
  double learning_rate = 0.1;
  std::size_t episodes = 100;
  /// Greedy probability grows linearly from 0 to 1 over this many episodes.
  std::size_t ramp_episodes = 10;
  double gamma = 0.9;
  std::size_t max_steps = 500;
  std::uint64_t seed = 0;
  /// Required for reward-predictive agents; never modified.
  std::optional<Classifier> representation;
  /// Required for pretrained-init agents.
  std::optional<QFunction> pretrained;

  /// Throws ConfigError naming the missing or invalid field.
  void validate() const;
};

struct EpisodeStats {
  std::size_t steps = 0;
  double reward = 0.0;
  double reward_per_step() const { return steps ? reward / static_cast<double>(steps) : 0.0; }
};

struct LearningCurve {
  std::vector<EpisodeStats> episodes;
  /// Total reward over total steps.
  double reward_per_step() const;
};

struct AgentRun {
  LearningCurve curve;
  QFunction q;
};

/// Fresh zero-initialised Q function shaped for `env`.
QFunction make_q_function(const Environment& env, const AgentConfig& cfg);

Eigen::VectorXd features(const QFunction& q, const Observation& obs, const Classifier* representation);

/// In-place one-step Q-learning update; returns the TD error.
double td_update(QFunction& q, const Eigen::VectorXd& x, ActionId a, double reward, const Eigen::VectorXd* next_x,
                 double gamma, double learning_rate);

/// Lowest action among the maximisers.
ActionId greedy_action(const QFunction& q, const Eigen::VectorXd& x);

AgentRun run_agent(const Environment& env, const AgentConfig& cfg);

struct TransferSuiteConfig {
  EnvSpec train;
  std::vector<EnvSpec> tests;
  /// Dataset for refinement on the training task.
  std::size_t train_trajectories = 1000;
  std::size_t max_trajectory_length = 100;
  RefineConfig refine;
  AgentConfig agent;
  /// Episodes the pretrained-init agent spends on the training task first.
  std::size_t pretrain_episodes = 100;
  std::size_t repeats = 20;
  std::uint64_t seed = 0;
};

struct TransferRow {
  std::string task;
  AgentKind agent = AgentKind::kScratch;
  std::size_t repeat = 0;
  double reward_per_step = 0.0;
  std::size_t partition_count = 0;  // representation size, reward-predictive rows only
  LearningCurve curve;
};

/// Per repeat: refine on the training task, pretrain a scratch agent there,
/// then run all three agents on every test task.
std::vector<TransferRow> run_transfer_suite(const TransferSuiteConfig& cfg);

std::string task_name(const EnvSpec& spec);

struct RankSumResult {
  double u = 0.0;        // Mann-Whitney U of the first sample
  double z = 0.0;        // normal approximation with tie correction
  double p_greater = 1.0;  // one-sided, first sample stochastically larger
  double effect = 0.5;     // P(X > Y) + P(X = Y) / 2
};
RankSumResult rank_sum_test(const std::vector<double>& x, const std::vector<double>& y);

/// task,agent,repeat,episode,steps,reward,reward_per_step
void write_curves_csv(const std::vector<TransferRow>& rows, const std::filesystem::path& path);
/// task,agent,repeat,reward_per_step
void write_transfer_summary_csv(const std::vector<TransferRow>& rows, const std::filesystem::path& path);

}  // namespace rpr
