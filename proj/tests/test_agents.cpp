#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "rpr/agents.hpp"
#include "rpr/error.hpp"
#include "rpr/refine.hpp"

using namespace rpr;

namespace {

/// Q* by value iteration on the hidden model (terminal row stays zero).
Eigen::MatrixXd optimal_q(const TabularMdp& mdp, double gamma) {
  const auto S = static_cast<Eigen::Index>(mdp.state_count);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(S, static_cast<Eigen::Index>(mdp.action_count));
  for (int it = 0; it < 2000; ++it) {
    const Eigen::VectorXd v = q.rowwise().maxCoeff();
    Eigen::MatrixXd next(q.rows(), q.cols());
    for (std::size_t a = 0; a < mdp.action_count; ++a) {
      next.col(static_cast<Eigen::Index>(a)) =
          mdp.reward.col(static_cast<Eigen::Index>(a)) + gamma * mdp.transition[a] * v;
    }
    for (Eigen::Index s = 0; s < S; ++s) {
      if (mdp.terminal[static_cast<std::size_t>(s)]) next.row(s).setZero();
    }
    q = next;
  }
  return q;
}

EnvSpec scaled_lock() {
  EnvSpec spec;
  spec.kind = EnvKind::kCombinationLock;
  spec.digit_count = 4;
  spec.goal = {3, 3, std::nullopt};
  spec.start = StartMode::kUniform;
  return spec;
}

Classifier lock_representation(std::uint64_t seed) {
  const auto env = make_env(scaled_lock());
  const auto data = sample_trajectories(env, uniform_policy(3), 2000, 100, seed);
  RefineConfig cfg;
  cfg.eps_r = 0.4;
  cfg.eps_psi = 0.8;
  cfg.seed = seed;
  return refine_to_fixpoint(data, cfg).representation;
}

double brute_u(const std::vector<double>& x, const std::vector<double>& y) {
  double u = 0.0;
  for (double a : x) {
    for (double b : y) u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return u;
}

}  // namespace

TEST_CASE("td update on a two-state example") {
  QFunction q;
  q.discrete_input = true;
  q.theta.resize(2, 2);
  q.theta << 0.5, -0.25,  //
      1.0, 2.0;
  Eigen::VectorXd x0(2), x1(2);
  x0 << 1, 0;
  x1 << 0, 1;
  // Q(s0, a1) = 1, max_a Q(s1, a) = 2: target 0.3 + 0.9 * 2 = 2.1, delta 1.1
  const double delta = td_update(q, x0, 1, 0.3, &x1, 0.9, 0.1);
  CHECK(std::abs(delta - 1.1) < 1e-12);
  CHECK(std::abs(q.theta(1, 0) - 1.11) < 1e-12);
  CHECK(q.theta(0, 0) == 0.5);
  CHECK(q.theta(1, 1) == 2.0);
  // terminal transition: target is the reward alone
  const double d2 = td_update(q, x1, 0, 1.0, nullptr, 0.9, 0.5);
  CHECK(std::abs(d2 - 1.25) < 1e-12);
  CHECK(std::abs(q.theta(0, 1) - 0.375) < 1e-12);
}

TEST_CASE("td update with linear features") {
  QFunction q;
  q.theta.resize(1, 3);
  q.theta << 0.1, 0.2, 0.3;
  Eigen::VectorXd x(3), nx(3);
  x << 1.0, 2.0, 1.0;
  nx << 0.0, 1.0, 1.0;
  const double delta = td_update(q, x, 0, 0.0, &nx, 0.5, 0.01);
  // Q(x) = 0.8, Q(nx) = 0.5, delta = 0.25 - 0.8
  CHECK(std::abs(delta + 0.55) < 1e-12);
  CHECK(std::abs(q.theta(0, 1) - (0.2 - 0.011)) < 1e-12);
}

TEST_CASE("greedy ties go to the lowest action") {
  QFunction q;
  q.theta = Eigen::MatrixXd::Zero(4, 2);
  Eigen::VectorXd x(2);
  x << 1, 0;
  CHECK(greedy_action(q, x) == 0);
  q.theta(2, 0) = 1.0;
  q.theta(3, 0) = 1.0;
  CHECK(greedy_action(q, x) == 2);
}

TEST_CASE("features") {
  const auto env = make_env(EnvSpec{});
  AgentConfig cfg;
  const auto q = make_q_function(env, cfg);
  CHECK(q.discrete_input);
  CHECK(q.feature_count() == 17);
  const auto x = features(q, Observation::discrete(5), nullptr);
  CHECK(x.sum() == 1.0);
  CHECK(x(5) == 1.0);
  CHECK_THROWS_AS(features(q, Observation::discrete(40), nullptr), ConfigError);

  const auto lock = make_env(scaled_lock());
  const auto ql = make_q_function(lock, cfg);
  CHECK(ql.feature_count() == lock.observation_dimension() + 1);
  Rng rng(1);
  const auto xl = features(ql, lock.emit(0, rng), nullptr);
  CHECK(xl(xl.size() - 1) == 1.0);
}

TEST_CASE("greedy agent with optimal values follows the optimal path") {
  for (StartMode start : {StartMode::kDefault, StartMode::kLeftColumn}) {
    EnvSpec spec;
    spec.start = start;
    const auto env = make_env(spec);
    const auto qstar = optimal_q(env.tabular_model(), 0.9);
    AgentConfig cfg;
    cfg.kind = AgentKind::kPretrainedInit;
    cfg.ramp_episodes = 0;
    cfg.episodes = 20;
    QFunction init = make_q_function(env, AgentConfig{});
    init.theta = qstar.transpose();
    cfg.pretrained = init;
    const auto run = run_agent(env, cfg);
    // right-column start: left then back right; left-column start: three moves right
    const std::size_t expected = start == StartMode::kDefault ? 2 : 3;
    for (const auto& e : run.curve.episodes) {
      CHECK(e.steps == expected);
      CHECK(e.reward == 1.0);
    }
  }
}

TEST_CASE("learning curve shape and determinism") {
  const auto env = make_env(EnvSpec{});
  AgentConfig cfg;
  cfg.episodes = 30;
  cfg.seed = 5;
  const auto a = run_agent(env, cfg);
  const auto b = run_agent(env, cfg);
  REQUIRE(a.curve.episodes.size() == 30);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(a.curve.episodes[i].steps == b.curve.episodes[i].steps);
    CHECK(a.curve.episodes[i].reward == b.curve.episodes[i].reward);
    CHECK(a.curve.episodes[i].steps <= cfg.max_steps);
  }
  CHECK(a.q.theta == b.q.theta);
  cfg.seed = 6;
  const auto c = run_agent(env, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < 30; ++i) differs |= a.curve.episodes[i].steps != c.curve.episodes[i].steps;
  CHECK(differs);

  double reward = 0.0, steps = 0.0;
  for (const auto& e : a.curve.episodes) {
    reward += e.reward;
    steps += static_cast<double>(e.steps);
  }
  CHECK(a.curve.reward_per_step() == doctest::Approx(reward / steps));
  // learned: late episodes reach the goal quickly
  CHECK(a.curve.episodes.back().steps <= 4);
}

TEST_CASE("reward-predictive agent leaves the representation untouched") {
  const auto rep = lock_representation(3);
  const std::string before = rep.serialize();
  EnvSpec spec = scaled_lock();
  spec.start = StartMode::kDefault;
  AgentConfig cfg;
  cfg.kind = AgentKind::kRewardPredictive;
  cfg.representation = rep;
  cfg.episodes = 20;
  cfg.seed = 2;
  const auto run = run_agent(make_env(spec), cfg);
  CHECK(run.q.latent);
  CHECK(run.q.feature_count() == rep.class_count());
  CHECK(cfg.representation->serialize() == before);
  CHECK(rep.serialize() == before);
  const auto again = run_agent(make_env(spec), cfg);
  CHECK(again.q.theta == run.q.theta);
}

TEST_CASE("agent config validation") {
  AgentConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.kind = AgentKind::kRewardPredictive;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("representation"), ConfigError);
  cfg.kind = AgentKind::kPretrainedInit;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("pretrained"), ConfigError);
  CHECK_THROWS_AS(run_agent(make_env(EnvSpec{}), cfg), ConfigError);
  cfg = AgentConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("learning_rate"), ConfigError);
  cfg = AgentConfig{};
  cfg.ramp_episodes = cfg.episodes + 1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("ramp_episodes"), ConfigError);

  // pretrained parameters shaped for another environment
  cfg = AgentConfig{};
  cfg.kind = AgentKind::kPretrainedInit;
  cfg.pretrained = make_q_function(make_env(scaled_lock()), AgentConfig{});
  CHECK_THROWS_AS(run_agent(make_env(EnvSpec{}), cfg), ConfigError);

  CHECK(parse_agent_kind(to_string(AgentKind::kRewardPredictive)) == AgentKind::kRewardPredictive);
  CHECK_THROWS_AS(parse_agent_kind("dqn"), ConfigError);
}

TEST_CASE("rank-sum statistics") {
  const std::vector<double> x = {1, 2, 3}, y = {4, 5, 6};
  auto r = rank_sum_test(x, y);
  CHECK(r.u == 0.0);
  CHECK(r.effect == 0.0);
  CHECK(r.z == doctest::Approx(-4.5 / std::sqrt(5.25)));
  CHECK(r.p_greater > 0.95);
  r = rank_sum_test(y, x);
  CHECK(r.u == 9.0);
  CHECK(r.p_greater == doctest::Approx(0.5 * std::erfc(4.5 / std::sqrt(5.25) / std::sqrt(2.0))));

  // ties: U against pairwise counting, variance with the tie correction
  const std::vector<double> a = {1, 2, 2, 3, 5, 5}, b = {2, 3, 3, 4, 5};
  r = rank_sum_test(a, b);
  CHECK(r.u == brute_u(a, b));
  CHECK(r.effect == doctest::Approx(brute_u(a, b) / 30.0));
  // tie groups: 2 (x3), 3 (x3), 5 (x3)
  const double var = 30.0 / 12.0 * (12.0 - 3.0 * 24.0 / (11.0 * 10.0));
  CHECK(r.z == doctest::Approx((brute_u(a, b) - 15.0) / std::sqrt(var)));

  // all equal
  r = rank_sum_test({1, 1}, {1, 1, 1});
  CHECK(r.effect == 0.5);
  CHECK(r.p_greater == 0.5);
  CHECK_THROWS_AS(rank_sum_test({}, {1.0}), ConfigError);
}

TEST_CASE("rank-sum p-value near the exact permutation distribution") {
  const std::vector<double> x = {3.1, 4.7, 5.2, 6.0, 7.4, 8.8, 9.1}, y = {1.0, 2.2, 2.9, 3.3, 4.0, 5.0, 6.5};
  std::vector<double> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  const double observed = brute_u(x, y);
  // enumerate all C(14, 7) splits
  std::vector<int> pick(14, 0);
  std::fill(pick.begin(), pick.begin() + 7, 1);
  std::size_t total = 0, at_least = 0;
  do {
    std::vector<double> px, py;
    for (std::size_t i = 0; i < 14; ++i) (pick[i] ? px : py).push_back(pooled[i]);
    ++total;
    if (brute_u(px, py) >= observed) ++at_least;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  const double exact = static_cast<double>(at_least) / static_cast<double>(total);
  CHECK(std::abs(rank_sum_test(x, y).p_greater - exact) < 0.02);
}

TEST_CASE("transfer suite with one repeat") {
  TransferSuiteConfig suite;
  suite.train = scaled_lock();
  EnvSpec swap = scaled_lock();
  swap.variant = TransferVariant::kSwapDigits;
  swap.goal = {1, 2, std::nullopt};
  swap.start = StartMode::kDefault;
  suite.tests = {swap};
  suite.train_trajectories = 1000;
  suite.refine.eps_r = 0.4;
  suite.refine.eps_psi = 0.8;
  suite.agent.episodes = 15;
  suite.pretrain_episodes = 15;
  suite.repeats = 1;
  suite.seed = 4;
  const auto rows = run_transfer_suite(suite);
  REQUIRE(rows.size() == 3);
  std::vector<AgentKind> kinds;
  for (const auto& row : rows) {
    CHECK(row.task == "swap-digits");
    CHECK(row.repeat == 0);
    CHECK(row.curve.episodes.size() == 15);
    CHECK(row.reward_per_step == doctest::Approx(row.curve.reward_per_step()));
    kinds.push_back(row.agent);
    if (row.agent == AgentKind::kRewardPredictive) CHECK(row.partition_count >= 2);
  }
  std::sort(kinds.begin(), kinds.end());
  CHECK(kinds == std::vector<AgentKind>{AgentKind::kScratch, AgentKind::kPretrainedInit, AgentKind::kRewardPredictive});

  const auto again = run_transfer_suite(suite);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].reward_per_step == rows[i].reward_per_step);

  const auto dir = std::filesystem::temp_directory_path() / "rpr_agents_csv_test";
  std::filesystem::create_directories(dir);
  write_curves_csv(rows, dir / "curves.csv");
  write_transfer_summary_csv(rows, dir / "summary.csv");
  std::ifstream c(dir / "curves.csv"), s(dir / "summary.csv");
  std::string line;
  std::getline(c, line);
  CHECK(line == "task,agent,repeat,episode,steps,reward,reward_per_step");
  std::size_t lines = 0;
  while (std::getline(c, line)) ++lines;
  CHECK(lines == 45);
  std::getline(s, line);
  CHECK(line == "task,agent,repeat,reward_per_step");
  lines = 0;
  while (std::getline(s, line)) ++lines;
  CHECK(lines == 3);
  std::filesystem::remove_all(dir);

  suite.repeats = 0;
  CHECK_THROWS_AS(run_transfer_suite(suite), ConfigError);
}
