#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include "planted.hpp"
#include "rpr/env.hpp"
#include "rpr/error.hpp"
#include "rpr/eval.hpp"
#include "rpr/refine.hpp"

using namespace rpr;

namespace {

EnvSpec scaled_lock() {
  EnvSpec spec;
  spec.kind = EnvKind::kCombinationLock;
  spec.digit_count = 4;
  spec.goal = {3, 3, std::nullopt};
  return spec;
}

/// Expected reward of every action sequence of the given length, by direct
/// recursion over the transition tensor.
void reward_sequences(const TabularMdp& mdp, const Eigen::VectorXd& dist, std::size_t depth, std::vector<double>& prefix,
                      std::vector<std::vector<double>>& out) {
  if (depth == 0) {
    out.push_back(prefix);
    return;
  }
  for (std::size_t a = 0; a < mdp.action_count; ++a) {
    double r = 0.0;
    for (Eigen::Index s = 0; s < dist.size(); ++s) r += dist(s) * mdp.reward(s, static_cast<Eigen::Index>(a));
    const Eigen::VectorXd next = mdp.transition[a].transpose() * dist;
    prefix.push_back(r);
    reward_sequences(mdp, next, depth - 1, prefix, out);
    prefix.pop_back();
  }
}

std::vector<std::vector<double>> all_sequences(const TabularMdp& mdp, std::size_t s, std::size_t depth) {
  std::vector<std::vector<double>> out;
  std::vector<double> prefix;
  reward_sequences(mdp, Eigen::VectorXd::Unit(static_cast<Eigen::Index>(mdp.state_count), static_cast<Eigen::Index>(s)),
                   depth, prefix, out);
  return out;
}

bool same_sequences(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t t = 0; t < a[i].size(); ++t) {
      if (std::abs(a[i][t] - b[i][t]) > 1e-9) return false;
    }
  }
  return true;
}

ClusterAssignment column_ground(const Environment& env) {
  std::vector<std::size_t> labels;
  for (std::size_t s = 0; s < env.ground_state_count(); ++s) labels.push_back(s % 4);
  labels.push_back(4);
  auto c = testing::assignment_from_labels(labels);
  c.terminal_partition = 4;
  return c;
}

RefineConfig tabular() {
  RefineConfig cfg;
  cfg.seed = 1;
  return cfg;
}

}  // namespace

TEST_CASE("column world reward sequence prediction") {
  const auto env = make_env(EnvSpec{});
  const auto lsfm = lsfm_from_mdp(env.tabular_model(), column_ground(env), 0.9);
  const std::vector<ActionId> right = {3, 3, 3};
  CHECK(predict_reward_sequence(lsfm, 0, right) == std::vector<double>{0, 0, 1});
  CHECK(predict_reward_sequence(lsfm, 0, std::vector<ActionId>{}).empty());
  const std::vector<ActionId> past = {3, 3, 3, 2, 0, 3};
  const auto seq = predict_reward_sequence(lsfm, 1, past);
  CHECK(seq == std::vector<double>{0, 1, 0, 0, 0, 0});
  CHECK_THROWS(predict_reward_sequence(lsfm, 7, right));
  CHECK_THROWS(predict_reward_sequence(lsfm, 0, std::vector<ActionId>{9}));
}

TEST_CASE("latent model predictions through the representation") {
  const auto env = make_env(EnvSpec{});
  const auto data = sample_trajectories(env, uniform_policy(4), 1000, 100, 2);
  const auto r = refine_to_fixpoint(data, tabular());
  const LatentModel m{r.representation, r.lsfm};
  m.validate();
  const std::vector<ActionId> right = {3, 3, 3};
  CHECK(predict_reward_sequence(m, Observation::discrete(8), right) == std::vector<double>{0, 0, 1});
  const auto test = sample_trajectories(env, uniform_policy(4), 100, 100, 3);
  for (double e : reward_sequence_error(m, test)) CHECK(e == 0.0);
}

TEST_CASE("reward sequence error on a single trajectory") {
  const auto env = make_env(EnvSpec{});
  const auto lsfm = lsfm_from_mdp(env.tabular_model(), column_ground(env), 0.9);
  // one partition per column, classified by the observation index
  TrajectoryDataset train(4);
  for (std::size_t s = 0; s < 16; ++s) {
    train.add_trajectory({Transition{Observation::discrete(s), 0, 0.0, Observation::discrete(s), false}});
  }
  RefineConfig cfg = tabular();
  ClusterAssignment c;
  for (std::size_t i = 0; i < train.instance_count(); ++i) c.partition.push_back(train.instance(i).index() % 4);
  c.partition_count = 5;
  c.terminal_partition = 4;
  const LatentModel m{fit_representation(train, c, cfg), lsfm};
  TrajectoryDataset test(4);
  // col 1 -> right (0) -> col 2 -> right (1, terminal): perfect; then a wrong reward label
  test.add_trajectory({Transition{Observation::discrete(1), 3, 0.0, Observation::discrete(2), false},
                       Transition{Observation::discrete(2), 3, 1.0, env.terminal_observation(), true}});
  test.add_trajectory({Transition{Observation::discrete(4), 3, 1.0, Observation::discrete(5), false},
                       Transition{Observation::discrete(5), 0, 0.0, Observation::discrete(1), false}});
  const auto errors = reward_sequence_error(m, test);
  CHECK(errors == std::vector<double>{0.0, 0.5});
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("error medians do not increase over column world iterations") {
  const auto env = make_env(EnvSpec{});
  const auto data = sample_trajectories(env, uniform_policy(4), 1000, 100, 4);
  const auto test = sample_trajectories(env, uniform_policy(4), 100, 100, 5);
  const auto r = refine_to_fixpoint(data, tabular());
  double previous = 1e9;
  for (const auto& it : r.trace.iterations) {
    const double med = median(reward_sequence_error(make_latent_model(data, it.assignment, tabular()), test));
    CHECK(med <= previous);
    previous = med;
  }
  CHECK(previous == 0.0);
}

TEST_CASE("oracle partition of column world") {
  const auto env = make_env(EnvSpec{});
  const auto oracle = oracle_partition(env.tabular_model());
  CHECK(oracle.partition_count == 5);
  CHECK(same_partition(oracle, column_ground(env)));
  CHECK(oracle.partition[0] == 0);  // numbered by smallest state
  CHECK(oracle.partition[1] == 1);
}

TEST_CASE("behaviorally identical states form one block") {
  TabularMdp mdp(4, 2);
  for (std::size_t a = 0; a < 2; ++a) {
    mdp.transition[a] = Eigen::MatrixXd::Zero(4, 4);
    for (Eigen::Index s = 0; s < 3; ++s) mdp.transition[a](s, (s + 1 + static_cast<Eigen::Index>(a)) % 3) = 1.0;
    mdp.transition[a](3, 3) = 1.0;
  }
  mdp.reward = Eigen::MatrixXd::Constant(4, 2, 0.5);
  mdp.reward.row(3).setZero();
  mdp.terminal = {false, false, false, true};
  const auto oracle = oracle_partition(mdp);
  CHECK(oracle.partition_count == 2);
  CHECK(oracle.partition == std::vector<std::size_t>{0, 0, 0, 1});
}

TEST_CASE("scaled lock oracle checked by reward sequence enumeration") {
  const auto env = make_env(scaled_lock());
  const auto mdp = env.tabular_model();
  const auto oracle = oracle_partition(mdp);
  CHECK(oracle.partition_count == 17);
  std::vector<std::vector<std::vector<double>>> seqs;
  for (std::size_t s = 0; s < mdp.state_count; ++s) seqs.push_back(all_sequences(mdp, s, 6));
  for (std::size_t s = 0; s < 64; ++s) {
    for (std::size_t t = 0; t < 64; ++t) {
      CHECK((oracle.partition[s] == oracle.partition[t]) == (s / 4 == t / 4));
      if (oracle.partition[s] == oracle.partition[t]) CHECK(same_sequences(seqs[s], seqs[t]));
    }
  }
}

TEST_CASE("merging any two oracle blocks breaks reward predictivity") {
  Rng rng(6);
  for (int k = 0; k < 15; ++k) {
    const auto planted = testing::random_planted_mdp(rng, {.max_states = 8});
    const auto& mdp = planted.mdp;
    const auto oracle = oracle_partition(mdp);
    std::vector<std::vector<std::vector<double>>> seqs;
    for (std::size_t s = 0; s < mdp.state_count; ++s) seqs.push_back(all_sequences(mdp, s, 5));
    for (std::size_t b1 = 0; b1 < oracle.partition_count; ++b1) {
      for (std::size_t b2 = b1 + 1; b2 < oracle.partition_count; ++b2) {
        if (oracle.terminal_partition == b1 || oracle.terminal_partition == b2) continue;
        bool differs = false;
        for (std::size_t s = 0; s < mdp.state_count && !differs; ++s) {
          for (std::size_t t = 0; t < mdp.state_count && !differs; ++t) {
            if (oracle.partition[s] == b1 && oracle.partition[t] == b2) differs = !same_sequences(seqs[s], seqs[t]);
          }
        }
        CHECK(differs);
      }
    }
    for (std::size_t s = 0; s < mdp.state_count; ++s) {
      for (std::size_t t = 0; t < mdp.state_count; ++t) {
        if (oracle.partition[s] == oracle.partition[t]) CHECK(same_sequences(seqs[s], seqs[t]));
      }
    }
  }
}

TEST_CASE("latent predictions equal exact expectations under the oracle") {
  Rng rng(7);
  for (int k = 0; k < 20; ++k) {
    const auto planted = testing::random_planted_mdp(rng);
    const auto& mdp = planted.mdp;
    const auto oracle = oracle_partition(mdp);
    const auto lsfm = lsfm_from_mdp(mdp, oracle, 0.5);
    for (std::size_t s = 0; s < mdp.state_count; ++s) {
      const auto exact = all_sequences(mdp, s, 4);
      std::size_t idx = 0;
      std::function<void(std::vector<ActionId>&)> visit = [&](std::vector<ActionId>& actions) {
        if (actions.size() == 4) {
          const auto predicted = predict_reward_sequence(lsfm, oracle.partition[s], actions);
          const auto direct = expected_reward_sequence(mdp, s, actions);
          for (std::size_t t = 0; t < 4; ++t) {
            CHECK(predicted[t] == doctest::Approx(exact[idx][t]).epsilon(1e-9));
            CHECK(direct[t] == doctest::Approx(exact[idx][t]).epsilon(1e-9));
          }
          ++idx;
          return;
        }
        for (ActionId a = 0; a < mdp.action_count; ++a) {
          actions.push_back(a);
          visit(actions);
          actions.pop_back();
        }
      };
      std::vector<ActionId> actions;
      visit(actions);
    }
  }
}

TEST_CASE("exact sfs satisfy the bellman equation") {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const auto mdp = testing::random_mdp(rng, 2 + rng.index(8), 1 + rng.index(3));
    std::vector<std::size_t> labels(mdp.state_count);
    for (auto& l : labels) l = rng.index(3);
    const auto c = testing::assignment_from_labels(labels);
    const double gamma = rng.uniform(0.0, 0.95);
    const auto psi = exact_sf(mdp, c, gamma);
    const auto S = static_cast<Eigen::Index>(mdp.state_count);
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(S, psi[0].cols());
    for (const auto& p : psi) mean += p / static_cast<double>(psi.size());
    for (std::size_t a = 0; a < mdp.action_count; ++a) {
      for (Eigen::Index s = 0; s < S; ++s) {
        Eigen::RowVectorXd expect = gamma * mdp.transition[a].row(s) * mean;
        expect(static_cast<Eigen::Index>(c.partition[static_cast<std::size_t>(s)])) += 1.0;
        CHECK((psi[a].row(s) - expect).cwiseAbs().maxCoeff() < 1e-9);
      }
    }
  }
}

TEST_CASE("sub-clustering checks") {
  const auto star = testing::assignment_from_labels({0, 0, 1, 1, 2});
  CHECK(check_sub_clustering(testing::assignment_from_labels({0, 0, 0, 0, 0}), star).holds);
  const auto singletons = testing::assignment_from_labels({0, 1, 2, 3, 4});
  const auto r = check_sub_clustering(singletons, star);
  CHECK_FALSE(r.holds);
  REQUIRE(r.witness);
  const auto [s, t] = *r.witness;
  CHECK(singletons.partition[s] != singletons.partition[t]);
  CHECK(star.partition[s] == star.partition[t]);
  CHECK_THROWS_AS(check_sub_clustering(star, testing::assignment_from_labels({0, 1})), ConfigError);
}

TEST_CASE("projection matrices") {
  const auto star = testing::assignment_from_labels({0, 1, 2, 3, 1});
  Eigen::MatrixXd perm = projection_matrix(star, star);
  CHECK(perm == Eigen::MatrixXd::Identity(4, 4));
  auto relabeled = testing::assignment_from_labels({3, 2, 1, 0, 2});
  relabeled.partition = {3, 2, 1, 0, 2};
  perm = projection_matrix(relabeled, star);
  CHECK(perm.rowwise().sum() == Eigen::VectorXd::Ones(4));
  CHECK(perm.colwise().sum() == Eigen::RowVectorXd::Ones(4));
  CHECK(projection_matrix(testing::assignment_from_labels({0, 0, 0, 0, 0}), star) == Eigen::MatrixXd::Ones(1, 4));
  CHECK_THROWS(projection_matrix(testing::assignment_from_labels({0, 1, 2, 3, 4}), star));

  // column world c_1 against the oracle
  const auto env = make_env(EnvSpec{});
  const auto oracle = oracle_partition(env.tabular_model());
  std::vector<std::size_t> c1_labels;
  for (std::size_t s = 0; s < 16; ++s) c1_labels.push_back(s % 4 == 2 ? 1 : 0);
  c1_labels.push_back(2);
  const auto c1 = testing::assignment_from_labels(c1_labels);
  const auto phi = projection_matrix(c1, oracle);
  for (std::size_t s = 0; s <= 16; ++s) {
    const Eigen::VectorXd lhs = phi * Eigen::VectorXd::Unit(5, static_cast<Eigen::Index>(oracle.partition[s]));
    CHECK(lhs == Eigen::VectorXd::Unit(3, static_cast<Eigen::Index>(c1.partition[s])));
  }
}

TEST_CASE("confusion matrices and purity") {
  const auto env = make_env(scaled_lock());
  EnvSpec uniform = scaled_lock();
  uniform.start = StartMode::kUniform;
  const auto data = sample_trajectories(make_env(uniform), uniform_policy(3), 500, 50, 9);
  const auto labeling = [&](const Observation& o) { return env.label(o); };
  const auto ground = oracle_partition(env.tabular_model());
  ClusterAssignment oracle;
  for (const auto& o : data.instances()) oracle.partition.push_back(ground.partition[env.label(o)]);
  oracle.partition_count = ground.partition_count;
  oracle.terminal_partition = ground.terminal_partition;

  const auto cm = confusion_matrix(data, oracle, labeling);
  CHECK(cm.total() == data.instance_count());
  CHECK(static_cast<std::size_t>(cm.counts.cols()) == oracle.partition_count + 1);
  std::map<std::size_t, std::size_t> per_label;
  for (const auto& o : data.instances()) ++per_label[env.label(o)];
  for (const auto& [label, count] : per_label) {
    CHECK(cm.counts.row(static_cast<Eigen::Index>(cm.row_of(label))).sum() == count);
    // one nonzero column per row
    CHECK((cm.counts.row(static_cast<Eigen::Index>(cm.row_of(label))).array() > 0).count() == 1);
  }
  // broken-dial rows share their column
  for (std::size_t s = 0; s < 64; s += 4) {
    if (!per_label.contains(s)) continue;
    for (std::size_t k = 1; k < 4; ++k) {
      if (!per_label.contains(s + k)) continue;
      CHECK(cm.counts.row(static_cast<Eigen::Index>(cm.row_of(s))).cwiseMin(1) ==
            cm.counts.row(static_cast<Eigen::Index>(cm.row_of(s + k))).cwiseMin(1));
    }
  }
  const auto block = [&](std::size_t label) { return ground.partition[label]; };
  CHECK(purity(cm, block) == 1.0);
  CHECK(group_spread(cm, block) == 0.0);

  const auto single = confusion_matrix(data, testing::assignment_from_labels(std::vector<std::size_t>(data.instance_count(), 0)),
                                       labeling);
  CHECK(single.counts.col(0).sum() == data.instance_count());

  // ignored instances land in the ignore column and are impure
  auto ignored = oracle;
  ignored.partition[0] = ClusterAssignment::kIgnored;
  const auto with_ignore = confusion_matrix(data, ignored, labeling);
  CHECK(with_ignore.counts.col(with_ignore.counts.cols() - 1).sum() == 1);
  CHECK(purity(with_ignore, block) == doctest::Approx(1.0 - 1.0 / static_cast<double>(data.instance_count())));
}

TEST_CASE("purity of a mixed partition") {
  ConfusionMatrix cm;
  cm.labels = {0, 1, 2};
  cm.partition_count = 2;
  cm.counts.resize(3, 3);
  cm.counts << 5, 0, 0,  //
      3, 1, 0,           //
      0, 4, 1;
  // column 0: max 5 of 8, column 1: max 4 of 5, ignore column never pure
  CHECK(purity(cm) == doctest::Approx(9.0 / 14.0));
  // groups {0,1} and {2}: column 0 is all group 0
  const auto g = [](std::size_t l) { return l == 2 ? std::size_t{1} : std::size_t{0}; };
  CHECK(purity(cm, g) == doctest::Approx(12.0 / 14.0));
  CHECK(group_spread(cm, g) == doctest::Approx(2.0 / 14.0));
}

TEST_CASE("csv outputs") {
  const auto dir = std::filesystem::temp_directory_path() / "rpr_eval_csv_test";
  std::filesystem::create_directories(dir);
  ConfusionMatrix cm;
  cm.labels = {3, 7};
  cm.partition_count = 1;
  cm.counts.resize(2, 2);
  cm.counts << 2, 0, 0, 1;
  write_confusion_csv(cm, dir / "confusion.csv");
  write_errors_csv({{0, {0.5, 0.0}}, {2, {0.0, 0.0}}}, dir / "errors.csv");
  std::ifstream c(dir / "confusion.csv"), e(dir / "errors.csv");
  std::string line;
  std::getline(c, line);
  CHECK(line == "label,p0,ignore");
  std::getline(c, line);
  CHECK(line == "3,2,0");
  std::getline(e, line);
  CHECK(line == "trajectory_id,mean_abs_error,iteration");
  std::getline(e, line);
  CHECK(line == "0,0.5,0");
  std::filesystem::remove_all(dir);
}
