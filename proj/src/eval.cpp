#include "rpr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "rpr/error.hpp"

namespace rpr {

std::size_t LatentModel::classify(const Observation& obs) const { return representation.predict_class(obs, 0); }

void LatentModel::validate() const {
  if (!representation.fitted()) throw ConfigError("latent model has no representation network");
  if (representation.class_count() != lsfm.partition_count()) {
    throw ConfigError("representation has " + std::to_string(representation.class_count()) +
                      " classes but the LSFM has " + std::to_string(lsfm.partition_count()) + " partitions");
  }
}

LatentModel make_latent_model(const TrajectoryDataset& data, const ClusterAssignment& c, const RefineConfig& cfg) {
  LatentModel m;
  m.lsfm = build_lsfm(data, c, cfg.gamma);
  m.representation = fit_representation(data, c, cfg);
  return m;
}

std::vector<double> predict_reward_sequence(const Lsfm& lsfm, std::size_t start_partition,
                                            std::span<const ActionId> actions) {
  const auto n = static_cast<Eigen::Index>(lsfm.partition_count());
  if (start_partition >= lsfm.partition_count()) throw ConfigError("start partition out of range");
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  d(static_cast<Eigen::Index>(start_partition)) = 1.0;
  std::vector<double> out;
  out.reserve(actions.size());
  for (ActionId a : actions) {
    if (a >= lsfm.action_count()) throw ConfigError("action out of range");
    out.push_back(lsfm.w[a].dot(d));
    d = lsfm.M[a].transpose() * d;
  }
  return out;
}

std::vector<double> predict_reward_sequence(const LatentModel& m, const Observation& s0,
                                            std::span<const ActionId> actions) {
  return predict_reward_sequence(m.lsfm, m.classify(s0), actions);
}

std::vector<double> reward_sequence_error(const LatentModel& m, const TrajectoryDataset& test) {
  m.validate();
  std::vector<double> out;
  for (const auto& traj : test.trajectories()) {
    std::vector<ActionId> actions;
    for (const auto& t : traj) actions.push_back(t.action);
    const auto pred = predict_reward_sequence(m, traj.front().state, actions);
    double total = 0.0;
    for (std::size_t i = 0; i < traj.size(); ++i) total += std::abs(pred[i] - traj[i].reward);
    out.push_back(total / static_cast<double>(traj.size()));
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty list");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  if (values.size() % 2 == 1) return values[mid];
  const double upper = values[mid];
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

// ---------------------------------------------------------------------------
// Confusion matrices

std::size_t ConfusionMatrix::row_of(std::size_t label) const {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) throw ConfigError("label " + std::to_string(label) + " not in matrix");
  return static_cast<std::size_t>(it - labels.begin());
}

namespace {

ConfusionMatrix tally(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& columns,
                      std::size_t partition_count) {
  ConfusionMatrix cm;
  cm.partition_count = partition_count;
  cm.labels = labels;
  std::sort(cm.labels.begin(), cm.labels.end());
  cm.labels.erase(std::unique(cm.labels.begin(), cm.labels.end()), cm.labels.end());
  cm.counts.setZero(static_cast<Eigen::Index>(cm.labels.size()), static_cast<Eigen::Index>(partition_count + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t col = columns[i] == ClusterAssignment::kIgnored ? partition_count : columns[i];
    cm.counts(static_cast<Eigen::Index>(cm.row_of(labels[i])), static_cast<Eigen::Index>(col)) += 1;
  }
  return cm;
}

}  // namespace

ConfusionMatrix confusion_matrix(const TrajectoryDataset& data, const ClusterAssignment& c, const Labeling& labeling) {
  if (c.size() != data.instance_count()) throw ConfigError("cluster assignment does not match the dataset");
  std::vector<std::size_t> labels;
  for (const auto& obs : data.instances()) labels.push_back(labeling(obs));
  return tally(labels, c.partition, c.partition_count);
}

ConfusionMatrix confusion_matrix(const TrajectoryDataset& data, const LatentModel& m, const Labeling& labeling) {
  m.validate();
  std::vector<std::size_t> labels, columns;
  for (const auto& obs : data.instances()) {
    labels.push_back(labeling(obs));
    columns.push_back(m.classify(obs));
  }
  return tally(labels, columns, m.lsfm.partition_count());
}

namespace {

/// counts per (group, column), groups in order of first label.
std::map<std::size_t, Eigen::Matrix<std::size_t, 1, Eigen::Dynamic>> group_counts(
    const ConfusionMatrix& cm, const std::function<std::size_t(std::size_t)>& group) {
  std::map<std::size_t, Eigen::Matrix<std::size_t, 1, Eigen::Dynamic>> out;
  for (std::size_t r = 0; r < cm.labels.size(); ++r) {
    const std::size_t g = group ? group(cm.labels[r]) : cm.labels[r];
    auto [it, fresh] = out.try_emplace(g);
    if (fresh) it->second.setZero(cm.counts.cols());
    it->second += cm.counts.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

}  // namespace

double purity(const ConfusionMatrix& cm, const std::function<std::size_t(std::size_t)>& group) {
  const std::size_t total = cm.total();
  if (total == 0) return 1.0;
  const auto groups = group_counts(cm, group);
  std::size_t pure = 0;
  for (std::size_t col = 0; col < cm.partition_count; ++col) {
    std::size_t best = 0;
    for (const auto& [g, row] : groups) best = std::max(best, row(static_cast<Eigen::Index>(col)));
    pure += best;
  }
  return static_cast<double>(pure) / static_cast<double>(total);
}

double group_spread(const ConfusionMatrix& cm, const std::function<std::size_t(std::size_t)>& group) {
  const std::size_t total = cm.total();
  if (total == 0) return 0.0;
  std::size_t kept = 0;
  for (const auto& [g, row] : group_counts(cm, group)) {
    kept += cm.partition_count ? row.head(static_cast<Eigen::Index>(cm.partition_count)).maxCoeff() : 0;
  }
  return 1.0 - static_cast<double>(kept) / static_cast<double>(total);
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "label";
  for (std::size_t p = 0; p < cm.partition_count; ++p) out << ",p" << p;
  out << ",ignore\n";
  for (std::size_t r = 0; r < cm.labels.size(); ++r) {
    out << cm.labels[r];
    for (Eigen::Index c = 0; c < cm.counts.cols(); ++c) out << ',' << cm.counts(static_cast<Eigen::Index>(r), c);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_errors_csv(const std::vector<std::pair<std::size_t, std::vector<double>>>& per_iteration,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "trajectory_id,mean_abs_error,iteration\n";
  for (const auto& [iteration, errors] : per_iteration) {
    for (std::size_t i = 0; i < errors.size(); ++i) {
      out << i << ',' << format_double(errors[i]) << ',' << iteration << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Tabular oracles

namespace {

/// Splits every block by leader grouping of keys within `tol` (max norm).
/// Returns labels numbered by first appearance in state order.
std::vector<std::size_t> split_blocks(const std::vector<std::size_t>& blocks, const std::vector<Eigen::VectorXd>& keys,
                                      double tol) {
  std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>> leaders;  // block -> (state, label)
  std::vector<std::size_t> out(blocks.size());
  std::size_t next = 0;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    auto& ls = leaders[blocks[s]];
    std::size_t label = next;
    bool found = false;
    for (const auto& [leader, l] : ls) {
      if ((keys[s] - keys[leader]).cwiseAbs().maxCoeff() <= tol) {
        label = l;
        found = true;
        break;
      }
    }
    if (!found) {
      ls.emplace_back(s, next);
      ++next;
    }
    out[s] = label;
  }
  return out;
}

std::size_t block_count(const std::vector<std::size_t>& labels) {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

Eigen::MatrixXd indicator(const ClusterAssignment& c) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.size()),
                                              static_cast<Eigen::Index>(c.partition_count));
  for (std::size_t s = 0; s < c.size(); ++s) {
    if (c.partition[s] == ClusterAssignment::kIgnored) throw ConfigError("tabular clustering has ignored states");
    phi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c.partition[s])) = 1.0;
  }
  return phi;
}

void check_tabular(const TabularMdp& mdp, const ClusterAssignment& c) {
  if (c.size() != mdp.state_count) throw ConfigError("clustering does not cover the MDP's states");
  c.validate();
}

}  // namespace

ClusterAssignment oracle_partition(const TabularMdp& mdp, double reward_tol, double transition_tol) {
  mdp.validate();
  const std::size_t S = mdp.state_count;
  const std::size_t A = mdp.action_count;
  std::vector<std::size_t> blocks(S);
  for (std::size_t s = 0; s < S; ++s) blocks[s] = mdp.terminal[s] ? 1 : 0;

  std::vector<Eigen::VectorXd> keys(S);
  for (std::size_t s = 0; s < S; ++s) keys[s] = mdp.reward.row(static_cast<Eigen::Index>(s)).transpose();
  blocks = split_blocks(blocks, keys, reward_tol);

  for (;;) {
    const std::size_t n = block_count(blocks);
    for (std::size_t s = 0; s < S; ++s) {
      keys[s] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n * A));
      for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t t = 0; t < S; ++t) {
          keys[s](static_cast<Eigen::Index>(a * n + blocks[t])) +=
              mdp.transition[a](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
        }
      }
    }
    auto next = split_blocks(blocks, keys, transition_tol);
    const bool stable = block_count(next) == n;
    blocks = std::move(next);
    if (stable) break;
  }

  ClusterAssignment c;
  c.partition = blocks;
  c.partition_count = block_count(blocks);
  for (std::size_t s = 0; s < S; ++s) {
    if (mdp.terminal[s]) {
      c.terminal_partition = blocks[s];
      break;
    }
  }
  return c;
}

SubClusteringCheck check_sub_clustering(const ClusterAssignment& c, const ClusterAssignment& c_star) {
  if (c.size() != c_star.size()) throw ConfigError("clusterings cover different instance sets");
  SubClusteringCheck out;
  // every c_star block must sit inside a single c partition
  std::vector<std::size_t> first_member(c_star.partition_count, ClusterAssignment::kIgnored);
  for (std::size_t s = 0; s < c.size(); ++s) {
    if (c.partition[s] == ClusterAssignment::kIgnored || c_star.partition[s] == ClusterAssignment::kIgnored) continue;
    std::size_t& first = first_member.at(c_star.partition[s]);
    if (first == ClusterAssignment::kIgnored) {
      first = s;
    } else if (c.partition[first] != c.partition[s]) {
      out.holds = false;
      out.witness = std::make_pair(first, s);
      return out;
    }
  }
  return out;
}

Eigen::MatrixXd projection_matrix(const ClusterAssignment& c, const ClusterAssignment& c_star) {
  const auto check = check_sub_clustering(c, c_star);
  if (!check.holds) {
    throw ConfigError("not a sub-clustering: instances " + std::to_string(check.witness->first) + " and " +
                      std::to_string(check.witness->second) + " share a reference block but not a partition");
  }
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.partition_count),
                                              static_cast<Eigen::Index>(c_star.partition_count));
  for (std::size_t s = 0; s < c.size(); ++s) {
    if (c.partition[s] == ClusterAssignment::kIgnored || c_star.partition[s] == ClusterAssignment::kIgnored) continue;
    phi(static_cast<Eigen::Index>(c.partition[s]), static_cast<Eigen::Index>(c_star.partition[s])) = 1.0;
  }
  return phi;
}

std::vector<Eigen::MatrixXd> exact_sf(const TabularMdp& mdp, const ClusterAssignment& c, double gamma) {
  check_tabular(mdp, c);
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma: must lie in [0, 1)");
  const auto S = static_cast<Eigen::Index>(mdp.state_count);
  const Eigen::MatrixXd phi = indicator(c);
  Eigen::MatrixXd P_bar = Eigen::MatrixXd::Zero(S, S);
  for (const auto& P : mdp.transition) P_bar += P;
  P_bar /= static_cast<double>(mdp.action_count);
  const Eigen::MatrixXd policy_sf =
      (Eigen::MatrixXd::Identity(S, S) - gamma * P_bar).fullPivLu().solve(phi);
  std::vector<Eigen::MatrixXd> out;
  for (const auto& P : mdp.transition) out.push_back(phi + gamma * P * policy_sf);
  return out;
}

Lsfm lsfm_from_mdp(const TabularMdp& mdp, const ClusterAssignment& c, double gamma) {
  check_tabular(mdp, c);
  const Eigen::MatrixXd phi = indicator(c);
  const Eigen::VectorXd sizes = phi.colwise().sum().transpose();
  const Eigen::MatrixXd mean = sizes.cwiseInverse().asDiagonal() * phi.transpose();  // n x S averaging
  Lsfm m;
  m.gamma = gamma;
  m.terminal_partition = c.terminal_partition;
  for (std::size_t a = 0; a < mdp.action_count; ++a) {
    m.w.push_back(mean * mdp.reward.col(static_cast<Eigen::Index>(a)));
    m.M.push_back(mean * mdp.transition[a] * phi);
  }
  auto f = compute_f_matrices(m.M, gamma);
  m.M_bar = Eigen::MatrixXd::Zero(m.M.front().rows(), m.M.front().cols());
  for (const auto& M : m.M) m.M_bar += M;
  m.M_bar /= static_cast<double>(m.M.size());
  m.F = std::move(f.F);
  m.F_a = std::move(f.F_a);
  return m;
}

std::vector<double> expected_reward_sequence(const TabularMdp& mdp, std::size_t s, std::span<const ActionId> actions) {
  if (s >= mdp.state_count) throw ConfigError("state out of range");
  Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mdp.state_count));
  d(static_cast<Eigen::Index>(s)) = 1.0;
  std::vector<double> out;
  for (ActionId a : actions) {
    if (a >= mdp.action_count) throw ConfigError("action out of range");
    out.push_back(d.dot(mdp.reward.col(static_cast<Eigen::Index>(a))));
    d = mdp.transition[a].transpose() * d;
  }
  return out;
}

RewardPredictiveCheck check_reward_predictive(const TabularMdp& mdp, const ClusterAssignment& c, const Lsfm& lsfm) {
  check_tabular(mdp, c);
  if (lsfm.partition_count() != c.partition_count || lsfm.action_count() != mdp.action_count) {
    throw ConfigError("LSFM does not match the clustering");
  }
  const auto psi = exact_sf(mdp, c, lsfm.gamma);
  RewardPredictiveCheck out;
  for (std::size_t s = 0; s < mdp.state_count; ++s) {
    const auto k = static_cast<Eigen::Index>(c.partition[s]);
    for (std::size_t a = 0; a < mdp.action_count; ++a) {
      const double r = mdp.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
      out.max_reward_error = std::max(out.max_reward_error, std::abs(lsfm.w[a](k) - r));
      const double sf = (lsfm.F_a[a].row(k) - psi[a].row(static_cast<Eigen::Index>(s))).norm();
      out.max_sf_error = std::max(out.max_sf_error, sf);
    }
  }
  return out;
}

}  // namespace rpr
