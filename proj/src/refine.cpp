#include "rpr/refine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rpr/error.hpp"
#include "rpr/rng.hpp"

namespace rpr {

std::string to_string(Distance d) { return d == Distance::kL1 ? "l1" : "l2"; }

Distance parse_distance(const std::string& text) {
  if (text == "l1") return Distance::kL1;
  if (text == "l2") return Distance::kL2;
  throw ConfigError("sf_distance: expected l1 or l2, got '" + text + "'");
}

void RefineConfig::validate() const {
  if (!(eps_r > 0.0)) throw ConfigError("eps_r: must be positive");
  if (!(eps_psi > 0.0)) throw ConfigError("eps_psi: must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma: must lie in (0, 1)");
  if (max_iterations == 0) throw ConfigError("max_iterations: must be positive");
  if (!(spurious_fraction >= 0.0 && spurious_fraction < 1.0)) {
    throw ConfigError("spurious_fraction: must lie in [0, 1)");
  }
  if (!(reward_bin_width >= 0.0) || !std::isfinite(reward_bin_width)) {
    throw ConfigError("reward_bin_width: must be finite and non-negative");
  }
  reward_fit.validate();
  sf_fit.validate();
  representation_fit.validate();
}

std::vector<std::string> RefineConfig::warnings() const {
  std::vector<std::string> out;
  const double bound = gamma < 0.5 ? (2.0 / 3.0) * (1.0 - gamma / (1.0 - gamma)) : 0.0;
  if (!(gamma < 0.5 && eps_psi < bound)) {
    std::ostringstream msg;
    msg << "gamma " << gamma << " and eps_psi " << eps_psi
        << " are outside the regime where cross-partition SFs are guaranteed to separate";
    out.push_back(msg.str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reward bins

std::size_t RewardBins::bin_of(double reward) const {
  if (values.empty()) throw ConfigError("no reward bins");
  if (width > 0.0) {
    const auto key = static_cast<long long>(std::floor(reward / width));
    const auto it = std::lower_bound(keys.begin(), keys.end(), key);
    if (it != keys.end() && *it == key) return static_cast<std::size_t>(it - keys.begin());
  } else {
    const auto it = std::lower_bound(values.begin(), values.end(), reward);
    if (it != values.end() && *it == reward) return static_cast<std::size_t>(it - values.begin());
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (std::abs(values[i] - reward) < std::abs(values[best] - reward)) best = i;
  }
  return best;
}

RewardBins bin_rewards(const TrajectoryDataset& data, double bin_width) {
  if (data.empty()) throw ConfigError("dataset is empty");
  if (!(bin_width >= 0.0)) throw ConfigError("reward_bin_width: must be non-negative");
  RewardBins bins;
  bins.width = bin_width;
  if (bin_width == 0.0) {
    for (const auto& t : data.transitions()) bins.values.push_back(t.reward);
    std::sort(bins.values.begin(), bins.values.end());
    bins.values.erase(std::unique(bins.values.begin(), bins.values.end()), bins.values.end());
  } else {
    for (const auto& t : data.transitions()) bins.keys.push_back(static_cast<long long>(std::floor(t.reward / bin_width)));
    std::sort(bins.keys.begin(), bins.keys.end());
    bins.keys.erase(std::unique(bins.keys.begin(), bins.keys.end()), bins.keys.end());
    for (long long k : bins.keys) bins.values.push_back((static_cast<double>(k) + 0.5) * bin_width);
  }
  return bins;
}

// ---------------------------------------------------------------------------
// Clustering primitives

ClusterAssignment initial_clustering(const TrajectoryDataset& data) {
  ClusterAssignment c;
  c.partition.resize(data.instance_count());
  bool any_terminal = false, any_other = false;
  for (std::size_t i = 0; i < data.instance_count(); ++i) {
    const bool t = data.is_terminal_instance(i);
    c.partition[i] = t ? 1 : 0;
    (t ? any_terminal : any_other) = true;
  }
  c.partition_count = 2;
  if (any_terminal) c.terminal_partition = 1;
  return canonicalize(std::move(c));
}

namespace {

double key_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Distance d) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("clustering keys differ in shape");
  double total = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    total += d == Distance::kL1 ? (a.col(c) - b.col(c)).lpNorm<1>() : (a.col(c) - b.col(c)).norm();
  }
  return total;
}

}  // namespace

ClusterAssignment epsilon_cluster(const std::vector<Eigen::MatrixXd>& keys, double eps, Distance distance,
                                  const ClusterAssignment& base) {
  if (keys.size() != base.size()) throw ConfigError("one key per instance is required");
  ClusterAssignment out;
  out.partition.assign(base.size(), ClusterAssignment::kIgnored);
  std::vector<std::vector<std::size_t>> leaders(base.partition_count);
  std::vector<std::size_t> label_of(base.size(), ClusterAssignment::kIgnored);
  std::size_t terminal_label = ClusterAssignment::kIgnored;
  std::size_t next = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const std::size_t p = base.partition[i];
    if (p == ClusterAssignment::kIgnored) continue;
    if (base.terminal_partition && p == *base.terminal_partition) {
      if (terminal_label == ClusterAssignment::kIgnored) terminal_label = next++;
      out.partition[i] = terminal_label;
      continue;
    }
    std::size_t label = ClusterAssignment::kIgnored;
    for (std::size_t l : leaders[p]) {
      if (key_distance(keys[i], keys[l], distance) <= eps) {
        label = label_of[l];
        break;
      }
    }
    if (label == ClusterAssignment::kIgnored) {
      label = next++;
      leaders[p].push_back(i);
      label_of[i] = label;
    }
    out.partition[i] = label;
  }
  out.partition_count = next;
  if (terminal_label != ClusterAssignment::kIgnored) out.terminal_partition = terminal_label;
  return out;
}

ClusterAssignment filter_spurious(const ClusterAssignment& c, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("spurious_fraction: must lie in [0, 1)");
  if (fraction == 0.0) return c;
  const auto sizes = c.sizes();
  const double threshold = fraction * static_cast<double>(c.size() - c.ignored_count());
  ClusterAssignment out = c;
  for (std::size_t& p : out.partition) {
    if (p == ClusterAssignment::kIgnored) continue;
    if (c.terminal_partition && p == *c.terminal_partition) continue;
    if (static_cast<double>(sizes[p]) < threshold) p = ClusterAssignment::kIgnored;
  }
  return canonicalize(std::move(out));
}

// ---------------------------------------------------------------------------
// Refinement steps

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool is_clustered(const ClusterAssignment& c, std::size_t i) {
  const std::size_t p = c.partition[i];
  return p != ClusterAssignment::kIgnored && !(c.terminal_partition && p == *c.terminal_partition);
}

/// Instances whose keys the clustering reads.
std::vector<std::size_t> keyed_instances(const ClusterAssignment& c) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (is_clustered(c, i)) out.push_back(i);
  }
  return out;
}

/// predictions[a] has one row per entry of `ids`.
std::vector<Eigen::MatrixXd> predict_all(const Classifier& f, const TrajectoryDataset& data,
                                         const std::vector<std::size_t>& ids) {
  std::vector<Observation> obs;
  obs.reserve(ids.size());
  for (std::size_t i : ids) obs.push_back(data.instance(i));
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t a = 0; a < data.action_count(); ++a) out.push_back(f.predict_batch(obs, a));
  return out;
}

FitConfig seeded(FitConfig fit, std::uint64_t seed, std::uint64_t stream) {
  fit.seed = derive_seed(seed, stream);
  return fit;
}

void check_assignment(const TrajectoryDataset& data, const ClusterAssignment& c) {
  if (c.size() != data.instance_count()) throw ConfigError("cluster assignment does not match the dataset");
}

}  // namespace

StepOutput reward_refine(const TrajectoryDataset& data, const ClusterAssignment& c0, const RefineConfig& cfg) {
  const auto t0 = Clock::now();
  check_assignment(data, c0);
  const RewardBins bins = bin_rewards(data, cfg.reward_bin_width);
  const std::size_t na = data.action_count();

  LabeledSaDataset rows;
  rows.class_count = bins.size();
  rows.action_count = na;
  // (instance, action) -> (sum of binned targets, count)
  std::map<std::pair<std::size_t, ActionId>, std::pair<double, std::size_t>> groups;
  for (const auto& t : data.transitions()) {
    if (c0.partition[t.state] == ClusterAssignment::kIgnored) continue;
    const std::size_t b = bins.bin_of(t.reward);
    rows.add(data.instance(t.state), t.action, b);
    auto& g = groups[{t.state, t.action}];
    g.first += bins.values[b];
    ++g.second;
  }
  StepOutput out;
  out.classifier = fit_classifier(rows, seeded(cfg.reward_fit, cfg.seed, 1));

  const auto ids = keyed_instances(c0);
  const auto pred = predict_all(out.classifier, data, ids);
  const Eigen::Map<const Eigen::VectorXd> w_r(bins.values.data(), static_cast<Eigen::Index>(bins.size()));
  std::vector<Eigen::MatrixXd> keys(data.instance_count());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    Eigen::MatrixXd key(1, static_cast<Eigen::Index>(na));
    for (std::size_t a = 0; a < na; ++a) {
      key(0, static_cast<Eigen::Index>(a)) = pred[a].row(static_cast<Eigen::Index>(r)).dot(w_r);
    }
    keys[ids[r]] = std::move(key);
  }

  double residual = 0.0;
  for (const auto& [k, g] : groups) {
    if (keys[k.first].size() == 0) continue;
    const double target = g.first / static_cast<double>(g.second);
    residual = std::max(residual, std::abs(keys[k.first](0, static_cast<Eigen::Index>(k.second)) - target));
  }

  out.assignment = epsilon_cluster(keys, cfg.eps_r, Distance::kL1, c0);
  out.record.iteration = 1;
  out.record.step = "reward";
  out.record.assignment = out.assignment;
  out.record.fit = out.classifier.diagnostics();
  out.record.max_residual = residual;
  out.record.residual_budget = cfg.eps_r / 2.0;
  if (residual > cfg.eps_r / 2.0) {
    out.record.warnings.push_back("reward predictions deviate from empirical means by " + format_double(residual) +
                                  ", more than eps_r / 2");
  }
  out.record.wall_seconds = seconds_since(t0);
  return out;
}

StepOutput sf_refine(const TrajectoryDataset& data, const ClusterAssignment& c, const RefineConfig& cfg,
                     std::size_t iteration, const Classifier* previous) {
  const auto t0 = Clock::now();
  check_assignment(data, c);
  StepOutput out;
  std::vector<std::string> warnings;
  const Lsfm lsfm = build_lsfm(data, c, cfg.gamma, &warnings);
  const std::size_t na = data.action_count();
  const std::size_t n = c.partition_count;

  LabeledSaDataset rows;
  rows.class_count = n;
  rows.action_count = na;
  std::map<std::pair<std::size_t, ActionId>, std::pair<Eigen::VectorXd, std::size_t>> groups;
  for (const auto& t : data.transitions()) {
    const std::size_t p = c.partition[t.state];
    const std::size_t q = c.partition[t.next_state];
    if (p == ClusterAssignment::kIgnored || q == ClusterAssignment::kIgnored) continue;
    rows.add(data.instance(t.state), t.action, q);
    auto [it, fresh] = groups.try_emplace({t.state, t.action});
    if (fresh) it->second.first = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    it->second.first(static_cast<Eigen::Index>(q)) += 1.0;
    ++it->second.second;
  }
  const Classifier* donor = cfg.warm_start ? previous : nullptr;
  out.classifier = fit_classifier(rows, seeded(cfg.sf_fit, cfg.seed, 100 + iteration), donor);

  const auto ids = keyed_instances(c);
  const auto pred = predict_all(out.classifier, data, ids);
  std::vector<Eigen::MatrixXd> keys(data.instance_count());
  const Eigen::MatrixXd Ft = cfg.gamma * lsfm.F.transpose();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    Eigen::MatrixXd key(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(na));
    for (std::size_t a = 0; a < na; ++a) {
      key.col(static_cast<Eigen::Index>(a)) = Ft * pred[a].row(static_cast<Eigen::Index>(r)).transpose();
      key(static_cast<Eigen::Index>(c.partition[ids[r]]), static_cast<Eigen::Index>(a)) += 1.0;
    }
    keys[ids[r]] = std::move(key);
  }

  double residual = 0.0;
  for (const auto& [k, g] : groups) {
    if (keys[k.first].size() == 0) continue;
    // the e_{c(s)} terms cancel, leaving gamma F^T (p_hat - p_empirical)
    const Eigen::VectorXd p_emp = g.first / static_cast<double>(g.second);
    const Eigen::VectorXd psi_emp = Ft * p_emp;
    Eigen::VectorXd diff = keys[k.first].col(static_cast<Eigen::Index>(k.second)) - psi_emp;
    diff(static_cast<Eigen::Index>(c.partition[k.first])) -= 1.0;
    residual = std::max(residual, cfg.sf_distance == Distance::kL1 ? diff.lpNorm<1>() : diff.norm());
  }

  out.assignment = filter_spurious(epsilon_cluster(keys, cfg.eps_psi, cfg.sf_distance, c), cfg.spurious_fraction);
  out.record.iteration = iteration;
  out.record.step = "sf";
  out.record.assignment = out.assignment;
  out.record.fit = out.classifier.diagnostics();
  out.record.max_residual = residual;
  out.record.residual_budget = cfg.eps_psi / 2.0;
  out.record.warnings = std::move(warnings);
  if (residual > cfg.eps_psi / 2.0) {
    out.record.warnings.push_back("SF predictions deviate from empirical targets by " + format_double(residual) +
                                  ", more than eps_psi / 2");
  }
  out.record.wall_seconds = seconds_since(t0);
  return out;
}

Classifier fit_representation(const TrajectoryDataset& data, const ClusterAssignment& c, const RefineConfig& cfg) {
  check_assignment(data, c);
  LabeledSaDataset rows;
  rows.class_count = c.partition_count;
  rows.action_count = 1;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.partition[i] == ClusterAssignment::kIgnored) continue;
    rows.add(data.instance(i), 0, c.partition[i]);
  }
  return fit_classifier(rows, seeded(cfg.representation_fit, cfg.seed, 2));
}

RefineResult refine_to_fixpoint(const TrajectoryDataset& data, const RefineConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("dataset is empty");
  RefineResult result;

  IterationRecord first;
  first.step = "initial";
  first.assignment = initial_clustering(data);
  first.warnings = cfg.warnings();
  if (first.assignment.partition_count == 1 && first.assignment.terminal_partition) {
    first.warnings.push_back("every instance is terminal");
  }
  result.trace.iterations.push_back(first);

  StepOutput step = reward_refine(data, first.assignment, cfg);
  result.trace.iterations.push_back(step.record);
  ClusterAssignment current = step.assignment;
  result.iterations = 1;

  Classifier previous;
  while (result.iterations < cfg.max_iterations) {
    ++result.iterations;
    StepOutput next = sf_refine(data, current, cfg, result.iterations, previous.fitted() ? &previous : nullptr);
    result.trace.iterations.push_back(next.record);
    const bool fixed = same_partition(next.assignment, current);
    current = std::move(next.assignment);
    previous = std::move(next.classifier);
    if (fixed) {
      result.converged = true;
      break;
    }
  }

  result.assignment = current;
  result.lsfm = build_lsfm(data, current, cfg.gamma);
  result.representation = fit_representation(data, current, cfg);
  return result;
}

// ---------------------------------------------------------------------------
// CSV

void write_trace_csv(const RefinementTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,step,partition_count,ignored_count,max_residual\n";
  for (const auto& r : trace.iterations) {
    out << r.iteration << ',' << r.step << ',' << r.partition_count() << ',' << r.ignored_count() << ','
        << format_double(r.max_residual) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_assignment_csv(const ClusterAssignment& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "instance_id,partition,ignored\n";
  for (std::size_t i = 0; i < c.size(); ++i) {
    out << i << ',';
    if (c.partition[i] == ClusterAssignment::kIgnored) {
      out << ",1\n";
    } else {
      out << c.partition[i] << ",0\n";
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

ClusterAssignment read_assignment_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  ClusterAssignment c;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, part, ign;
    std::getline(ss, id, ',');
    std::getline(ss, part, ',');
    std::getline(ss, ign, ',');
    try {
      if (std::stoull(id) != c.partition.size()) throw IoError("instance ids out of order in " + path.string());
      if (ign == "1") {
        c.partition.push_back(ClusterAssignment::kIgnored);
      } else {
        const std::size_t p = std::stoull(part);
        c.partition.push_back(p);
        c.partition_count = std::max(c.partition_count, p + 1);
      }
    } catch (const std::logic_error&) {
      throw IoError("malformed row '" + line + "' in " + path.string());
    }
  }
  return c;
}

}  // namespace rpr
