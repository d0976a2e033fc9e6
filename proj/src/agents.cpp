#include "rpr/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rpr/error.hpp"

namespace rpr {

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kScratch: return "scratch";
    case AgentKind::kPretrainedInit: return "pretrained-init";
    case AgentKind::kRewardPredictive: return "reward-predictive";
  }
  return "?";
}

AgentKind parse_agent_kind(const std::string& text) {
  for (auto k : {AgentKind::kScratch, AgentKind::kPretrainedInit, AgentKind::kRewardPredictive}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("agent: unknown agent kind '" + text + "'");
}

void AgentConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate: must be positive");
  if (episodes == 0) throw ConfigError("episodes: must be positive");
  if (ramp_episodes > episodes) throw ConfigError("ramp_episodes: must not exceed episodes");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma: must lie in [0, 1)");
  if (max_steps == 0) throw ConfigError("max_steps: must be positive");
  if (kind == AgentKind::kRewardPredictive && !(representation && representation->fitted())) {
    throw ConfigError("representation: required for reward-predictive agents");
  }
  if (kind == AgentKind::kPretrainedInit && !pretrained) {
    throw ConfigError("pretrained: required for pretrained-init agents");
  }
}

double LearningCurve::reward_per_step() const {
  double reward = 0.0;
  std::size_t steps = 0;
  for (const auto& e : episodes) {
    reward += e.reward;
    steps += e.steps;
  }
  return steps ? reward / static_cast<double>(steps) : 0.0;
}

QFunction make_q_function(const Environment& env, const AgentConfig& cfg) {
  QFunction q;
  const auto na = static_cast<Eigen::Index>(env.action_count());
  if (cfg.kind == AgentKind::kRewardPredictive) {
    if (!cfg.representation || !cfg.representation->fitted()) {
      throw ConfigError("representation: required for reward-predictive agents");
    }
    q.latent = true;
    q.theta = Eigen::MatrixXd::Zero(na, static_cast<Eigen::Index>(cfg.representation->class_count()));
  } else if (env.is_vector_observation()) {
    q.theta = Eigen::MatrixXd::Zero(na, static_cast<Eigen::Index>(env.observation_dimension() + 1));
  } else {
    q.discrete_input = true;
    q.theta = Eigen::MatrixXd::Zero(na, static_cast<Eigen::Index>(env.ground_state_count() + 1));
  }
  return q;
}

Eigen::VectorXd features(const QFunction& q, const Observation& obs, const Classifier* representation) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(q.theta.cols());
  if (q.latent) {
    if (!representation) throw ConfigError("latent Q function needs its representation");
    x(static_cast<Eigen::Index>(representation->predict_class(obs, 0))) = 1.0;
  } else if (q.discrete_input) {
    if (!obs.is_discrete() || obs.index() >= q.feature_count()) throw ConfigError("observation outside feature range");
    x(static_cast<Eigen::Index>(obs.index())) = 1.0;
  } else {
    const auto v = obs.values();
    if (v.size() + 1 != q.feature_count()) throw ConfigError("observation dimension does not match the Q function");
    for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i)) = v[i];
    x(x.size() - 1) = 1.0;
  }
  return x;
}

ActionId greedy_action(const QFunction& q, const Eigen::VectorXd& x) {
  const Eigen::VectorXd values = q.theta * x;
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < values.size(); ++a) {
    if (values(a) > values(best)) best = a;
  }
  return static_cast<ActionId>(best);
}

double td_update(QFunction& q, const Eigen::VectorXd& x, ActionId a, double reward, const Eigen::VectorXd* next_x,
                 double gamma, double learning_rate) {
  const auto row = static_cast<Eigen::Index>(a);
  double target = reward;
  if (next_x) target += gamma * (q.theta * *next_x).maxCoeff();
  const double delta = target - q.theta.row(row).dot(x);
  q.theta.row(row) += learning_rate * delta * x.transpose();
  return delta;
}

AgentRun run_agent(const Environment& env, const AgentConfig& cfg) {
  cfg.validate();
  AgentRun run;
  run.q = make_q_function(env, cfg);
  if (cfg.kind == AgentKind::kPretrainedInit) {
    const QFunction& p = *cfg.pretrained;
    if (p.latent || p.theta.rows() != run.q.theta.rows() || p.theta.cols() != run.q.theta.cols()) {
      throw ConfigError("pretrained: parameters do not fit this environment");
    }
    run.q.theta = p.theta;
  }
  const Classifier* rep = cfg.representation ? &*cfg.representation : nullptr;
  const std::size_t na = env.action_count();
  Rng rng(cfg.seed);

  for (std::size_t episode = 0; episode < cfg.episodes; ++episode) {
    const double greedy_p = cfg.ramp_episodes == 0
                                ? 1.0
                                : std::min(1.0, static_cast<double>(episode) / static_cast<double>(cfg.ramp_episodes));
    EpisodeStats stats;
    std::size_t s = env.reset(rng);
    Eigen::VectorXd x = features(run.q, env.emit(s, rng), rep);
    while (stats.steps < cfg.max_steps) {
      const ActionId a = rng.uniform() < greedy_p ? greedy_action(run.q, x) : rng.index(na);
      const StepResult r = env.step(s, a, rng);
      ++stats.steps;
      stats.reward += r.reward;
      if (r.terminal) {
        td_update(run.q, x, a, r.reward, nullptr, cfg.gamma, cfg.learning_rate);
        break;
      }
      Eigen::VectorXd next_x = features(run.q, env.emit(r.next_state, rng), rep);
      td_update(run.q, x, a, r.reward, &next_x, cfg.gamma, cfg.learning_rate);
      s = r.next_state;
      x = std::move(next_x);
    }
    run.curve.episodes.push_back(stats);
  }
  return run;
}

std::string task_name(const EnvSpec& spec) {
  return spec.variant == TransferVariant::kNone ? std::string("train") : to_string(spec.variant);
}

std::vector<TransferRow> run_transfer_suite(const TransferSuiteConfig& cfg) {
  if (cfg.repeats == 0) throw ConfigError("repeats: must be positive");
  if (cfg.tests.empty()) throw ConfigError("tests: at least one test task is required");
  const Environment train = make_env(cfg.train);
  std::vector<Environment> tests;
  for (const auto& spec : cfg.tests) tests.push_back(make_env(spec));

  std::vector<TransferRow> rows;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = derive_seed(cfg.seed, r);
    const auto data = sample_trajectories(train, uniform_policy(train.action_count()), cfg.train_trajectories,
                                          cfg.max_trajectory_length, derive_seed(seed, 1));
    RefineConfig rc = cfg.refine;
    rc.seed = derive_seed(seed, 2);
    const RefineResult refined = refine_to_fixpoint(data, rc);

    AgentConfig pre = cfg.agent;
    pre.kind = AgentKind::kScratch;
    pre.episodes = cfg.pretrain_episodes;
    pre.ramp_episodes = std::min(pre.ramp_episodes, pre.episodes);
    pre.seed = derive_seed(seed, 3);
    pre.representation.reset();
    pre.pretrained.reset();
    const QFunction pretrained = run_agent(train, pre).q;

    for (std::size_t t = 0; t < tests.size(); ++t) {
      for (auto kind : {AgentKind::kScratch, AgentKind::kPretrainedInit, AgentKind::kRewardPredictive}) {
        AgentConfig ac = cfg.agent;
        ac.kind = kind;
        ac.seed = derive_seed(seed, 10 + t);
        ac.representation.reset();
        ac.pretrained.reset();
        if (kind == AgentKind::kRewardPredictive) ac.representation = refined.representation;
        if (kind == AgentKind::kPretrainedInit) ac.pretrained = pretrained;
        TransferRow row;
        row.task = task_name(cfg.tests[t]);
        row.agent = kind;
        row.repeat = r;
        row.curve = run_agent(tests[t], ac).curve;
        row.reward_per_step = row.curve.reward_per_step();
        if (kind == AgentKind::kRewardPredictive) row.partition_count = refined.assignment.partition_count;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

RankSumResult rank_sum_test(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.empty() || y.empty()) throw ConfigError("rank-sum test needs two non-empty samples");
  const std::size_t n1 = x.size(), n2 = y.size(), n = n1 + n2;
  std::vector<std::pair<double, int>> all;
  for (double v : x) all.emplace_back(v, 0);
  for (double v : y) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end());
  double rank_x = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second == 0) rank_x += avg;
    }
    i = j;
  }
  RankSumResult out;
  const double dn1 = static_cast<double>(n1), dn2 = static_cast<double>(n2), dn = static_cast<double>(n);
  out.u = rank_x - dn1 * (dn1 + 1.0) / 2.0;
  out.effect = out.u / (dn1 * dn2);
  const double mean = dn1 * dn2 / 2.0;
  const double var = dn1 * dn2 / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (var <= 0.0) {
    out.z = 0.0;
    out.p_greater = out.u > mean ? 0.0 : (out.u < mean ? 1.0 : 0.5);
    return out;
  }
  out.z = (out.u - mean) / std::sqrt(var);
  out.p_greater = 0.5 * std::erfc(out.z / std::sqrt(2.0));
  return out;
}

void write_curves_csv(const std::vector<TransferRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "task,agent,repeat,episode,steps,reward,reward_per_step\n";
  for (const auto& row : rows) {
    for (std::size_t e = 0; e < row.curve.episodes.size(); ++e) {
      const auto& ep = row.curve.episodes[e];
      out << row.task << ',' << to_string(row.agent) << ',' << row.repeat << ',' << e << ',' << ep.steps << ','
          << format_double(ep.reward) << ',' << format_double(ep.reward_per_step()) << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_transfer_summary_csv(const std::vector<TransferRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "task,agent,repeat,reward_per_step\n";
  for (const auto& row : rows) {
    out << row.task << ',' << to_string(row.agent) << ',' << row.repeat << ',' << format_double(row.reward_per_step)
        << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace rpr
