#include "rpr/env.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rpr/error.hpp"

namespace rpr {

TabularMdp::TabularMdp(std::size_t states, std::size_t actions)
    : state_count(states),
      action_count(actions),
      transition(actions, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(states),
                                                static_cast<Eigen::Index>(states))),
      reward(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(states),
                                   static_cast<Eigen::Index>(actions))),
      terminal(states, false) {}

void TabularMdp::validate(double tol) const {
  if (transition.size() != action_count || terminal.size() != state_count) {
    throw ConfigError("tabular MDP dimensions are inconsistent");
  }
  for (std::size_t a = 0; a < action_count; ++a) {
    const auto& p = transition[a];
    if (static_cast<std::size_t>(p.rows()) != state_count ||
        static_cast<std::size_t>(p.cols()) != state_count) {
      throw ConfigError("transition matrix has the wrong shape");
    }
    for (Eigen::Index s = 0; s < p.rows(); ++s) {
      if ((p.row(s).array() < -tol).any() || std::abs(p.row(s).sum() - 1.0) > tol) {
        throw ConfigError("transition row " + std::to_string(s) + " is not stochastic");
      }
      if (terminal[static_cast<std::size_t>(s)] &&
          (std::abs(p(s, s) - 1.0) > tol || std::abs(reward(s, static_cast<Eigen::Index>(a))) > tol)) {
        throw ConfigError("terminal state " + std::to_string(s) + " is not absorbing");
      }
    }
  }
}

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::kColumnWorld: return "column-world";
    case EnvKind::kPointColumnWorld: return "point-column-world";
    case EnvKind::kCombinationLock: return "combination-lock";
  }
  return "?";
}

std::string to_string(TransferVariant variant) {
  switch (variant) {
    case TransferVariant::kNone: return "none";
    case TransferVariant::kSwapDigits: return "swap-digits";
    case TransferVariant::kReversedDial: return "reversed-dial";
    case TransferVariant::kLeftDialBroken: return "left-dial-broken";
  }
  return "?";
}

std::string to_string(StartMode mode) {
  switch (mode) {
    case StartMode::kDefault: return "default";
    case StartMode::kLeftColumn: return "left-column";
    case StartMode::kRightColumn: return "right-column";
    case StartMode::kUniform: return "uniform";
  }
  return "?";
}

EnvKind parse_env_kind(const std::string& text) {
  for (auto k : {EnvKind::kColumnWorld, EnvKind::kPointColumnWorld, EnvKind::kCombinationLock}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("kind: unknown environment kind '" + text + "'");
}

TransferVariant parse_transfer_variant(const std::string& text) {
  for (auto v : {TransferVariant::kNone, TransferVariant::kSwapDigits, TransferVariant::kReversedDial,
                 TransferVariant::kLeftDialBroken}) {
    if (to_string(v) == text) return v;
  }
  throw ConfigError("variant: unknown transfer variant '" + text + "'");
}

StartMode parse_start_mode(const std::string& text) {
  for (auto m : {StartMode::kDefault, StartMode::kLeftColumn, StartMode::kRightColumn, StartMode::kUniform}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("start: unknown start mode '" + text + "'");
}

namespace {

void validate(const EnvSpec& spec) {
  const bool grid = spec.kind != EnvKind::kCombinationLock;
  if (grid) {
    if (spec.grid_size < 2) throw ConfigError("grid_size: must be at least 2");
    if (spec.variant != TransferVariant::kNone) {
      throw ConfigError("variant: transfer variants only apply to the combination lock");
    }
    return;
  }
  if (spec.dial_count < 1) throw ConfigError("dial_count: must be at least 1");
  if (spec.digit_count < 2) throw ConfigError("digit_count: must be at least 2");
  if (spec.broken_dial >= spec.dial_count) throw ConfigError("broken_dial: must be < dial_count");
  if (spec.goal.size() != spec.dial_count) throw ConfigError("goal: length must equal dial_count");
  for (const auto& g : spec.goal) {
    if (g && *g >= spec.digit_count) throw ConfigError("goal: digit out of range");
  }
  if (!(spec.noise >= 0.0 && spec.noise < 0.5)) throw ConfigError("noise: must lie in [0, 0.5)");
  if (spec.start == StartMode::kLeftColumn || spec.start == StartMode::kRightColumn) {
    throw ConfigError("start: column start modes only apply to column world");
  }
  switch (spec.variant) {
    case TransferVariant::kNone: break;
    case TransferVariant::kSwapDigits:
      if (spec.dial_count < 3 || spec.broken_dial < 2) {
        throw ConfigError("variant: swap-digits needs three dials and a broken dial right of the middle");
      }
      break;
    case TransferVariant::kReversedDial:
      if (spec.dial_count < 2 || spec.broken_dial == 1) {
        throw ConfigError("variant: reversed-dial needs a working middle dial");
      }
      break;
    case TransferVariant::kLeftDialBroken:
      if (spec.broken_dial != 0) throw ConfigError("broken_dial: left-dial-broken requires broken_dial = 0");
      break;
  }
}

}  // namespace

Environment::Environment(EnvSpec spec) : spec_(std::move(spec)) { validate(spec_); }

Environment make_env(const EnvSpec& spec) { return Environment(spec); }

std::size_t Environment::action_count() const {
  return spec_.kind == EnvKind::kCombinationLock ? spec_.dial_count : 4;
}

std::size_t Environment::ground_state_count() const {
  if (spec_.kind != EnvKind::kCombinationLock) return spec_.grid_size * spec_.grid_size;
  std::size_t n = 1;
  for (std::size_t i = 0; i < spec_.dial_count; ++i) n *= spec_.digit_count;
  return n;
}

std::size_t Environment::observation_dimension() const {
  switch (spec_.kind) {
    case EnvKind::kColumnWorld: return 1;
    case EnvKind::kPointColumnWorld: return 2;
    case EnvKind::kCombinationLock: return spec_.dial_count * spec_.digit_count;
  }
  return 0;
}

std::vector<std::size_t> Environment::digits(std::size_t state) const {
  std::vector<std::size_t> d(spec_.dial_count);
  for (std::size_t i = spec_.dial_count; i-- > 0;) {
    d[i] = state % spec_.digit_count;
    state /= spec_.digit_count;
  }
  return d;
}

std::size_t Environment::pack(const std::vector<std::size_t>& digits) const {
  std::size_t s = 0;
  for (std::size_t d : digits) s = s * spec_.digit_count + d;
  return s;
}

bool Environment::matches_goal(const std::vector<std::size_t>& digits) const {
  for (std::size_t i = 0; i < spec_.dial_count; ++i) {
    if (spec_.goal[i] && *spec_.goal[i] != digits[i]) return false;
  }
  return true;
}

std::size_t Environment::reset(Rng& rng) const {
  const std::size_t g = spec_.grid_size;
  if (spec_.kind == EnvKind::kCombinationLock) {
    return spec_.start == StartMode::kUniform ? rng.index(ground_state_count()) : 0;
  }
  switch (spec_.start) {
    case StartMode::kUniform: return rng.index(ground_state_count());
    case StartMode::kLeftColumn: return rng.index(g) * g;
    case StartMode::kDefault:
    case StartMode::kRightColumn: return rng.index(g) * g + (g - 1);
  }
  return 0;
}

std::vector<std::pair<std::size_t, double>> Environment::successors(std::size_t state,
                                                                     ActionId action) const {
  if (action >= action_count()) throw ConfigError("action out of range");
  if (state == terminal_state()) return {{state, 1.0}};
  if (state > terminal_state()) throw ConfigError("hidden state out of range");

  if (spec_.kind != EnvKind::kCombinationLock) {
    const std::size_t g = spec_.grid_size;
    std::size_t row = state / g;
    std::size_t col = state % g;
    const std::size_t old_col = col;
    switch (action) {
      case 0: row = row == 0 ? 0 : row - 1; break;
      case 1: row = std::min(row + 1, g - 1); break;
      case 2: col = col == 0 ? 0 : col - 1; break;
      default: col = std::min(col + 1, g - 1); break;
    }
    if (col == g - 1 && old_col != g - 1) return {{terminal_state(), 1.0}};
    return {{row * g + col, 1.0}};
  }

  const std::size_t n = spec_.digit_count;
  std::vector<std::size_t> d = digits(state);
  std::vector<std::vector<std::size_t>> outcomes;
  if (action == spec_.broken_dial) {
    for (std::size_t k = 0; k < n; ++k) {
      auto e = d;
      e[action] = k;
      outcomes.push_back(std::move(e));
    }
  } else if (spec_.variant == TransferVariant::kSwapDigits && action == 0) {
    std::swap(d[0], d[1]);
    outcomes.push_back(d);
  } else if (spec_.variant == TransferVariant::kReversedDial && action == 1) {
    d[1] = (d[1] + n - 1) % n;
    outcomes.push_back(d);
  } else {
    d[action] = (d[action] + 1) % n;
    outcomes.push_back(d);
  }
  std::map<std::size_t, double> merged;
  const double p = 1.0 / static_cast<double>(outcomes.size());
  for (const auto& e : outcomes) {
    merged[matches_goal(e) ? terminal_state() : pack(e)] += p;
  }
  return {merged.begin(), merged.end()};
}

double Environment::transition_reward(std::size_t state, std::size_t next) const {
  return (state != terminal_state() && next == terminal_state()) ? 1.0 : 0.0;
}

StepResult Environment::step(std::size_t state, ActionId action, Rng& rng) const {
  auto succ = successors(state, action);
  std::size_t next = succ.back().first;
  if (succ.size() > 1) {
    // Broken dial: draw the new digit first, then map through goal matching.
    if (spec_.kind == EnvKind::kCombinationLock && action == spec_.broken_dial) {
      auto d = digits(state);
      d[action] = rng.index(spec_.digit_count);
      next = matches_goal(d) ? terminal_state() : pack(d);
    } else {
      double u = rng.uniform();
      for (const auto& [s, p] : succ) {
        if (u < p) {
          next = s;
          break;
        }
        u -= p;
      }
    }
  }
  return {next, transition_reward(state, next), next == terminal_state()};
}

Observation Environment::terminal_observation() const {
  switch (spec_.kind) {
    case EnvKind::kColumnWorld: return Observation::discrete(terminal_state());
    case EnvKind::kPointColumnWorld: return Observation::vector({-1.0, -1.0});
    case EnvKind::kCombinationLock:
      return Observation::vector(std::vector<double>(observation_dimension(), 0.0));
  }
  return {};
}

Observation Environment::emit(std::size_t state, Rng& rng) const {
  if (state == terminal_state()) return terminal_observation();
  if (state > terminal_state()) throw ConfigError("hidden state out of range");
  switch (spec_.kind) {
    case EnvKind::kColumnWorld: return Observation::discrete(state);
    case EnvKind::kPointColumnWorld: {
      const std::size_t g = spec_.grid_size;
      const double row = static_cast<double>(state / g);
      const double col = static_cast<double>(state % g);
      const double x = col + rng.uniform();
      const double y = static_cast<double>(g) - 1.0 - row + rng.uniform();
      return Observation::vector({x, y});
    }
    case EnvKind::kCombinationLock: {
      std::vector<double> v(observation_dimension(), 0.0);
      const auto d = digits(state);
      for (std::size_t i = 0; i < spec_.dial_count; ++i) v[i * spec_.digit_count + d[i]] = 1.0;
      if (spec_.noise > 0.0) {
        for (double& x : v) x += rng.uniform(-spec_.noise, spec_.noise);
      }
      return Observation::vector(std::move(v));
    }
  }
  return {};
}

std::size_t Environment::label(const Observation& obs) const {
  if (obs == terminal_observation()) return terminal_state();
  switch (spec_.kind) {
    case EnvKind::kColumnWorld: {
      const std::size_t s = obs.index();
      if (s > terminal_state()) throw ConfigError("observation out of range");
      return s;
    }
    case EnvKind::kPointColumnWorld: {
      const auto v = obs.values();
      const double g = static_cast<double>(spec_.grid_size);
      if (v.size() != 2 || !(v[0] > 0.0 && v[0] < g && v[1] > 0.0 && v[1] < g)) {
        throw ConfigError("point observation outside the grid");
      }
      const auto col = static_cast<std::size_t>(std::floor(v[0]));
      const auto row = spec_.grid_size - 1 - static_cast<std::size_t>(std::floor(v[1]));
      return row * spec_.grid_size + col;
    }
    case EnvKind::kCombinationLock: {
      const auto v = obs.values();
      if (v.size() != observation_dimension()) throw ConfigError("observation has the wrong dimension");
      std::vector<std::size_t> d(spec_.dial_count);
      for (std::size_t i = 0; i < spec_.dial_count; ++i) {
        const auto block = v.subspan(i * spec_.digit_count, spec_.digit_count);
        d[i] = static_cast<std::size_t>(std::max_element(block.begin(), block.end()) - block.begin());
        if (block[d[i]] < 0.5) return terminal_state();
      }
      return pack(d);
    }
  }
  return 0;
}

TabularMdp Environment::tabular_model() const {
  const std::size_t n = ground_state_count() + 1;
  TabularMdp mdp(n, action_count());
  for (std::size_t a = 0; a < action_count(); ++a) {
    for (std::size_t s = 0; s < n; ++s) {
      double expected = 0.0;
      for (const auto& [next, p] : successors(s, a)) {
        mdp.transition[a](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(next)) += p;
        expected += p * transition_reward(s, next);
      }
      mdp.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = expected;
    }
  }
  mdp.terminal[terminal_state()] = true;
  return mdp;
}

GroundStates enumerate_ground_states(const Environment& env) {
  GroundStates out;
  out.states.resize(env.ground_state_count());
  for (std::size_t s = 0; s < out.states.size(); ++s) out.states[s] = s;
  out.terminal_label = env.terminal_state();
  out.label = [env](const Observation& obs) { return env.label(obs); };
  return out;
}

Policy uniform_policy(std::size_t action_count) {
  if (action_count == 0) throw ConfigError("action_count must be >= 1");
  return [action_count](const Observation&, Rng& rng) { return rng.index(action_count); };
}

TrajectoryDataset sample_trajectories(const Environment& env, const Policy& policy,
                                      std::size_t count, std::size_t max_len, std::uint64_t seed) {
  if (count < 1) throw ConfigError("count must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  TrajectoryDataset data(env.action_count());
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    std::size_t state = env.reset(rng);
    Observation obs = env.emit(state, rng);
    std::vector<Transition> steps;
    for (std::size_t t = 0; t < max_len; ++t) {
      const ActionId a = policy(obs, rng);
      const StepResult r = env.step(state, a, rng);
      Observation next_obs = env.emit(r.next_state, rng);
      steps.push_back({obs, a, r.reward, next_obs, r.terminal});
      if (r.terminal) break;
      state = r.next_state;
      obs = std::move(next_obs);
    }
    data.add_trajectory(std::move(steps));
  }
  return data;
}

}  // namespace rpr
