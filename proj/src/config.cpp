#include "rpr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rpr/error.hpp"

namespace rpr {

namespace {

using nlohmann::json;

/// Rejects keys outside `allowed` so typos surface as errors.
void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.contains(key)) throw ConfigError(where + (where.empty() ? "" : ".") + key + ": unknown key");
  }
}

std::string field(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

template <typename T>
void read(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field(where, key) + ": wrong type");
  }
}

void read_size(const json& j, const std::string& where, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(field(where, key) + ": expected a non-negative integer");
  }
  out = v.get<std::size_t>();
}

void read_seed(const json& j, const std::string& where, const char* key, std::uint64_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError(field(where, key) + ": expected a non-negative integer");
  }
  out = v.get<std::uint64_t>();
}

template <class Parse>
auto parse_named(const std::string& where, const char* key, const std::string& text, Parse parse) {
  try {
    return parse(text);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    const std::string own = std::string(key) + ": ";
    if (msg.starts_with(own)) msg.erase(0, own.size());
    throw ConfigError(field(where, key) + ": " + msg);
  }
}

EnvSpec parse_env(const json& j, const std::string& where) {
  check_keys(j, where,
             {"kind", "grid_size", "dial_count", "digit_count", "broken_dial", "goal", "variant", "noise", "start"});
  EnvSpec spec;
  std::string text;
  if (j.contains("kind")) {
    read(j, where, "kind", text);
    spec.kind = parse_named(where, "kind", text, parse_env_kind);
  }
  read_size(j, where, "grid_size", spec.grid_size);
  read_size(j, where, "dial_count", spec.dial_count);
  read_size(j, where, "digit_count", spec.digit_count);
  read_size(j, where, "broken_dial", spec.broken_dial);
  if (j.contains("goal")) {
    const auto& g = j.at("goal");
    if (!g.is_array()) throw ConfigError(field(where, "goal") + ": expected an array");
    spec.goal.clear();
    for (const auto& e : g) {
      if (e.is_null() || (e.is_string() && e.get<std::string>() == "*")) {
        spec.goal.emplace_back(std::nullopt);
      } else if (e.is_number_integer() && e.get<long long>() >= 0) {
        spec.goal.emplace_back(e.get<std::size_t>());
      } else {
        throw ConfigError(field(where, "goal") + ": entries must be digits, null or \"*\"");
      }
    }
  } else if (spec.kind == EnvKind::kCombinationLock && spec.goal.size() != spec.dial_count) {
    throw ConfigError(field(where, "goal") + ": required when dial_count differs from 3");
  }
  if (j.contains("variant")) {
    read(j, where, "variant", text);
    spec.variant = parse_named(where, "variant", text, parse_transfer_variant);
  }
  read(j, where, "noise", spec.noise);
  if (j.contains("start")) {
    read(j, where, "start", text);
    spec.start = parse_named(where, "start", text, parse_start_mode);
  }
  try {
    make_env(spec);
  } catch (const ConfigError& e) {
    throw ConfigError(where + "." + e.what());
  }
  return spec;
}

FitConfig parse_fit(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "hidden", "learning_rate", "epochs", "batch_size", "k"});
  FitConfig fit;
  if (j.contains("kind")) {
    std::string text;
    read(j, where, "kind", text);
    try {
      fit.kind = parse_model_kind(text);
    } catch (const ConfigError&) {
      throw ConfigError(field(where, "kind") + ": expected tabular, knn or mlp");
    }
  }
  if (j.contains("hidden")) {
    const auto& h = j.at("hidden");
    if (!h.is_array()) throw ConfigError(field(where, "hidden") + ": expected an array");
    fit.hidden.clear();
    for (const auto& e : h) {
      if (!e.is_number_integer() || e.get<long long>() <= 0) {
        throw ConfigError(field(where, "hidden") + ": layer sizes must be positive integers");
      }
      fit.hidden.push_back(e.get<std::size_t>());
    }
  }
  read(j, where, "learning_rate", fit.learning_rate);
  read_size(j, where, "epochs", fit.epochs);
  read_size(j, where, "batch_size", fit.batch_size);
  read_size(j, where, "k", fit.k);
  try {
    fit.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + "." + e.what());
  }
  return fit;
}

RefineConfig parse_refine(const json& j, const std::string& where) {
  check_keys(j, where,
             {"eps_r", "eps_psi", "gamma", "max_iterations", "spurious_fraction", "reward_bin_width", "sf_distance",
              "warm_start", "reward_fit", "sf_fit", "representation_fit"});
  RefineConfig cfg;
  read(j, where, "eps_r", cfg.eps_r);
  read(j, where, "eps_psi", cfg.eps_psi);
  read(j, where, "gamma", cfg.gamma);
  read_size(j, where, "max_iterations", cfg.max_iterations);
  read(j, where, "spurious_fraction", cfg.spurious_fraction);
  read(j, where, "reward_bin_width", cfg.reward_bin_width);
  if (j.contains("sf_distance")) {
    std::string text;
    read(j, where, "sf_distance", text);
    cfg.sf_distance = parse_named(where, "sf_distance", text, parse_distance);
  }
  read(j, where, "warm_start", cfg.warm_start);
  if (j.contains("reward_fit")) cfg.reward_fit = parse_fit(j.at("reward_fit"), field(where, "reward_fit"));
  if (j.contains("sf_fit")) cfg.sf_fit = parse_fit(j.at("sf_fit"), field(where, "sf_fit"));
  if (j.contains("representation_fit")) {
    cfg.representation_fit = parse_fit(j.at("representation_fit"), field(where, "representation_fit"));
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + "." + e.what());
  }
  return cfg;
}

AgentConfig parse_agent(const json& j, const std::string& where) {
  check_keys(j, where, {"learning_rate", "episodes", "ramp_episodes", "gamma", "max_steps"});
  AgentConfig cfg;
  read(j, where, "learning_rate", cfg.learning_rate);
  read_size(j, where, "episodes", cfg.episodes);
  read_size(j, where, "ramp_episodes", cfg.ramp_episodes);
  read(j, where, "gamma", cfg.gamma);
  read_size(j, where, "max_steps", cfg.max_steps);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + "." + e.what());
  }
  return cfg;
}

}  // namespace

void ExperimentConfig::validate() const {
  make_env(env);
  if (dataset.trajectories == 0) throw ConfigError("dataset.trajectories: must be >= 1");
  if (dataset.max_length == 0) throw ConfigError("dataset.max_length: must be >= 1");
  refine.validate();
  agent.validate();
  if (transfer) {
    if (transfer->repeats == 0) throw ConfigError("transfer.repeats: must be >= 1");
    if (transfer->tests.empty()) throw ConfigError("transfer.tests: at least one test task is required");
  }
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  env.seed = s;
  refine.seed = s;
  agent.seed = s;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "", {"name", "seed", "env", "dataset", "refine", "agent", "transfer", "output_dir"});
  ExperimentConfig cfg;
  read(j, "", "name", cfg.name);
  std::uint64_t seed = 0;
  read_seed(j, "", "seed", seed);
  if (j.contains("env")) cfg.env = parse_env(j.at("env"), "env");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "dataset", {"trajectories", "max_length", "test_trajectories"});
    read_size(d, "dataset", "trajectories", cfg.dataset.trajectories);
    read_size(d, "dataset", "max_length", cfg.dataset.max_length);
    read_size(d, "dataset", "test_trajectories", cfg.dataset.test_trajectories);
  }
  if (j.contains("refine")) cfg.refine = parse_refine(j.at("refine"), "refine");
  if (j.contains("agent")) cfg.agent = parse_agent(j.at("agent"), "agent");
  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    check_keys(t, "transfer", {"tests", "repeats", "pretrain_episodes"});
    TransferConfig tc;
    if (t.contains("tests")) {
      if (!t.at("tests").is_array()) throw ConfigError("transfer.tests: expected an array");
      std::size_t i = 0;
      for (const auto& e : t.at("tests")) tc.tests.push_back(parse_env(e, "transfer.tests[" + std::to_string(i++) + "]"));
    }
    read_size(t, "transfer", "repeats", tc.repeats);
    read_size(t, "transfer", "pretrain_episodes", tc.pretrain_episodes);
    cfg.transfer = std::move(tc);
  }
  if (j.contains("output_dir")) {
    std::string dir;
    read(j, "", "output_dir", dir);
    cfg.output_dir = dir;
  }
  cfg.set_seed(seed);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

EnvSpec parse_env_spec_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("env spec is not valid JSON: ") + e.what());
  }
  return parse_env(j, "env");
}

}  // namespace rpr
