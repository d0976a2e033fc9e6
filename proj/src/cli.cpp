#include "rpr/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "rpr/agents.hpp"
#include "rpr/config.hpp"
#include "rpr/dataset.hpp"
#include "rpr/env.hpp"
#include "rpr/error.hpp"
#include "rpr/eval.hpp"
#include "rpr/lsfm.hpp"
#include "rpr/refine.hpp"

namespace rpr {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string dataset;
  std::string model;
  std::string out;
  std::optional<std::uint64_t> seed_override;
  bool quiet = false;
};

using Manifest = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const fs::path& dir, const Manifest& entries) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
  if (!out) throw IoError("failed writing manifest in " + dir.string());
}

std::map<std::string, std::string> read_manifest(const fs::path& path) {
  std::map<std::string, std::string> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path prepare_dir(const Options& opt, const ExperimentConfig& cfg) {
  const fs::path dir = opt.out.empty() ? cfg.output_dir : fs::path(opt.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

ExperimentConfig load_config(const Options& opt) {
  if (opt.config.empty()) throw ConfigError("--config is required");
  if (!fs::exists(opt.config)) throw ConfigError("config file not found: " + opt.config);
  ExperimentConfig cfg = load_experiment_config(opt.config);
  if (opt.seed_override) cfg.set_seed(*opt.seed_override);
  return cfg;
}

void env_manifest(Manifest& m, const EnvSpec& env) {
  m.emplace_back("env.kind", to_string(env.kind));
  m.emplace_back("env.variant", to_string(env.variant));
  m.emplace_back("env.start", to_string(env.start));
  m.emplace_back("env.noise", format_double(env.noise));
  if (env.kind == EnvKind::kCombinationLock) {
    m.emplace_back("env.dial_count", std::to_string(env.dial_count));
    m.emplace_back("env.digit_count", std::to_string(env.digit_count));
    m.emplace_back("env.broken_dial", std::to_string(env.broken_dial));
    std::string goal;
    for (std::size_t i = 0; i < env.goal.size(); ++i) {
      goal += (i ? "," : "") + (env.goal[i] ? std::to_string(*env.goal[i]) : std::string("*"));
    }
    m.emplace_back("env.goal", goal);
  } else {
    m.emplace_back("env.grid_size", std::to_string(env.grid_size));
  }
}

int cmd_generate(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt);
  const fs::path dir = prepare_dir(opt, cfg);
  const Environment env = make_env(cfg.env);
  const auto policy = uniform_policy(env.action_count());
  const auto train = sample_trajectories(env, policy, cfg.dataset.trajectories, cfg.dataset.max_length, cfg.seed);
  write_dataset_csv(train, dir / "dataset.csv");
  std::size_t test_count = 0;
  if (cfg.dataset.test_trajectories > 0) {
    const auto test = sample_trajectories(env, policy, cfg.dataset.test_trajectories, cfg.dataset.max_length,
                                          derive_seed(cfg.seed, 1));
    write_dataset_csv(test, dir / "test_dataset.csv");
    test_count = test.trajectory_count();
  }
  Manifest m{{"command", "generate"}, {"config", opt.config}, {"name", cfg.name}, {"seed", std::to_string(cfg.seed)}};
  env_manifest(m, cfg.env);
  m.emplace_back("dataset", "dataset.csv");
  m.emplace_back("trajectories", std::to_string(train.trajectory_count()));
  m.emplace_back("transitions", std::to_string(train.transitions().size()));
  m.emplace_back("instances", std::to_string(train.instance_count()));
  if (test_count) {
    m.emplace_back("test_dataset", "test_dataset.csv");
    m.emplace_back("test_trajectories", std::to_string(test_count));
  }
  write_manifest(dir, m);
  if (!opt.quiet) {
    out << "wrote " << train.trajectory_count() << " trajectories (" << train.transitions().size()
        << " transitions) to " << (dir / "dataset.csv").string() << '\n';
  }
  return kExitOk;
}

int cmd_refine(const Options& opt, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = load_config(opt);
  if (opt.dataset.empty()) throw ConfigError("--dataset is required");
  const Environment env = make_env(cfg.env);
  const auto data = read_dataset_csv(opt.dataset, env.action_count());
  const fs::path dir = prepare_dir(opt, cfg);

  const RefineResult result = refine_to_fixpoint(data, cfg.refine);
  if (!opt.quiet) {
    for (const auto& r : result.trace.iterations) {
      out << "iteration " << r.iteration << " (" << r.step << "): " << r.partition_count() << " partitions";
      if (r.ignored_count()) out << ", " << r.ignored_count() << " ignored";
      out << '\n';
      for (const auto& w : r.warnings) err << "warning: " << w << '\n';
    }
    const std::size_t terminal = result.assignment.terminal_partition ? 1 : 0;
    out << "final: " << result.assignment.partition_count - terminal << " non-terminal partitions"
        << (terminal ? " + terminal" : "") << (result.converged ? "" : " (not converged)") << '\n';
  }
  write_trace_csv(result.trace, dir / "trace.csv");
  write_assignment_csv(result.assignment, dir / "assignment.csv");
  write_text(dir / "representation.json", result.representation.serialize());
  write_lsfm_bundle(result.lsfm, dir / "lsfm");
  write_text(dir / "config.json", read_text(opt.config));

  Manifest m{{"command", "refine"}, {"config", opt.config}, {"dataset", opt.dataset}, {"name", cfg.name},
             {"seed", std::to_string(cfg.refine.seed)}};
  env_manifest(m, cfg.env);
  m.emplace_back("converged", result.converged ? "true" : "false");
  m.emplace_back("iterations", std::to_string(result.iterations));
  m.emplace_back("partition_count", std::to_string(result.assignment.partition_count));
  m.emplace_back("ignored_count", std::to_string(result.assignment.ignored_count()));
  m.emplace_back("representation", "representation.json");
  m.emplace_back("lsfm", "lsfm");
  write_manifest(dir, m);
  if (!result.converged) {
    err << "refinement did not converge within " << cfg.refine.max_iterations << " iterations\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_eval(const Options& opt, std::ostream& out) {
  if (opt.model.empty()) throw ConfigError("--model is required");
  if (opt.dataset.empty()) throw ConfigError("--dataset is required");
  const fs::path model_dir = opt.model;
  LatentModel model;
  model.representation = Classifier::deserialize(read_text(model_dir / "representation.json"));
  model.lsfm = read_lsfm_bundle(model_dir / "lsfm");
  model.validate();
  const auto test = read_dataset_csv(opt.dataset, model.lsfm.action_count());

  std::optional<ExperimentConfig> cfg;
  if (!opt.config.empty()) {
    cfg = load_config(opt);
  } else if (fs::exists(model_dir / "config.json")) {
    cfg = load_experiment_config(model_dir / "config.json");
  }
  const fs::path dir = !opt.out.empty() ? fs::path(opt.out) : model_dir / "eval";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

  const auto manifest = read_manifest(model_dir / "manifest.txt");
  std::size_t iteration = 0;
  if (auto it = manifest.find("iterations"); it != manifest.end()) iteration = std::stoul(it->second);

  const auto errors = reward_sequence_error(model, test);
  write_errors_csv({{iteration, errors}}, dir / "errors.csv");
  Manifest m{{"command", "eval"}, {"model", opt.model}, {"dataset", opt.dataset},
             {"trajectories", std::to_string(errors.size())}, {"median_error", format_double(median(errors))}};
  if (cfg) {
    const Environment env = make_env(cfg->env);
    const auto ground = enumerate_ground_states(env);
    const auto cm = confusion_matrix(test, model, ground.label);
    write_confusion_csv(cm, dir / "confusion.csv");
    m.emplace_back("confusion", "confusion.csv");
    m.emplace_back("purity", format_double(purity(cm)));
  }
  write_manifest(dir, m);
  if (!opt.quiet) {
    out << "median reward-sequence error over " << errors.size() << " trajectories: " << format_double(median(errors))
        << '\n';
  }
  return kExitOk;
}

int cmd_transfer(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt);
  if (!cfg.transfer) throw ConfigError("transfer: section required");
  const fs::path dir = prepare_dir(opt, cfg);
  TransferSuiteConfig suite;
  suite.train = cfg.env;
  suite.tests = cfg.transfer->tests;
  suite.train_trajectories = cfg.dataset.trajectories;
  suite.max_trajectory_length = cfg.dataset.max_length;
  suite.refine = cfg.refine;
  suite.agent = cfg.agent;
  suite.pretrain_episodes = cfg.transfer->pretrain_episodes;
  suite.repeats = cfg.transfer->repeats;
  suite.seed = cfg.seed;
  const auto rows = run_transfer_suite(suite);
  write_transfer_summary_csv(rows, dir / "transfer_summary.csv");
  write_curves_csv(rows, dir / "curves.csv");
  Manifest m{{"command", "transfer"}, {"config", opt.config}, {"name", cfg.name}, {"seed", std::to_string(cfg.seed)},
             {"repeats", std::to_string(suite.repeats)}};
  env_manifest(m, cfg.env);
  write_manifest(dir, m);
  if (!opt.quiet) {
    for (const auto& spec : suite.tests) {
      const std::string task = task_name(spec);
      for (auto kind : {AgentKind::kScratch, AgentKind::kPretrainedInit, AgentKind::kRewardPredictive}) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& r : rows) {
          if (r.task == task && r.agent == kind) {
            sum += r.reward_per_step;
            ++n;
          }
        }
        out << task << ' ' << to_string(kind) << ": mean reward per step " << format_double(sum / static_cast<double>(n))
            << '\n';
      }
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reward-predictive state abstraction from offline trajectories"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", opt.out, "Output directory (defaults to the config's output_dir)");
    cmd->add_flag("--quiet", opt.quiet, "Suppress progress output");
  };
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed-override", seed, "Replace the config's seed");
  };

  auto* gen = app.add_subcommand("generate", "Sample a trajectory dataset");
  gen->add_option("--config", opt.config, "Experiment config (JSON)")->required();
  add_seed(gen);
  add_common(gen);

  auto* ref = app.add_subcommand("refine", "Run partition refinement on a dataset");
  ref->add_option("--config", opt.config, "Experiment config (JSON)")->required();
  ref->add_option("--dataset", opt.dataset, "Dataset CSV")->required();
  add_seed(ref);
  add_common(ref);

  auto* ev = app.add_subcommand("eval", "Evaluate a refined model on held-out trajectories");
  ev->add_option("--model", opt.model, "Output directory of a refine run")->required();
  ev->add_option("--dataset", opt.dataset, "Test dataset CSV")->required();
  ev->add_option("--config", opt.config, "Experiment config; defaults to the copy saved by refine");
  add_common(ev);

  auto* tr = app.add_subcommand("transfer", "Run the agent comparison on transfer tasks");
  tr->add_option("--config", opt.config, "Experiment config (JSON)")->required();
  add_seed(tr);
  add_common(tr);

  // CLI11 takes the arguments reversed and without the program name
  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  for (auto* cmd : {gen, ref, tr}) {
    if (cmd->parsed() && cmd->count("--seed-override")) opt.seed_override = seed;
  }

  try {
    if (gen->parsed()) return cmd_generate(opt, out);
    if (ref->parsed()) return cmd_refine(opt, out, err);
    if (ev->parsed()) return cmd_eval(opt, out);
    if (tr->parsed()) return cmd_transfer(opt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace rpr
