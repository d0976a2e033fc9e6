#include "rpr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "rpr/error.hpp"

namespace rpr {

TrajectoryDataset::TrajectoryDataset(std::size_t action_count) : action_count_(action_count) {
  if (action_count == 0) throw ConfigError("action_count must be >= 1");
}

std::size_t TrajectoryDataset::intern(const Observation& obs) {
  if (!instances_.empty()) {
    const Observation& first = instances_.front();
    if (first.is_discrete() != obs.is_discrete() || first.dimension() != obs.dimension()) {
      throw ConfigError("observation variant or dimension differs from the rest of the dataset");
    }
  }
  auto [it, inserted] = index_.try_emplace(obs, instances_.size());
  if (inserted) {
    instances_.push_back(obs);
    terminal_.push_back(0);
  }
  return it->second;
}

void TrajectoryDataset::add_trajectory(std::vector<Transition> steps) {
  if (steps.empty()) throw ConfigError("trajectory must contain at least one transition");
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const Transition& tr = steps[t];
    if (tr.action >= action_count_) throw ConfigError("action out of range in trajectory");
    if (!std::isfinite(tr.reward)) throw ConfigError("reward must be finite");
    if (tr.next_is_terminal && t + 1 != steps.size()) {
      throw ConfigError("only the final step of a trajectory may be terminal");
    }
    if (t + 1 < steps.size() && !(tr.next_state == steps[t + 1].state)) {
      throw ConfigError("trajectory is not chained: next_state differs from the following state");
    }
  }
  const std::size_t traj = trajectories_.size();
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const Transition& tr = steps[t];
    IndexedTransition it;
    it.trajectory = traj;
    it.step = t;
    it.state = intern(tr.state);
    it.action = tr.action;
    it.reward = tr.reward;
    it.next_state = intern(tr.next_state);
    it.next_is_terminal = tr.next_is_terminal;
    if (tr.next_is_terminal) terminal_[it.next_state] = 1;
    transitions_.push_back(it);
  }
  trajectories_.push_back(std::move(steps));
}

std::size_t TrajectoryDataset::instance_id(const Observation& obs) const {
  auto it = index_.find(obs);
  if (it == index_.end()) throw ConfigError("observation not present in dataset: " + obs.repr());
  return it->second;
}

std::size_t TrajectoryDataset::terminal_instance_count() const {
  return static_cast<std::size_t>(std::count(terminal_.begin(), terminal_.end(), 1));
}

void write_dataset_csv(const TrajectoryDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open dataset for writing: " + path.string());
  out << "trajectory_id,step,state_repr,action,reward,next_state_repr,terminal\n";
  const auto& trajs = data.trajectories();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (std::size_t t = 0; t < trajs[i].size(); ++t) {
      const Transition& tr = trajs[i][t];
      out << i << ',' << t << ',' << tr.state.repr() << ',' << tr.action << ','
          << format_double(tr.reward) << ',' << tr.next_state.repr() << ','
          << (tr.next_is_terminal ? 1 : 0) << '\n';
    }
  }
  if (!out) throw IoError("failed writing dataset: " + path.string());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

TrajectoryDataset read_dataset_csv(const std::filesystem::path& path, std::size_t action_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset is empty: " + path.string());

  struct Row {
    std::size_t traj, step;
    Transition tr;
  };
  std::vector<Row> rows;
  std::size_t max_action = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 7) throw IoError("dataset line " + std::to_string(line_no) + ": expected 7 columns");
    try {
      Row r;
      r.traj = std::stoull(f[0]);
      r.step = std::stoull(f[1]);
      r.tr.state = Observation::parse(f[2]);
      r.tr.action = std::stoull(f[3]);
      r.tr.reward = std::stod(f[4]);
      r.tr.next_state = Observation::parse(f[5]);
      r.tr.next_is_terminal = f[6] == "1";
      max_action = std::max(max_action, r.tr.action);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw IoError("dataset line " + std::to_string(line_no) + ": malformed field");
    }
  }
  TrajectoryDataset data(action_count == 0 ? max_action + 1 : action_count);
  std::vector<Transition> current;
  std::size_t current_id = 0;
  for (auto& r : rows) {
    if (!current.empty() && r.traj != current_id) {
      data.add_trajectory(std::move(current));
      current.clear();
    }
    if (current.empty()) current_id = r.traj;
    if (r.step != current.size()) throw IoError("dataset steps are not consecutive");
    current.push_back(std::move(r.tr));
  }
  if (!current.empty()) data.add_trajectory(std::move(current));
  return data;
}

}  // namespace rpr
