#include "rpr/lsfm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rpr/error.hpp"

namespace rpr {

std::size_t ClusterAssignment::ignored_count() const {
  return static_cast<std::size_t>(std::count(partition.begin(), partition.end(), kIgnored));
}

std::vector<std::size_t> ClusterAssignment::sizes() const {
  std::vector<std::size_t> out(partition_count, 0);
  for (std::size_t p : partition) {
    if (p != kIgnored) ++out.at(p);
  }
  return out;
}

void ClusterAssignment::validate() const {
  for (std::size_t p : partition) {
    if (p != kIgnored && p >= partition_count) throw ConfigError("partition index out of range");
  }
  if (terminal_partition && *terminal_partition >= partition_count) {
    throw ConfigError("terminal partition out of range");
  }
  const auto s = sizes();
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == 0) throw ConfigError("partition " + std::to_string(k) + " is empty");
  }
}

ClusterAssignment canonicalize(ClusterAssignment c) {
  std::vector<std::size_t> remap(c.partition_count, ClusterAssignment::kIgnored);
  std::size_t next = 0;
  for (std::size_t& p : c.partition) {
    if (p == ClusterAssignment::kIgnored) continue;
    if (remap.at(p) == ClusterAssignment::kIgnored) remap[p] = next++;
    p = remap[p];
  }
  if (c.terminal_partition) {
    const std::size_t t = remap.at(*c.terminal_partition);
    c.terminal_partition = t == ClusterAssignment::kIgnored ? std::nullopt : std::optional<std::size_t>(t);
  }
  c.partition_count = next;
  return c;
}

bool same_partition(const ClusterAssignment& a, const ClusterAssignment& b) {
  if (a.size() != b.size()) return false;
  const auto ca = canonicalize(a);
  const auto cb = canonicalize(b);
  return ca.partition == cb.partition;
}

double Lsfm::f_residual() const {
  const auto n = M_bar.rows();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  if (n == 0) return 0.0;
  return ((id - gamma * M_bar) * F - id).cwiseAbs().maxCoeff();
}

double Lsfm::f_a_residual() const {
  const auto n = M_bar.rows();
  if (n == 0) return 0.0;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  double worst = 0.0;
  for (std::size_t a = 0; a < M.size(); ++a) {
    worst = std::max(worst, (F_a[a] - (id + gamma * M[a] * F)).cwiseAbs().maxCoeff());
  }
  return worst;
}

namespace {

void check_domain(const TrajectoryDataset& data, const ClusterAssignment& c) {
  if (data.empty()) throw ConfigError("dataset is empty");
  if (c.size() != data.instance_count()) {
    throw ConfigError("cluster assignment covers " + std::to_string(c.size()) + " instances, dataset has " +
                      std::to_string(data.instance_count()));
  }
}

}  // namespace

std::vector<Eigen::VectorXd> estimate_reward_vectors(const TrajectoryDataset& data, const ClusterAssignment& c,
                                                     std::vector<std::string>* warnings) {
  check_domain(data, c);
  const std::size_t n = c.partition_count;
  const std::size_t na = data.action_count();
  std::vector<Eigen::VectorXd> sum(na, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
  std::vector<std::vector<std::size_t>> count(na, std::vector<std::size_t>(n, 0));
  for (const auto& t : data.transitions()) {
    const std::size_t p = c.partition[t.state];
    if (p == ClusterAssignment::kIgnored) continue;
    sum[t.action](static_cast<Eigen::Index>(p)) += t.reward;
    ++count[t.action][p];
  }
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      if (c.terminal_partition && *c.terminal_partition == i) {
        sum[a](static_cast<Eigen::Index>(i)) = 0.0;
      } else if (count[a][i] == 0) {
        if (warnings) {
          warnings->push_back("no transitions for partition " + std::to_string(i) + " under action " +
                              std::to_string(a) + "; reward set to 0");
        }
      } else {
        sum[a](static_cast<Eigen::Index>(i)) /= static_cast<double>(count[a][i]);
      }
    }
  }
  return sum;
}

TransitionEstimate estimate_transition_matrices(const TrajectoryDataset& data, const ClusterAssignment& c,
                                                std::vector<std::string>* warnings) {
  check_domain(data, c);
  const auto n = static_cast<Eigen::Index>(c.partition_count);
  const std::size_t na = data.action_count();
  TransitionEstimate out;
  out.M.assign(na, Eigen::MatrixXd::Zero(n, n));
  for (const auto& t : data.transitions()) {
    const std::size_t p = c.partition[t.state];
    const std::size_t q = c.partition[t.next_state];
    if (p == ClusterAssignment::kIgnored || q == ClusterAssignment::kIgnored) continue;
    out.M[t.action](static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) += 1.0;
  }
  for (std::size_t a = 0; a < na; ++a) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool terminal = c.terminal_partition && static_cast<Eigen::Index>(*c.terminal_partition) == i;
      const double total = out.M[a].row(i).sum();
      if (terminal || total == 0.0) {
        if (!terminal && warnings) {
          warnings->push_back("no transitions for partition " + std::to_string(i) + " under action " +
                              std::to_string(a) + "; using a self-loop");
        }
        out.M[a].row(i).setZero();
        out.M[a](i, i) = 1.0;
      } else {
        out.M[a].row(i) /= total;
      }
    }
  }
  out.M_bar = Eigen::MatrixXd::Zero(n, n);
  for (const auto& m : out.M) out.M_bar += m;
  out.M_bar /= static_cast<double>(na);
  return out;
}

FMatrices compute_f_matrices(const std::vector<Eigen::MatrixXd>& M, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma: must lie in [0, 1)");
  if (M.empty()) throw ConfigError("no transition matrices");
  const auto n = M.front().rows();
  Eigen::MatrixXd M_bar = Eigen::MatrixXd::Zero(n, n);
  for (const auto& m : M) {
    if (m.rows() != n || m.cols() != n) throw ConfigError("transition matrices have inconsistent shapes");
    M_bar += m;
  }
  M_bar /= static_cast<double>(M.size());
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd A = id - gamma * M_bar;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (n > 0 && !lu.isInvertible()) throw NumericError("I - gamma * M_bar is singular");
  FMatrices out;
  out.F = n > 0 ? Eigen::MatrixXd(lu.solve(id)) : Eigen::MatrixXd(0, 0);
  if (!out.F.allFinite()) throw NumericError("non-finite entries in F");
  for (const auto& m : M) out.F_a.push_back(id + gamma * m * out.F);
  return out;
}

Lsfm build_lsfm(const TrajectoryDataset& data, const ClusterAssignment& c, double gamma,
                std::vector<std::string>* warnings) {
  Lsfm m;
  m.gamma = gamma;
  m.terminal_partition = c.terminal_partition;
  m.w = estimate_reward_vectors(data, c, warnings);
  auto tr = estimate_transition_matrices(data, c, warnings);
  auto f = compute_f_matrices(tr.M, gamma);
  m.M = std::move(tr.M);
  m.M_bar = std::move(tr.M_bar);
  m.F = std::move(f.F);
  m.F_a = std::move(f.F_a);
  return m;
}

Eigen::VectorXd predict_sf(const Eigen::MatrixXd& F, std::size_t partition, const Eigen::VectorXd& next_distribution,
                           double gamma) {
  const auto n = F.rows();
  if (F.cols() != n || next_distribution.size() != n) throw ConfigError("predict_sf: dimension mismatch");
  if (partition >= static_cast<std::size_t>(n)) throw ConfigError("predict_sf: partition out of range");
  Eigen::VectorXd psi = gamma * (F.transpose() * next_distribution);
  psi(static_cast<Eigen::Index>(partition)) += 1.0;
  return psi;
}

Eigen::VectorXd predict_sf(const ClusterAssignment& c, const Eigen::MatrixXd& F, const Classifier& f_i,
                           const TrajectoryDataset& data, std::size_t instance, ActionId action, double gamma) {
  if (f_i.class_count() != c.partition_count) throw ConfigError("predict_sf: classifier class count mismatch");
  const std::size_t p = c.partition.at(instance);
  if (p == ClusterAssignment::kIgnored) throw ConfigError("predict_sf: instance is ignored");
  const auto dist = f_i.predict_distribution(data.instance(instance), action);
  const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(dist.data(), static_cast<Eigen::Index>(dist.size()));
  return predict_sf(F, p, d, gamma);
}

Eigen::VectorXd monte_carlo_sf(const Environment& env, const ClusterAssignment& c, const Policy& policy,
                               std::size_t state, ActionId action, double gamma, std::size_t horizon,
                               std::size_t rollouts, std::uint64_t seed) {
  if (rollouts == 0) throw ConfigError("rollouts must be >= 1");
  if (horizon == 0) throw ConfigError("horizon must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma: must lie in [0, 1)");
  if (c.size() != env.ground_state_count() + 1) throw ConfigError("clustering must cover every hidden state");
  if (action >= env.action_count()) throw ConfigError("action out of range");
  const auto n = static_cast<Eigen::Index>(c.partition_count);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  Rng rng(seed);
  for (std::size_t r = 0; r < rollouts; ++r) {
    std::size_t s = state;
    ActionId a = action;
    double discount = 1.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      if (s == env.terminal_state()) {
        // absorbing: the remaining horizon - t terms all land on the terminal feature
        const double tail = discount * (1.0 - std::pow(gamma, static_cast<double>(horizon - t))) / (1.0 - gamma);
        total(static_cast<Eigen::Index>(c.partition.at(s))) += tail;
        break;
      }
      total(static_cast<Eigen::Index>(c.partition.at(s))) += discount;
      if (t > 0) a = policy(env.emit(s, rng), rng);
      s = env.step(s, a, rng).next_state;
      discount *= gamma;
    }
  }
  return total / static_cast<double>(rollouts);
}

// ---------------------------------------------------------------------------
// CSV bundle

namespace {

void write_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << c;
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m(r, c));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("bad number '" + s + "' in " + path.string());
  }
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  const auto rows = read_csv_rows(path);
  if (rows.empty()) throw IoError("empty matrix file " + path.string());
  const std::size_t cols = rows.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw IoError("ragged row in " + path.string());
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = to_double(rows[r][c], path);
    }
  }
  return m;
}

}  // namespace

void write_lsfm_bundle(const Lsfm& m, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream meta(dir / "lsfm_meta.csv");
    if (!meta) throw IoError("cannot write " + (dir / "lsfm_meta.csv").string());
    meta << "gamma,partition_count,action_count,terminal_partition\n"
         << format_double(m.gamma) << ',' << m.partition_count() << ',' << m.action_count() << ','
         << (m.terminal_partition ? std::to_string(*m.terminal_partition) : std::string()) << '\n';
  }
  const auto n = static_cast<Eigen::Index>(m.partition_count());
  Eigen::MatrixXd w(static_cast<Eigen::Index>(m.action_count()), n);
  for (std::size_t a = 0; a < m.action_count(); ++a) w.row(static_cast<Eigen::Index>(a)) = m.w[a].transpose();
  write_matrix(w, dir / "w.csv");
  write_matrix(m.M_bar, dir / "M_bar.csv");
  write_matrix(m.F, dir / "F.csv");
  for (std::size_t a = 0; a < m.action_count(); ++a) {
    write_matrix(m.M[a], dir / ("M_" + std::to_string(a) + ".csv"));
    write_matrix(m.F_a[a], dir / ("F_" + std::to_string(a) + ".csv"));
  }
}

Lsfm read_lsfm_bundle(const std::filesystem::path& dir) {
  const auto meta_path = dir / "lsfm_meta.csv";
  const auto meta = read_csv_rows(meta_path);
  if (meta.size() != 2 || meta[1].size() < 3) throw IoError("malformed " + meta_path.string());
  Lsfm m;
  m.gamma = to_double(meta[1][0], meta_path);
  const auto n = static_cast<std::size_t>(to_double(meta[1][1], meta_path));
  const auto na = static_cast<std::size_t>(to_double(meta[1][2], meta_path));
  if (meta[1].size() > 3 && !meta[1][3].empty()) {
    m.terminal_partition = static_cast<std::size_t>(to_double(meta[1][3], meta_path));
  }
  const Eigen::MatrixXd w = read_matrix(dir / "w.csv");
  if (static_cast<std::size_t>(w.rows()) != na || static_cast<std::size_t>(w.cols()) != n) {
    throw IoError("w.csv does not match lsfm_meta.csv");
  }
  for (std::size_t a = 0; a < na; ++a) m.w.push_back(w.row(static_cast<Eigen::Index>(a)).transpose());
  m.M_bar = read_matrix(dir / "M_bar.csv");
  m.F = read_matrix(dir / "F.csv");
  for (std::size_t a = 0; a < na; ++a) {
    m.M.push_back(read_matrix(dir / ("M_" + std::to_string(a) + ".csv")));
    m.F_a.push_back(read_matrix(dir / ("F_" + std::to_string(a) + ".csv")));
  }
  for (const auto* mat : {&m.M_bar, &m.F}) {
    if (static_cast<std::size_t>(mat->rows()) != n || static_cast<std::size_t>(mat->cols()) != n) {
      throw IoError("matrix shape does not match lsfm_meta.csv");
    }
  }
  return m;
}

}  // namespace rpr
