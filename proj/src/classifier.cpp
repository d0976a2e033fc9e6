#include "rpr/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "rpr/error.hpp"
#include "rpr/rng.hpp"

namespace rpr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Classifier::Impl {
  ModelKind kind = ModelKind::kTabular;
  std::size_t class_count = 0;
  std::size_t action_count = 0;
  bool discrete_input = true;
  std::size_t observation_dim = 0;  // vector length, or one-hot width for discrete mlp input
  FitDiagnostics diagnostics;

  // tabular
  std::unordered_map<Observation, std::size_t, ObservationHash> table_index;
  std::vector<Observation> table_states;
  std::vector<std::vector<double>> table_counts;  // [state][action * class_count + label]

  // knn
  std::size_t k = 1;
  std::vector<RowMatrix> knn_points;  // per action
  std::vector<std::vector<std::size_t>> knn_labels;

  // mlp
  Mlp net;

  void check_query(const Observation& state, ActionId action) const {
    if (action >= action_count) throw ConfigError("action out of range for classifier");
    if (state.is_discrete() != discrete_input) {
      throw ConfigError("observation variant differs from the classifier's training data");
    }
    if (!discrete_input && state.dimension() != observation_dim) {
      throw ConfigError("observation dimension differs from the classifier's training data");
    }
  }

  void mlp_features(const Observation& state, ActionId action, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out) const {
    out.setZero();
    if (discrete_input) {
      if (state.index() < observation_dim) out(static_cast<Eigen::Index>(state.index())) = 1.0;
    } else {
      const auto v = state.values();
      for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    }
    out(static_cast<Eigen::Index>(observation_dim + action)) = 1.0;
  }

  std::vector<double> predict(const Observation& state, ActionId action) const {
    check_query(state, action);
    const double uniform = 1.0 / static_cast<double>(class_count);
    std::vector<double> p(class_count, uniform);
    switch (kind) {
      case ModelKind::kTabular: {
        auto it = table_index.find(state);
        if (it == table_index.end()) return p;
        const auto& counts = table_counts[it->second];
        const auto first = counts.begin() + static_cast<std::ptrdiff_t>(action * class_count);
        const double total = std::accumulate(first, first + static_cast<std::ptrdiff_t>(class_count), 0.0);
        if (total == 0.0) return p;
        for (std::size_t c = 0; c < class_count; ++c) p[c] = first[static_cast<std::ptrdiff_t>(c)] / total;
        return p;
      }
      case ModelKind::kKnn: {
        const RowMatrix& pts = knn_points[action];
        const std::size_t n = static_cast<std::size_t>(pts.rows());
        if (n == 0) return p;
        const auto v = state.values();
        Eigen::Map<const Eigen::RowVectorXd> q(v.data(), static_cast<Eigen::Index>(v.size()));
        const Eigen::VectorXd dist = (pts.rowwise() - q).rowwise().squaredNorm();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        const std::size_t kk = std::min(k, n);
        auto closer = [&](std::size_t a, std::size_t b) {
          const double da = dist(static_cast<Eigen::Index>(a));
          const double db = dist(static_cast<Eigen::Index>(b));
          return da < db || (da == db && a < b);
        };
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk - 1), order.end(), closer);
        std::fill(p.begin(), p.end(), 0.0);
        for (std::size_t i = 0; i < kk; ++i) p[knn_labels[action][order[i]]] += 1.0;
        for (double& x : p) x /= static_cast<double>(kk);
        return p;
      }
      case ModelKind::kMlp: {
        Eigen::RowVectorXd x(static_cast<Eigen::Index>(observation_dim + action_count));
        mlp_features(state, action, x);
        const Eigen::MatrixXd probs = net.probabilities(x);
        for (std::size_t c = 0; c < class_count; ++c) p[c] = probs(0, static_cast<Eigen::Index>(c));
        return p;
      }
    }
    return p;
  }
};

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTabular: return "tabular";
    case ModelKind::kKnn: return "knn";
    case ModelKind::kMlp: return "mlp";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  for (auto k : {ModelKind::kTabular, ModelKind::kKnn, ModelKind::kMlp}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("kind: unknown model kind '" + text + "'");
}

void FitConfig::validate() const {
  if (kind == ModelKind::kMlp) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate: must be positive");
    if (epochs == 0) throw ConfigError("epochs: must be positive");
    if (batch_size == 0) throw ConfigError("batch_size: must be positive");
    for (std::size_t h : hidden) {
      if (h == 0) throw ConfigError("hidden: layer sizes must be positive");
    }
  }
  if (kind == ModelKind::kKnn && k == 0) throw ConfigError("k: must be positive");
}

void LabeledSaDataset::add(Observation state, ActionId action, std::size_t label, bool ignored) {
  states.push_back(std::move(state));
  actions.push_back(action);
  labels.push_back(label);
  ignore.push_back(ignored);
}

const Classifier::Impl& Classifier::impl() const {
  if (!impl_) throw ConfigError("classifier has not been fitted");
  return *impl_;
}

ModelKind Classifier::kind() const { return impl().kind; }
std::size_t Classifier::class_count() const { return impl().class_count; }
std::size_t Classifier::action_count() const { return impl().action_count; }
const FitDiagnostics& Classifier::diagnostics() const { return impl().diagnostics; }

std::vector<double> Classifier::predict_distribution(const Observation& state, ActionId action) const {
  return impl().predict(state, action);
}

std::size_t Classifier::predict_class(const Observation& state, ActionId action) const {
  const auto p = predict_distribution(state, action);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

Eigen::MatrixXd Classifier::predict_batch(std::span<const Observation> states, ActionId action) const {
  const Impl& m = impl();
  const auto rows = static_cast<Eigen::Index>(states.size());
  const auto cols = static_cast<Eigen::Index>(m.class_count);
  if (m.kind == ModelKind::kMlp) {
    Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(m.observation_dim + m.action_count));
    for (Eigen::Index r = 0; r < rows; ++r) {
      m.check_query(states[static_cast<std::size_t>(r)], action);
      m.mlp_features(states[static_cast<std::size_t>(r)], action, x.row(r));
    }
    return m.net.probabilities(x);
  }
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto p = m.predict(states[static_cast<std::size_t>(r)], action);
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = p[static_cast<std::size_t>(c)];
  }
  return out;
}

const Mlp* Classifier::network() const {
  return impl_ && impl_->kind == ModelKind::kMlp ? &impl_->net : nullptr;
}

namespace {

void check_training_data(const LabeledSaDataset& data) {
  const std::size_t n = data.size();
  if (data.actions.size() != n || data.labels.size() != n || data.ignore.size() != n) {
    throw FitError("labeled dataset columns have different lengths");
  }
  if (data.class_count == 0) throw FitError("class_count must be positive");
  if (data.action_count == 0) throw FitError("action_count must be positive");
  std::vector<std::size_t> total(data.class_count, 0), unmasked(data.class_count, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (data.labels[i] >= data.class_count) {
      throw FitError("label " + std::to_string(data.labels[i]) + " is not below class_count");
    }
    if (data.actions[i] >= data.action_count) throw FitError("action out of range in labeled dataset");
    ++total[data.labels[i]];
    if (!data.ignore[i]) ++unmasked[data.labels[i]];
  }
  if (std::accumulate(unmasked.begin(), unmasked.end(), std::size_t{0}) == 0) {
    throw FitError("no unmasked rows to fit");
  }
  for (std::size_t c = 0; c < data.class_count; ++c) {
    if (total[c] > 0 && unmasked[c] == 0) {
      throw FitError("class " + std::to_string(c) + " has no unmasked rows");
    }
  }
  const Observation* first = nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    if (data.ignore[i]) continue;
    if (!first) {
      first = &data.states[i];
    } else if (first->is_discrete() != data.states[i].is_discrete() ||
               first->dimension() != data.states[i].dimension()) {
      throw FitError("training observations mix variants or dimensions");
    }
  }
}

}  // namespace

Classifier fit_classifier(const LabeledSaDataset& data, const FitConfig& cfg, const Classifier* warm_start) {
  cfg.validate();
  check_training_data(data);

  auto m = std::make_shared<Classifier::Impl>();
  m->kind = cfg.kind;
  m->class_count = data.class_count;
  m->action_count = data.action_count;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data.ignore[i]) rows.push_back(i);
  }
  const Observation& first = data.states[rows.front()];
  m->discrete_input = first.is_discrete();
  m->observation_dim = first.dimension();
  m->diagnostics.rows = rows.size();

  switch (cfg.kind) {
    case ModelKind::kTabular: {
      for (std::size_t i : rows) {
        auto [it, inserted] = m->table_index.try_emplace(data.states[i], m->table_states.size());
        if (inserted) {
          m->table_states.push_back(data.states[i]);
          m->table_counts.emplace_back(m->action_count * m->class_count, 0.0);
        }
        m->table_counts[it->second][data.actions[i] * m->class_count + data.labels[i]] += 1.0;
      }
      break;
    }
    case ModelKind::kKnn: {
      if (m->discrete_input) throw FitError("knn requires vector observations");
      m->k = cfg.k;
      m->knn_points.resize(m->action_count);
      m->knn_labels.resize(m->action_count);
      std::vector<std::vector<std::size_t>> by_action(m->action_count);
      for (std::size_t i : rows) by_action[data.actions[i]].push_back(i);
      for (std::size_t a = 0; a < m->action_count; ++a) {
        RowMatrix pts(static_cast<Eigen::Index>(by_action[a].size()), static_cast<Eigen::Index>(m->observation_dim));
        for (std::size_t r = 0; r < by_action[a].size(); ++r) {
          const auto v = data.states[by_action[a][r]].values();
          for (std::size_t c = 0; c < v.size(); ++c) pts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[c];
          m->knn_labels[a].push_back(data.labels[by_action[a][r]]);
        }
        m->knn_points[a] = std::move(pts);
      }
      m->diagnostics.loss = std::numeric_limits<double>::quiet_NaN();
      m->diagnostics.accuracy = std::numeric_limits<double>::quiet_NaN();
      break;
    }
    case ModelKind::kMlp: {
      if (m->discrete_input) {
        std::size_t mx = 0;
        for (std::size_t i : rows) mx = std::max(mx, data.states[i].index());
        m->observation_dim = mx + 1;
      }
      const std::size_t input_dim = m->observation_dim + m->action_count;
      Rng rng(cfg.seed);
      const Mlp* donor = warm_start && warm_start->fitted() ? warm_start->network() : nullptr;
      bool reused = false;
      if (donor && donor->input_dim() == input_dim && donor->layers().size() == cfg.hidden.size() + 1) {
        reused = true;
        for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
          if (static_cast<std::size_t>(donor->layers()[l].weight.rows()) != cfg.hidden[l]) reused = false;
        }
      }
      if (reused) {
        m->net = *donor;
        m->net.reset_output_layer(m->class_count, rng);
      } else {
        m->net = Mlp(input_dim, cfg.hidden, m->class_count, rng);
      }

      Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(input_dim));
      std::vector<std::size_t> y(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        m->mlp_features(data.states[rows[r]], data.actions[rows[r]], x.row(static_cast<Eigen::Index>(r)));
        y[r] = data.labels[rows[r]];
      }
      Adam adam(m->net, cfg.learning_rate);
      std::vector<std::size_t> order(rows.size());
      std::iota(order.begin(), order.end(), 0);
      std::vector<Mlp::Layer> grad;
      Eigen::MatrixXd bx;
      std::vector<std::size_t> by;
      for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
          const std::size_t end = std::min(order.size(), start + cfg.batch_size);
          bx.resize(static_cast<Eigen::Index>(end - start), x.cols());
          by.resize(end - start);
          for (std::size_t j = start; j < end; ++j) {
            bx.row(static_cast<Eigen::Index>(j - start)) = x.row(static_cast<Eigen::Index>(order[j]));
            by[j - start] = y[order[j]];
          }
          m->net.loss_and_gradient(bx, by, grad);
          adam.step(m->net, grad);
        }
      }
      const Eigen::MatrixXd probs = m->net.probabilities(x);
      double loss = 0.0;
      std::size_t correct = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        Eigen::Index arg = 0;
        probs.row(static_cast<Eigen::Index>(r)).maxCoeff(&arg);
        if (static_cast<std::size_t>(arg) == y[r]) ++correct;
        loss -= std::log(std::max(probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(y[r])), 1e-300));
      }
      m->diagnostics.loss = loss / static_cast<double>(rows.size());
      m->diagnostics.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
      return Classifier(std::move(m));
    }
  }

  if (cfg.kind == ModelKind::kTabular) {
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i : rows) {
      const auto p = m->predict(data.states[i], data.actions[i]);
      loss -= std::log(std::max(p[data.labels[i]], 1e-300));
      if (static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == data.labels[i]) ++correct;
    }
    m->diagnostics.loss = loss / static_cast<double>(rows.size());
    m->diagnostics.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  }
  return Classifier(std::move(m));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kFormat = "rpr-classifier";
constexpr int kVersion = 1;

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = data.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

}  // namespace

std::string Classifier::serialize() const {
  const Impl& m = impl();
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["kind"] = to_string(m.kind);
  j["class_count"] = m.class_count;
  j["action_count"] = m.action_count;
  j["discrete_input"] = m.discrete_input;
  j["observation_dim"] = m.observation_dim;
  j["diagnostics"] = {{"rows", m.diagnostics.rows},
                      {"loss", std::isnan(m.diagnostics.loss) ? nlohmann::json() : nlohmann::json(m.diagnostics.loss)},
                      {"accuracy", std::isnan(m.diagnostics.accuracy) ? nlohmann::json()
                                                                      : nlohmann::json(m.diagnostics.accuracy)}};
  switch (m.kind) {
    case ModelKind::kTabular: {
      auto entries = nlohmann::json::array();
      for (std::size_t i = 0; i < m.table_states.size(); ++i) {
        entries.push_back({{"state", m.table_states[i].repr()}, {"counts", m.table_counts[i]}});
      }
      j["table"] = std::move(entries);
      break;
    }
    case ModelKind::kKnn: {
      j["k"] = m.k;
      auto per_action = nlohmann::json::array();
      for (std::size_t a = 0; a < m.action_count; ++a) {
        per_action.push_back({{"points", matrix_to_json(m.knn_points[a])}, {"labels", m.knn_labels[a]}});
      }
      j["neighbors"] = std::move(per_action);
      break;
    }
    case ModelKind::kMlp: {
      auto layers = nlohmann::json::array();
      for (const auto& l : m.net.layers()) {
        layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", matrix_to_json(l.bias)}});
      }
      j["layers"] = std::move(layers);
      break;
    }
  }
  return j.dump();
}

Classifier Classifier::deserialize(const std::string& blob) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("classifier blob is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != kFormat) throw IoError("not a classifier blob");
    if (j.at("version").get<int>() != kVersion) throw IoError("unsupported classifier blob version");
    auto m = std::make_shared<Impl>();
    m->kind = parse_model_kind(j.at("kind").get<std::string>());
    m->class_count = j.at("class_count").get<std::size_t>();
    m->action_count = j.at("action_count").get<std::size_t>();
    m->discrete_input = j.at("discrete_input").get<bool>();
    m->observation_dim = j.at("observation_dim").get<std::size_t>();
    const auto& d = j.at("diagnostics");
    m->diagnostics.rows = d.at("rows").get<std::size_t>();
    m->diagnostics.loss = d.at("loss").is_null() ? std::numeric_limits<double>::quiet_NaN() : d.at("loss").get<double>();
    m->diagnostics.accuracy =
        d.at("accuracy").is_null() ? std::numeric_limits<double>::quiet_NaN() : d.at("accuracy").get<double>();
    switch (m->kind) {
      case ModelKind::kTabular:
        for (const auto& e : j.at("table")) {
          m->table_index.emplace(Observation::parse(e.at("state").get<std::string>()), m->table_states.size());
          m->table_states.push_back(Observation::parse(e.at("state").get<std::string>()));
          m->table_counts.push_back(e.at("counts").get<std::vector<double>>());
        }
        break;
      case ModelKind::kKnn:
        m->k = j.at("k").get<std::size_t>();
        for (const auto& e : j.at("neighbors")) {
          m->knn_points.emplace_back(matrix_from_json(e.at("points")));
          m->knn_labels.push_back(e.at("labels").get<std::vector<std::size_t>>());
        }
        break;
      case ModelKind::kMlp:
        for (const auto& e : j.at("layers")) {
          m->net.layers().push_back({matrix_from_json(e.at("weight")), matrix_from_json(e.at("bias"))});
        }
        break;
    }
    return Classifier(std::move(m));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed classifier blob: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("malformed classifier blob: ") + e.what());
  }
}

}  // namespace rpr
