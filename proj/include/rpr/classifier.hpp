#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rpr/mlp.hpp"
#include "rpr/observation.hpp"

namespace rpr {

enum class ModelKind { kTabular, kKnn, kMlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct FitConfig {
  ModelKind kind = ModelKind::kTabular;
  // mlp
  std::vector<std::size_t> hidden{64, 64};
  double learning_rate = 0.005;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  // knn
  std::size_t k = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Training rows for a state-action classifier. Ignored rows never reach the fit.
struct LabeledSaDataset {
  std::vector<Observation> states;
  std::vector<ActionId> actions;
  std::vector<std::size_t> labels;
  std::vector<bool> ignore;
  std::size_t class_count = 0;
  std::size_t action_count = 1;

  void add(Observation state, ActionId action, std::size_t label, bool ignored = false);
  std::size_t size() const { return states.size(); }
};

struct FitDiagnostics {
  std::size_t rows = 0;
  /// Mean training cross-entropy; NaN for knn, which is not evaluated on its own rows.
  double loss = 0.0;
  double accuracy = 0.0;
};

/// A fitted state-action -> class-distribution predictor. Immutable and cheap to copy.
class Classifier {
 public:
  struct Impl;

  Classifier() = default;
  explicit Classifier(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

  bool fitted() const { return impl_ != nullptr; }
  ModelKind kind() const;
  std::size_t class_count() const;
  std::size_t action_count() const;
  const FitDiagnostics& diagnostics() const;

  /// Probability vector of length class_count(). Unseen tabular pairs and
  /// actions with no knn rows fall back to the uniform distribution.
  std::vector<double> predict_distribution(const Observation& state, ActionId action) const;
  /// Argmax of predict_distribution, lowest index on ties.
  std::size_t predict_class(const Observation& state, ActionId action) const;
  /// Row i holds predict_distribution(states[i], action).
  Eigen::MatrixXd predict_batch(std::span<const Observation> states, ActionId action) const;

  /// Hidden layers for warm starts; nullptr unless kind() is mlp.
  const Mlp* network() const;

  std::string serialize() const;
  static Classifier deserialize(const std::string& blob);

 private:
  const Impl& impl() const;
  std::shared_ptr<const Impl> impl_;
};

/// Tabular: empirical label frequencies per (state, action). knn: label
/// frequencies among the k nearest unmasked rows with the same action
/// (Euclidean, ties to the lowest row). mlp: cross-entropy with Adam on
/// shuffled mini-batches, input = observation ++ one-hot action.
///
/// For mlp, a compatible `warm_start` network donates its hidden layers and
/// the output layer is re-initialised.
Classifier fit_classifier(const LabeledSaDataset& data, const FitConfig& cfg,
                          const Classifier* warm_start = nullptr);

}  // namespace rpr
