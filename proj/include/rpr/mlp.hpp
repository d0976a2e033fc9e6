#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rpr/rng.hpp"

namespace rpr {

/// Fully connected ReLU network with a softmax output, trained on cross-entropy.
class Mlp {
 public:
  struct Layer {
    Eigen::MatrixXd weight;  // (out, in)
    Eigen::VectorXd bias;
  };

  Mlp() = default;
  Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  /// Rows of `inputs` are samples; returns row-wise class probabilities.
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& inputs) const;

  /// Mean cross-entropy over the batch; `gradient` receives dLoss/dparams
  /// laid out like `layers()`.
  double loss_and_gradient(const Eigen::MatrixXd& inputs, std::span<const std::size_t> labels,
                           std::vector<Layer>& gradient) const;
  double loss(const Eigen::MatrixXd& inputs, std::span<const std::size_t> labels) const;

  /// Replaces the final linear layer with a freshly initialised one.
  void reset_output_layer(std::size_t output_dim, Rng& rng);

  std::size_t parameter_count() const;
  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& params);
  static Eigen::VectorXd flatten(const std::vector<Layer>& layers);

 private:
  std::vector<Layer> layers_;
};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  Adam(const Mlp& net, double learning_rate);
  void step(Mlp& net, const std::vector<Mlp::Layer>& gradient);

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Mlp::Layer> m_, v_;
};

}  // namespace rpr
