#include "rpr/mlp.hpp"

#include <cmath>

#include "rpr/error.hpp"

namespace rpr {

namespace {

Mlp::Layer make_layer(std::size_t in, std::size_t out, Rng& rng) {
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Mlp::Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
  }
  for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = rng.uniform(-bound, bound);
  return layer;
}

Eigen::MatrixXd softmax_rows(Eigen::MatrixXd logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

}  // namespace

Mlp::Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim, Rng& rng) {
  if (input_dim == 0 || output_dim == 0) throw ConfigError("mlp dimensions must be positive");
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden layer sizes must be positive");
    layers_.push_back(make_layer(in, h, rng));
    in = h;
  }
  layers_.push_back(make_layer(in, output_dim, rng));
}

std::size_t Mlp::input_dim() const { return static_cast<std::size_t>(layers_.front().weight.cols()); }
std::size_t Mlp::output_dim() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }

Eigen::MatrixXd Mlp::probabilities(const Eigen::MatrixXd& inputs) const {
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = h * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    h = l + 1 < layers_.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return softmax_rows(std::move(h));
}

double Mlp::loss(const Eigen::MatrixXd& inputs, std::span<const std::size_t> labels) const {
  const Eigen::MatrixXd p = probabilities(inputs);
  double total = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    total -= std::log(std::max(p(r, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)])), 1e-300));
  }
  return total / static_cast<double>(p.rows());
}

double Mlp::loss_and_gradient(const Eigen::MatrixXd& inputs, std::span<const std::size_t> labels,
                              std::vector<Layer>& gradient) const {
  const std::size_t depth = layers_.size();
  std::vector<Eigen::MatrixXd> acts;  // input to each layer
  acts.reserve(depth);
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < depth; ++l) {
    acts.push_back(h);
    Eigen::MatrixXd z = h * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    h = l + 1 < depth ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  Eigen::MatrixXd delta = softmax_rows(std::move(h));
  const auto batch = static_cast<double>(inputs.rows());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < delta.rows(); ++r) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)]);
    loss -= std::log(std::max(delta(r, y), 1e-300));
    delta(r, y) -= 1.0;
  }
  delta /= batch;

  gradient.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    gradient[l].weight = delta.transpose() * acts[l];
    gradient[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * layers_[l].weight;
      // acts[l] is the ReLU output of layer l-1; its zero pattern is the mask.
      delta = back.array() * (acts[l].array() > 0.0).cast<double>();
    }
  }
  return loss / batch;
}

void Mlp::reset_output_layer(std::size_t output_dim, Rng& rng) {
  const auto in = static_cast<std::size_t>(layers_.back().weight.cols());
  layers_.back() = make_layer(in, output_dim, rng);
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Eigen::VectorXd Mlp::flatten(const std::vector<Layer>& layers) {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  for (const auto& l : layers) {
    out.segment(at, l.weight.size()) = l.weight.reshaped();
    at += l.weight.size();
    out.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return out;
}

Eigen::VectorXd Mlp::flat_parameters() const { return flatten(layers_); }

void Mlp::set_flat_parameters(const Eigen::VectorXd& params) {
  if (static_cast<std::size_t>(params.size()) != parameter_count()) {
    throw ConfigError("parameter vector has the wrong length");
  }
  Eigen::Index at = 0;
  for (auto& l : layers_) {
    l.weight.reshaped() = params.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = params.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

Adam::Adam(const Mlp& net, double learning_rate) : lr_(learning_rate) {
  for (const auto& l : net.layers()) {
    m_.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
  }
  v_ = m_;
}

void Adam::step(Mlp& net, const std::vector<Mlp::Layer>& gradient) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    m_[l].weight = beta1_ * m_[l].weight + (1.0 - beta1_) * gradient[l].weight;
    v_[l].weight = beta2_ * v_[l].weight + (1.0 - beta2_) * gradient[l].weight.cwiseAbs2();
    m_[l].bias = beta1_ * m_[l].bias + (1.0 - beta1_) * gradient[l].bias;
    v_[l].bias = beta2_ * v_[l].bias + (1.0 - beta2_) * gradient[l].bias.cwiseAbs2();
    layers[l].weight.array() -=
        lr_ * (m_[l].weight.array() / c1) / ((v_[l].weight.array() / c2).sqrt() + eps_);
    layers[l].bias.array() -= lr_ * (m_[l].bias.array() / c1) / ((v_[l].bias.array() / c2).sqrt() + eps_);
  }
}

}  // namespace rpr
