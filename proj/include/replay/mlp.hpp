#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "replay/rng.hpp"

namespace replay {

// Flat vector over every model parameter. Gradients, replay gradients and
// combined update directions all live in this space.
using ParamVector = Eigen::VectorXd;

struct Example {
  std::int64_t id = 0;
  Eigen::VectorXd features;
  int label = 0;
};

// Fully-connected classifier: ReLU hidden layers, linear output layer, softmax
// head. Parameters are stored flat, layer by layer, as [W_l (out x in,
// column-major), b_l], so flatten/unflatten are plain copies.
class MlpModel {
 public:
  // All parameters zero.
  explicit MlpModel(std::vector<int> layer_sizes);

  // Uniform Glorot init for weights, zero biases.
  static MlpModel initialized(std::vector<int> layer_sizes, Rng& rng);

  static MlpModel from_params(std::vector<int> layer_sizes, ParamVector params);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int num_classes() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  Eigen::Index param_count() const { return params_.size(); }

  const ParamVector& params() const { return params_; }

  Eigen::Map<const Eigen::MatrixXd> weights(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::MatrixXd> weights(int layer);
  Eigen::Map<Eigen::VectorXd> bias(int layer);

  // Offsets of layer l's weight block and bias block inside params().
  Eigen::Index weight_offset(int layer) const { return offsets_[layer]; }
  Eigen::Index bias_offset(int layer) const;

  // params -= lr * direction; length-checked.
  void step(const ParamVector& direction, double lr);

  // Output-layer pre-activations for each column of `inputs`.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& inputs) const;

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  ParamVector params_;
};

ParamVector flatten(const MlpModel& model);
MlpModel unflatten(const std::vector<int>& layer_sizes, const ParamVector& values);

// Numerically stable softmax of one logit vector.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Class probabilities for one example.
Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& features);

// Class probabilities for a batch, one column per example.
Eigen::MatrixXd forward_batch(const MlpModel& model, std::span<const Example> batch);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean softmax cross-entropy over the batch and its exact gradient.
LossGrad loss_and_grad(const MlpModel& model, std::span<const Example> batch);

// Mean softmax cross-entropy only (no backward pass).
double mean_loss(const MlpModel& model, std::span<const Example> batch);

// Per-example cross-entropy values, in batch order.
Eigen::VectorXd example_losses(const MlpModel& model, std::span<const Example> batch);

// Gradient of each example's own loss; their mean is the batch gradient.
std::vector<ParamVector> per_example_grads(const MlpModel& model, std::span<const Example> examples);

// params - lr * direction, as a new model.
MlpModel apply_step(const MlpModel& model, const ParamVector& direction, double lr);

// In-place variant used on the hot path of the training loop.
void apply_step_inplace(MlpModel& model, const ParamVector& direction, double lr);

// p_y - max_{y' != y} p_y'.
double margin_from_probs(const Eigen::VectorXd& probs, int label);
double margin(const MlpModel& model, const Example& example);
Eigen::VectorXd margins(const MlpModel& model, std::span<const Example> batch);

int predict(const MlpModel& model, const Eigen::VectorXd& features);
double accuracy(const MlpModel& model, std::span<const Example> examples);

}  // namespace replay
