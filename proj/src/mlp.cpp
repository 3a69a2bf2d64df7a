#include "replay/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "replay/error.hpp"

namespace replay {
namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw InvalidInput("MlpModel needs at least input and output sizes");
  for (int s : sizes) {
    if (s <= 0) throw InvalidInput("MlpModel layer sizes must be positive");
  }
}

void check_example(const MlpModel& model, const Example& ex) {
  if (ex.features.size() != model.input_dim()) {
    throw InvalidInput("feature length " + std::to_string(ex.features.size()) +
                       " does not match input dim " + std::to_string(model.input_dim()));
  }
  if (ex.label < 0 || ex.label >= model.num_classes()) {
    throw InvalidInput("label " + std::to_string(ex.label) + " out of range");
  }
}

Eigen::MatrixXd stack_features(const MlpModel& model, std::span<const Example> batch) {
  Eigen::MatrixXd x(model.input_dim(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_example(model, batch[i]);
    x.col(static_cast<Eigen::Index>(i)) = batch[i].features;
  }
  return x;
}

// Column-wise log-softmax, max-subtracted.
Eigen::MatrixXd log_softmax_cols(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double m = z.col(j).maxCoeff();
    const double lse = m + std::log((z.col(j).array() - m).exp().sum());
    out.col(j) = z.col(j).array() - lse;
  }
  return out;
}

struct Activations {
  std::vector<Eigen::MatrixXd> inputs;  // input to layer l
  Eigen::MatrixXd logits;
};

Activations run_forward(const MlpModel& model, Eigen::MatrixXd x) {
  Activations acts;
  const int layers = model.num_layers();
  acts.inputs.reserve(layers);
  acts.inputs.push_back(std::move(x));
  for (int l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = model.weights(l) * acts.inputs.back();
    z.colwise() += model.bias(l);
    if (l + 1 < layers) {
      acts.inputs.push_back(z.cwiseMax(0.0));
    } else {
      acts.logits = std::move(z);
    }
  }
  return acts;
}

}  // namespace

MlpModel::MlpModel(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  check_sizes(sizes_);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = ParamVector::Zero(offset);
}

MlpModel MlpModel::initialized(std::vector<int> layer_sizes, Rng& rng) {
  MlpModel model(std::move(layer_sizes));
  for (int l = 0; l < model.num_layers(); ++l) {
    const int fan_in = model.sizes_[l];
    const int fan_out = model.sizes_[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = model.weights(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng.engine());
    }
  }
  return model;
}

MlpModel MlpModel::from_params(std::vector<int> layer_sizes, ParamVector params) {
  MlpModel model(std::move(layer_sizes));
  if (params.size() != model.param_count()) {
    throw InvalidInput("parameter vector length " + std::to_string(params.size()) +
                       " does not match model parameter count " +
                       std::to_string(model.param_count()));
  }
  model.params_ = std::move(params);
  return model;
}

Eigen::Index MlpModel::bias_offset(int layer) const {
  return offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer]) * sizes_[layer + 1];
}

Eigen::Map<const Eigen::MatrixXd> MlpModel::weights(int layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Eigen::VectorXd> MlpModel::bias(int layer) const {
  return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
}

Eigen::Map<Eigen::MatrixXd> MlpModel::weights(int layer) {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<Eigen::VectorXd> MlpModel::bias(int layer) {
  return {params_.data() + bias_offset(layer), sizes_[layer + 1]};
}

void MlpModel::step(const ParamVector& direction, double lr) {
  if (direction.size() != params_.size()) {
    throw InvalidInput("direction length does not match parameter count");
  }
  params_ -= lr * direction;
}

Eigen::MatrixXd MlpModel::logits(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_dim()) throw InvalidInput("input dimension mismatch");
  return run_forward(*this, inputs).logits;
}

ParamVector flatten(const MlpModel& model) { return model.params(); }

MlpModel unflatten(const std::vector<int>& layer_sizes, const ParamVector& values) {
  return MlpModel::from_params(layer_sizes, values);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& features) {
  if (features.size() != model.input_dim()) throw InvalidInput("input dimension mismatch");
  return softmax(run_forward(model, features).logits.col(0));
}

Eigen::MatrixXd forward_batch(const MlpModel& model, std::span<const Example> batch) {
  const Eigen::MatrixXd z = run_forward(model, stack_features(model, batch)).logits;
  return log_softmax_cols(z).array().exp();
}

LossGrad loss_and_grad(const MlpModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw InvalidInput("loss_and_grad: empty batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  Activations acts = run_forward(model, stack_features(model, batch));

  const Eigen::MatrixXd logp = log_softmax_cols(acts.logits);
  LossGrad out;
  Eigen::MatrixXd delta = logp.array().exp();
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = batch[static_cast<std::size_t>(j)].label;
    out.loss -= logp(y, j);
    delta(y, j) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  delta /= static_cast<double>(n);

  out.grad = ParamVector::Zero(model.param_count());
  for (int l = model.num_layers() - 1; l >= 0; --l) {
    const int rows = model.layer_sizes()[l + 1];
    const int cols = model.layer_sizes()[l];
    Eigen::Map<Eigen::MatrixXd> gw(out.grad.data() + model.weight_offset(l), rows, cols);
    Eigen::Map<Eigen::VectorXd> gb(out.grad.data() + model.bias_offset(l), rows);
    gw.noalias() = delta * acts.inputs[l].transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = model.weights(l).transpose() * delta;
      // inputs[l] = relu(z_{l-1}); its positive entries mark the active units.
      delta = back.cwiseProduct((acts.inputs[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

double mean_loss(const MlpModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw InvalidInput("mean_loss: empty batch");
  return example_losses(model, batch).mean();
}

Eigen::VectorXd example_losses(const MlpModel& model, std::span<const Example> batch) {
  const Eigen::MatrixXd z = run_forward(model, stack_features(model, batch)).logits;
  const Eigen::MatrixXd logp = log_softmax_cols(z);
  Eigen::VectorXd out(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = -logp(batch[i].label, static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<ParamVector> per_example_grads(const MlpModel& model,
                                           std::span<const Example> examples) {
  if (examples.empty()) throw InvalidInput("per_example_grads: empty list");
  std::vector<ParamVector> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out.push_back(loss_and_grad(model, examples.subspan(i, 1)).grad);
  }
  return out;
}

MlpModel apply_step(const MlpModel& model, const ParamVector& direction, double lr) {
  MlpModel next = model;
  apply_step_inplace(next, direction, lr);
  return next;
}

void apply_step_inplace(MlpModel& model, const ParamVector& direction, double lr) {
  if (direction.size() != model.param_count()) {
    throw InvalidInput("direction length does not match parameter count");
  }
  model.step(direction, lr);
}

double margin_from_probs(const Eigen::VectorXd& probs, int label) {
  if (label < 0 || label >= probs.size()) throw InvalidInput("margin: label out of range");
  double best_other = -1.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (k != label) best_other = std::max(best_other, probs(k));
  }
  if (probs.size() == 1) best_other = 0.0;
  return probs(label) - best_other;
}

double margin(const MlpModel& model, const Example& example) {
  check_example(model, example);
  return margin_from_probs(forward(model, example.features), example.label);
}

Eigen::VectorXd margins(const MlpModel& model, std::span<const Example> batch) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(batch.size()));
  if (batch.empty()) return out;
  const Eigen::MatrixXd probs = forward_batch(model, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) =
        margin_from_probs(probs.col(static_cast<Eigen::Index>(i)), batch[i].label);
  }
  return out;
}

int predict(const MlpModel& model, const Eigen::VectorXd& features) {
  if (features.size() != model.input_dim()) throw InvalidInput("input dimension mismatch");
  Eigen::Index best = 0;
  run_forward(model, features).logits.col(0).maxCoeff(&best);
  return static_cast<int>(best);
}

double accuracy(const MlpModel& model, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  const Eigen::MatrixXd z = run_forward(model, stack_features(model, examples)).logits;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Eigen::Index best = 0;
    z.col(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    if (best == examples[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace replay
