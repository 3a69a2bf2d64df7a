#include "doctest.h"
#include "oracles.hpp"
#include "replay/error.hpp"
#include "replay/mlp.hpp"

using namespace replay;

namespace {

Example make_example(std::int64_t id, std::vector<double> x, int y) {
  return {id, oracle::to_eigen(x), y};
}

MlpModel random_model(const std::vector<int>& sizes, std::uint64_t seed) {
  Rng rng(seed);
  return MlpModel::initialized(sizes, rng);
}

std::vector<Example> random_batch(int n, int dim, int classes, Rng& rng) {
  std::normal_distribution<double> normal;
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(dim);
    for (int d = 0; d < dim; ++d) x[d] = normal(rng.engine());
    out.push_back({i, x, static_cast<int>(rng.index(static_cast<std::uint64_t>(classes)))});
  }
  return out;
}

}  // namespace

TEST_CASE("softmax of (2, 1, 0)") {
  const Eigen::VectorXd p = softmax(Eigen::Vector3d(2, 1, 0));
  const auto ref = oracle::softmax({2, 1, 0});
  // Frozen from the oracle.
  CHECK(p[0] == doctest::Approx(0.6652409558).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(0.2447284711).epsilon(1e-9));
  CHECK(p[2] == doctest::Approx(0.0900305732).epsilon(1e-9));
  for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]));
}

TEST_CASE("softmax survives huge logits") {
  const Eigen::VectorXd p = softmax(Eigen::Vector3d(1000, 999, -1000));
  CHECK(p.allFinite());
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p[0] == doctest::Approx(0.7310585786));
}

TEST_CASE("margin of a confident correct prediction") {
  const Eigen::VectorXd p = softmax(Eigen::Vector3d(2, 1, 0));
  CHECK(margin_from_probs(p, 0) == doctest::Approx(0.4205124847).epsilon(1e-9));
  CHECK(margin_from_probs(p, 2) == doctest::Approx(0.0900305732 - 0.6652409558).epsilon(1e-9));
  CHECK_THROWS_AS(margin_from_probs(p, 3), InvalidInput);
  CHECK_THROWS_AS(margin_from_probs(p, -1), InvalidInput);
}

TEST_CASE("margins lie in [-1, 1] and match the oracle") {
  Rng rng(3);
  const std::vector<int> sizes = {4, 6, 5};
  const MlpModel model = random_model(sizes, 9);
  const auto batch = random_batch(20, 4, 5, rng);
  const Eigen::VectorXd m = margins(model, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto p = oracle::mlp_probs(sizes, oracle::to_vec(model.params()),
                                     oracle::to_vec(batch[i].features));
    CHECK(m[static_cast<Eigen::Index>(i)] == doctest::Approx(oracle::margin(p, batch[i].label)));
    CHECK(std::abs(m[static_cast<Eigen::Index>(i)]) <= 1.0);
    CHECK(margin(model, batch[i]) == doctest::Approx(m[static_cast<Eigen::Index>(i)]));
  }
  CHECK(margins(model, {}).size() == 0);
}

TEST_CASE("flat parameter layout") {
  MlpModel model({3, 2, 4});
  CHECK(model.param_count() == 3 * 2 + 2 + 2 * 4 + 4);
  CHECK(model.weight_offset(0) == 0);
  CHECK(model.bias_offset(0) == 6);
  CHECK(model.weight_offset(1) == 8);
  CHECK(model.bias_offset(1) == 16);
  model.weights(0)(1, 2) = 5.0;  // out 1, in 2, column-major
  CHECK(model.params()[2 * 2 + 1] == 5.0);
  model.bias(1)(3) = -1.0;
  CHECK(model.params()[19] == -1.0);
}

TEST_CASE("flatten and unflatten round-trip") {
  const std::vector<int> sizes = {5, 7, 3};
  const MlpModel model = random_model(sizes, 1);
  const MlpModel back = unflatten(sizes, flatten(model));
  CHECK(back.params() == model.params());
  CHECK(back.layer_sizes() == sizes);
  CHECK_THROWS_AS(unflatten(sizes, ParamVector::Zero(3)), InvalidInput);
}

TEST_CASE("invalid architectures are rejected") {
  CHECK_THROWS_AS(MlpModel(std::vector<int>{4}), InvalidInput);
  CHECK_THROWS_AS(MlpModel(std::vector<int>{4, 0, 2}), InvalidInput);
}

TEST_CASE("initialization: zero biases, bounded weights, seeded") {
  const MlpModel a = random_model({784, 100, 10}, 5);
  const MlpModel b = random_model({784, 100, 10}, 5);
  const MlpModel c = random_model({784, 100, 10}, 6);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
  CHECK(a.bias(0).isZero());
  CHECK(a.bias(1).isZero());
  const double limit = std::sqrt(6.0 / (784 + 100));
  CHECK(a.weights(0).cwiseAbs().maxCoeff() <= limit);
}

TEST_CASE("forward matches the loop oracle") {
  Rng rng(4);
  const std::vector<int> sizes = {6, 5, 4, 3};
  const MlpModel model = random_model(sizes, 2);
  for (const auto& ex : random_batch(10, 6, 3, rng)) {
    const Eigen::VectorXd p = forward(model, ex.features);
    const auto ref = oracle::mlp_probs(sizes, oracle::to_vec(model.params()), oracle::to_vec(ex.features));
    for (int k = 0; k < 3; ++k) CHECK(p[k] == doctest::Approx(ref[static_cast<std::size_t>(k)]).epsilon(1e-12));
  }
}

TEST_CASE("backprop matches finite differences of the oracle loss") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int in = 2 + static_cast<int>(rng.index(4));
    const int hidden = 2 + static_cast<int>(rng.index(5));
    const int classes = 2 + static_cast<int>(rng.index(3));
    const std::vector<int> sizes = {in, hidden, hidden, classes};
    MlpModel model = random_model(sizes, 100 + static_cast<std::uint64_t>(trial));
    // Nonzero biases keep pre-activations off the ReLU kink at exactly 0.
    std::normal_distribution<double> jitter(0.0, 0.1);
    ParamVector p = model.params();
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += jitter(rng.engine());
    model = MlpModel::from_params(sizes, p);
    const auto batch = random_batch(1 + static_cast<int>(rng.index(5)), in, classes, rng);
    std::vector<oracle::Vec> xs;
    std::vector<int> ys;
    for (const auto& ex : batch) {
      xs.push_back(oracle::to_vec(ex.features));
      ys.push_back(ex.label);
    }
    const auto fd = oracle::central_difference(
        [&](const oracle::Vec& p) { return oracle::mlp_loss(sizes, p, xs, ys); },
        oracle::to_vec(model.params()), 1e-6);
    const LossGrad lg = loss_and_grad(model, batch);
    CHECK(lg.loss == doctest::Approx(oracle::mlp_loss(sizes, oracle::to_vec(model.params()), xs, ys)));
    const Eigen::VectorXd diff = lg.grad - oracle::to_eigen(fd);
    CHECK(diff.norm() / std::max(lg.grad.norm(), 1e-12) < 1e-5);
  }
}

TEST_CASE("per-example gradients average to the batch gradient") {
  Rng rng(12);
  const MlpModel model = random_model({5, 8, 4}, 3);
  const auto batch = random_batch(7, 5, 4, rng);
  const auto per = per_example_grads(model, batch);
  REQUIRE(per.size() == 7);
  ParamVector mean = ParamVector::Zero(model.param_count());
  for (const auto& g : per) mean += g;
  mean /= 7.0;
  CHECK((mean - loss_and_grad(model, batch).grad).norm() < 1e-12);
  const Eigen::VectorXd losses = example_losses(model, batch);
  CHECK(losses.mean() == doctest::Approx(mean_loss(model, batch)));
}

TEST_CASE("dimension and label errors") {
  const MlpModel model = random_model({3, 4, 2}, 0);
  const std::vector<Example> wrong_dim = {make_example(0, {1, 2}, 0)};
  const std::vector<Example> wrong_label = {make_example(0, {1, 2, 3}, 2)};
  CHECK_THROWS_AS(loss_and_grad(model, wrong_dim), InvalidInput);
  CHECK_THROWS_AS(loss_and_grad(model, wrong_label), InvalidInput);
  CHECK_THROWS_AS(loss_and_grad(model, {}), InvalidInput);
  CHECK_THROWS_AS(mean_loss(model, {}), InvalidInput);
  CHECK_THROWS_AS(per_example_grads(model, {}), InvalidInput);
  CHECK_THROWS_AS(forward(model, Eigen::VectorXd::Zero(4)), InvalidInput);
  CHECK_THROWS_AS(apply_step(model, ParamVector::Zero(2), 0.1), InvalidInput);
}

TEST_CASE("apply_step is params - lr * direction") {
  const MlpModel model = random_model({3, 2}, 1);
  const ParamVector d = ParamVector::Ones(model.param_count());
  const MlpModel moved = apply_step(model, d, 0.25);
  CHECK((moved.params() - (model.params() - 0.25 * d)).norm() == 0.0);
  MlpModel inplace = model;
  apply_step_inplace(inplace, d, 0.25);
  CHECK(inplace.params() == moved.params());
}

TEST_CASE("a few steps on one batch reduce its loss") {
  Rng rng(21);
  MlpModel model = random_model({4, 10, 3}, 4);
  const auto batch = random_batch(12, 4, 3, rng);
  const double before = mean_loss(model, batch);
  for (int i = 0; i < 50; ++i) model.step(loss_and_grad(model, batch).grad, 0.1);
  CHECK(mean_loss(model, batch) < before);
}

TEST_CASE("accuracy and predict") {
  MlpModel model({2, 2});
  // Identity weights: the larger feature wins.
  model.weights(0) = Eigen::Matrix2d::Identity();
  const std::vector<Example> set = {make_example(0, {1, 0}, 0), make_example(1, {0, 1}, 1),
                                    make_example(2, {0, 1}, 0), make_example(3, {2, 1}, 0)};
  CHECK(predict(model, set[1].features) == 1);
  CHECK(accuracy(model, set) == doctest::Approx(0.75));
  CHECK(accuracy(model, {}) == 0.0);
}
