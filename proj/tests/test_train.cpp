#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "whitenorm/train.hpp"

using namespace whitenorm;

namespace {

NetworkSpec logistic_spec(Index dim, int classes) {
  NetworkSpec spec;
  spec.input_dim = dim;
  spec.layers.push_back(LayerSpec::linear(dim, classes));
  spec.layers.push_back(LayerSpec::softmax_nll());
  return spec;
}

}  // namespace

TEST_CASE("sgd_update single step without momentum") {
  Vector p = Vector::Zero(1);
  Vector g = Vector::Ones(1);
  Vector v = Vector::Zero(1);
  sgd_update(p, g, v, 0.1, 0.0, 0.0);
  CHECK(p(0) == doctest::Approx(-0.1).epsilon(1e-15));
}

TEST_CASE("velocity decays geometrically with zero gradient") {
  Vector p = Vector::Zero(1);
  Vector g = Vector::Zero(1);
  Vector v = Vector::Ones(1);
  sgd_update(p, g, v, 0.1, 0.8, 0.0);
  CHECK(v(0) == doctest::Approx(0.8).epsilon(1e-15));
  sgd_update(p, g, v, 0.1, 0.8, 0.0);
  CHECK(v(0) == doctest::Approx(0.64).epsilon(1e-15));
}

TEST_CASE("two momentum steps follow the hand-rolled recurrence") {
  // v1 = -0.1, p1 = -0.1; v2 = 0.9*(-0.1) - 0.1 = -0.19, p2 = -0.29
  Vector p = Vector::Zero(1);
  Vector g = Vector::Ones(1);
  Vector v = Vector::Zero(1);
  sgd_update(p, g, v, 0.1, 0.9, 0.0);
  sgd_update(p, g, v, 0.1, 0.9, 0.0);
  CHECK(p(0) == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("weight decay enters the gradient term") {
  Vector p = Vector::Constant(1, 2.0);
  Vector g = Vector::Zero(1);
  Vector v = Vector::Zero(1);
  sgd_update(p, g, v, 0.5, 0.0, 0.1);
  // v = -0.5 * (0 + 0.1 * 2) = -0.1
  CHECK(p(0) == doctest::Approx(1.9).epsilon(1e-15));
}

TEST_CASE("sgd_update rejects mismatched shapes") {
  Vector p = Vector::Zero(2);
  Vector g = Vector::Zero(3);
  Vector v = Vector::Zero(2);
  CHECK_THROWS_AS(sgd_update(p, g, v, 0.1, 0.0, 0.0), ShapeError);
}

TEST_CASE("learning-rate schedules") {
  const Schedule constant = Schedule::constant();
  CHECK(schedule_lr(constant, 2.0, 1000, 50) == 2.0);

  const Schedule halving = Schedule::halve_every(10);
  CHECK(schedule_lr(halving, 1.0, 0, 1) == 1.0);
  CHECK(schedule_lr(halving, 1.0, 9, 1) == 1.0);
  CHECK(schedule_lr(halving, 1.0, 10, 1) == 0.5);
  CHECK(schedule_lr(halving, 1.0, 25, 1) == 0.25);

  const Schedule dividing = Schedule::divide_at({2, 4}, 5.0);
  CHECK(schedule_lr(dividing, 1.0, 0, 1) == 1.0);
  CHECK(schedule_lr(dividing, 1.0, 0, 2) == doctest::Approx(0.2));
  CHECK(schedule_lr(dividing, 1.0, 0, 3) == doctest::Approx(0.2));
  CHECK(schedule_lr(dividing, 1.0, 0, 4) == doctest::Approx(0.04));
}

TEST_CASE("zero epochs leave the network untouched") {
  const Dataset data = gen_correlated_gaussians(2, 20, 2, 0.0, 4.0, 3);
  Network net = init_params(logistic_spec(2, 2), 5);
  const Vector before = collect_params(net);
  TrainConfig config;
  config.lr = 0.1;
  config.epochs = 0;
  config.batch_size = 10;
  const TrainResult result = train(net, data, nullptr, config);
  CHECK(result.log.empty());
  CHECK((collect_params(net).array() == before.array()).all());
}

TEST_CASE("logistic model separates well-separated classes") {
  const Dataset data = gen_correlated_gaussians(2, 200, 2, 0.0, 8.0, 7);
  Network net = init_params(logistic_spec(2, 2), 9);
  TrainConfig config;
  config.lr = 0.5;
  config.epochs = 50;
  config.batch_size = 32;
  config.seed = 11;
  const TrainResult result = train(net, data, nullptr, config);
  REQUIRE(result.log.size() == 50);
  CHECK(result.log.back().train_acc >= 0.99);
}

TEST_CASE("training is bitwise reproducible per seed") {
  const Dataset data = gen_correlated_gaussians(3, 60, 3, 0.2, 3.0, 13);
  TrainConfig config;
  config.lr = 0.2;
  config.momentum = 0.9;
  config.weight_decay = 5e-4;
  config.epochs = 5;
  config.batch_size = 16;
  config.seed = 17;

  Network a = init_params(logistic_spec(3, 3), 19);
  Network b = init_params(logistic_spec(3, 3), 19);
  const TrainResult ra = train(a, data, nullptr, config);
  const TrainResult rb = train(b, data, nullptr, config);
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].train_loss == rb.log[i].train_loss);  // bitwise
    CHECK(ra.log[i].train_acc == rb.log[i].train_acc);
    CHECK(ra.log[i].iteration == rb.log[i].iteration);
  }
  CHECK((collect_params(a).array() == collect_params(b).array()).all());
}

TEST_CASE("divergence aborts with an error") {
  const Dataset data = gen_correlated_gaussians(2, 64, 2, 0.0, 0.5, 23);
  Network net = init_params(logistic_spec(2, 2), 25);
  TrainConfig config;
  config.lr = 1e6;
  config.epochs = 20;
  config.batch_size = 16;
  config.seed = 27;
  CHECK_THROWS_AS(train(net, data, nullptr, config), DivergedError);
}

TEST_CASE("test metrics come from inference-mode evaluation") {
  Dataset full = gen_correlated_gaussians(4, 400, 2, 0.5, 5.0, 29);
  const auto [train_data, test_data] = split_dataset(full, 0.25);
  NetworkSpec spec;
  spec.input_dim = 4;
  spec.layers.push_back(LayerSpec::linear(4, 8));
  spec.layers.push_back(LayerSpec::dbn(NormMode::Zca, 4));
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(LayerSpec::linear(8, 2));
  spec.layers.push_back(LayerSpec::softmax_nll());
  Network net = init_params(spec, 31);
  TrainConfig config;
  config.lr = 0.1;
  config.epochs = 8;
  config.batch_size = 30;
  config.seed = 33;
  const TrainResult result = train(net, train_data, &test_data, config);
  REQUIRE(result.log.size() == 8);
  CHECK(std::isfinite(result.log.back().test_loss));
  CHECK(result.log.back().test_acc > 0.9);
  const ForwardResult eval = evaluate(net, test_data);
  CHECK(eval.loss == doctest::Approx(result.log.back().test_loss));
}

TEST_CASE("metrics csv carries the fixed schema") {
  const Dataset data = gen_correlated_gaussians(2, 30, 2, 0.0, 4.0, 35);
  Network net = init_params(logistic_spec(2, 2), 37);
  TrainConfig config;
  config.lr = 0.1;
  config.epochs = 2;
  config.batch_size = 10;
  const TrainResult result = train(net, data, nullptr, config);
  const std::string csv = metrics_csv(result);
  CHECK(csv.rfind(
            "epoch,iteration,lr,train_loss,train_acc,test_loss,test_acc,"
            "seconds\n",
            0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 epochs
}
