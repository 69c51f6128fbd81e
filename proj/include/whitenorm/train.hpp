#ifndef WHITENORM_TRAIN_HPP
#define WHITENORM_TRAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "whitenorm/data.hpp"
#include "whitenorm/net.hpp"

namespace whitenorm {

enum class ScheduleKind { Constant, HalveEvery, DivideAt };

struct Schedule {
  ScheduleKind kind = ScheduleKind::Constant;
  long period = 0;            // halve_every: iterations per halving
  std::vector<long> epochs;   // divide_at boundaries
  double factor = 1.0;        // divide_at divisor, > 1

  static Schedule constant();
  static Schedule halve_every(long iterations);
  static Schedule divide_at(std::vector<long> epochs, double factor);
};

double schedule_lr(const Schedule& schedule, double base_lr, long iteration,
                   long epoch);

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  Schedule schedule;
  long epochs = 0;
  Index batch_size = 0;  // ignored when full_batch
  std::uint64_t seed = 0;
  bool full_batch = false;
  bool shuffle = true;
};

// v <- momentum * v - lr * (g + weight_decay * p); p <- p + v
void sgd_update(Eigen::Ref<Vector> param, const Eigen::Ref<const Vector>& grad,
                Eigen::Ref<Vector> velocity, double lr, double momentum,
                double weight_decay);

// One optimizer step over every network parameter from the stored gradients.
void sgd_step(Network& net, double lr, double momentum, double weight_decay);

struct EpochMetrics {
  long epoch = 0;
  long iteration = 0;  // optimizer steps completed
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;  // NaN without a test set
  double test_acc = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> log;
};

// Inference-mode loss/accuracy over a dataset.
ForwardResult evaluate(const Network& net, const Dataset& dataset,
                       Index eval_batch = 1024);

// SGD training loop. Aborts with DivergedError when a batch loss goes
// non-finite or above 1e3. Deterministic given config.seed.
TrainResult train(Network& net, const Dataset& train_data,
                  const Dataset* test_data, const TrainConfig& config);

// Metrics CSV with the fixed column set
// epoch,iteration,lr,train_loss,train_acc,test_loss,test_acc,seconds.
std::string metrics_csv(const TrainResult& result);

}  // namespace whitenorm

#endif  // WHITENORM_TRAIN_HPP
