#include "whitenorm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "whitenorm/rng.hpp"

namespace whitenorm {

namespace {

constexpr double kDivergenceCeiling = 1e3;

std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

}  // namespace

Schedule Schedule::constant() { return Schedule{}; }

Schedule Schedule::halve_every(long iterations) {
  Schedule s;
  s.kind = ScheduleKind::HalveEvery;
  s.period = iterations;
  return s;
}

Schedule Schedule::divide_at(std::vector<long> epochs, double factor) {
  Schedule s;
  s.kind = ScheduleKind::DivideAt;
  s.epochs = std::move(epochs);
  s.factor = factor;
  return s;
}

double schedule_lr(const Schedule& schedule, double base_lr, long iteration,
                   long epoch) {
  switch (schedule.kind) {
    case ScheduleKind::Constant:
      return base_lr;
    case ScheduleKind::HalveEvery: {
      if (schedule.period < 1) {
        throw InvalidInputError("halve_every needs a positive period");
      }
      return base_lr * std::pow(0.5, static_cast<double>(iteration /
                                                         schedule.period));
    }
    case ScheduleKind::DivideAt: {
      if (!(schedule.factor > 1.0)) {
        throw InvalidInputError("divide_at factor must exceed 1");
      }
      long crossed = 0;
      for (long boundary : schedule.epochs) {
        if (epoch >= boundary) ++crossed;
      }
      return base_lr / std::pow(schedule.factor, static_cast<double>(crossed));
    }
  }
  return base_lr;
}

void sgd_update(Eigen::Ref<Vector> param, const Eigen::Ref<const Vector>& grad,
                Eigen::Ref<Vector> velocity, double lr, double momentum,
                double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ShapeError("sgd_update: parameter/gradient/velocity sizes differ");
  }
  velocity = momentum * velocity - lr * (grad + weight_decay * param);
  param += velocity;
}

void sgd_step(Network& net, double lr, double momentum, double weight_decay) {
  for_each_param(net, [&](Eigen::Map<Vector> p, Eigen::Map<const Vector> g,
                          Eigen::Map<Vector> v) {
    sgd_update(p, g, v, lr, momentum, weight_decay);
  });
}

ForwardResult evaluate(const Network& net, const Dataset& dataset,
                       Index eval_batch) {
  double total_loss = 0.0;
  Index total_correct = 0;
  Index seen = 0;
  for (Index start = 0; start < dataset.size(); start += eval_batch) {
    const Index count = std::min(eval_batch, dataset.size() - start);
    const Matrix x = dataset.features.middleCols(start, count);
    const std::vector<int> labels(dataset.labels.begin() + start,
                                  dataset.labels.begin() + start + count);
    const ForwardResult r = net_infer(net, x, labels);
    total_loss += r.loss * static_cast<double>(count);
    total_correct += r.correct;
    seen += count;
  }
  ForwardResult out;
  out.loss = total_loss / static_cast<double>(seen);
  out.correct = total_correct;
  return out;
}

TrainResult train(Network& net, const Dataset& train_data,
                  const Dataset* test_data, const TrainConfig& config) {
  if (!(config.lr > 0.0)) throw InvalidInputError("learning rate must be > 0");
  if (config.momentum < 0.0 || config.momentum >= 1.0) {
    throw InvalidInputError("momentum must lie in [0, 1)");
  }
  TrainResult result;
  const Index batch_size =
      config.full_batch ? train_data.size() : config.batch_size;
  long iteration = 0;
  double lr = config.lr;

  for (long epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    BatchStream stream(train_data, batch_size,
                       splitmix64(config.seed ^ static_cast<std::uint64_t>(epoch)),
                       config.shuffle && !config.full_batch);
    double loss_sum = 0.0;
    Index correct = 0;
    Index seen = 0;
    while (auto batch = stream.next()) {
      lr = schedule_lr(config.schedule, config.lr, iteration, epoch);
      const ForwardResult r = net_forward(net, batch->x, batch->labels, true);
      if (!std::isfinite(r.loss) || r.loss > kDivergenceCeiling) {
        throw DivergedError("training diverged at epoch " +
                            std::to_string(epoch) + ", loss " +
                            std::to_string(r.loss));
      }
      net_backward(net);
      sgd_step(net, lr, config.momentum, config.weight_decay);
      ++iteration;
      const Index m = batch->x.cols();
      loss_sum += r.loss * static_cast<double>(m);
      correct += r.correct;
      seen += m;
    }

    EpochMetrics row;
    row.epoch = epoch;
    row.iteration = iteration;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.train_acc =
        static_cast<double>(correct) / static_cast<double>(seen);
    if (test_data != nullptr && test_data->size() > 0) {
      const ForwardResult t = evaluate(net, *test_data);
      row.test_loss = t.loss;
      row.test_acc = static_cast<double>(t.correct) /
                     static_cast<double>(test_data->size());
    } else {
      row.test_loss = std::numeric_limits<double>::quiet_NaN();
      row.test_acc = std::numeric_limits<double>::quiet_NaN();
    }
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count();
    result.log.push_back(row);
  }
  return result;
}

std::string metrics_csv(const TrainResult& result) {
  std::string out =
      "epoch,iteration,lr,train_loss,train_acc,test_loss,test_acc,seconds\n";
  for (const EpochMetrics& row : result.log) {
    out += std::to_string(row.epoch) + "," + std::to_string(row.iteration) +
           "," + format_double(row.lr) + "," + format_double(row.train_loss) +
           "," + format_double(row.train_acc) + "," +
           format_double(row.test_loss) + "," + format_double(row.test_acc) +
           "," + format_double(row.seconds) + "\n";
  }
  return out;
}

}  // namespace whitenorm
