#ifndef WHITENORM_NET_HPP
#define WHITENORM_NET_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "whitenorm/norm.hpp"

namespace whitenorm {

enum class LayerKind { Linear, Relu, Trelu, Norm, SoftmaxNll };

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  Index in = 0, out = 0;  // linear only
  DbnOptions norm;        // norm layers only

  static LayerSpec linear(Index in, Index out);
  static LayerSpec relu();
  static LayerSpec trelu();
  static LayerSpec batch_norm(bool affine = false);
  static LayerSpec dbn(NormMode mode, Index group_size, bool affine = false);
  static LayerSpec softmax_nll();
};

struct NetworkSpec {
  Index input_dim = 0;
  std::vector<LayerSpec> layers;
};

struct Layer {
  LayerSpec spec;
  Index dim_in = 0, dim_out = 0;

  // parameters
  Matrix weight;
  Vector bias;
  Vector thresholds;
  std::optional<DbnState> norm;

  // gradients
  Matrix dweight;
  Vector dbias;
  Vector dthresholds;
  AffineGrads norm_grads;

  // SGD velocities
  Matrix vweight;
  Vector vbias;
  Vector vthresholds;
  Vector vgamma, vbeta;

  // per-batch caches, training mode only
  Matrix input;
  ForwardCache norm_cache;
  Matrix probs;
};

struct Network {
  NetworkSpec spec;
  Index input_dim = 0;
  Index classes = 0;
  std::vector<Layer> layers;
  bool caches_valid = false;
  std::vector<int> labels;
};

struct ForwardResult {
  double loss = 0.0;
  Index correct = 0;
};

// LeCun-style initialization: weights Normal(0, 1/fan_in), biases zero,
// gamma 1, beta 0, thresholds 0. Deterministic per seed.
Network init_params(const NetworkSpec& spec, std::uint64_t seed);

// Mean negative log-likelihood over the batch. Training mode retains the
// caches net_backward consumes and updates normalization running stats;
// inference mode touches nothing.
ForwardResult net_forward(Network& net, const Matrix& x,
                          const std::vector<int>& labels, bool training);
ForwardResult net_infer(const Network& net, const Matrix& x,
                        const std::vector<int>& labels);

// Fills every parameter gradient and returns the gradient at the input.
Matrix net_backward(Network& net);

// Inference-mode activations entering layer `layer_index`.
Matrix net_activations(const Network& net, const Matrix& x,
                       std::size_t layer_index);

// Flat parameter access in a fixed order (for gradient checking and SGD).
Index param_count(const Network& net);
Vector collect_params(const Network& net);
void assign_params(Network& net, const Vector& params);
Vector collect_grads(const Network& net);

// Visits (parameter, gradient, velocity) triplets as flat views.
using ParamVisitor =
    std::function<void(Eigen::Map<Vector>, Eigen::Map<const Vector>,
                       Eigen::Map<Vector>)>;
void for_each_param(Network& net, const ParamVisitor& visit);

}  // namespace whitenorm

#endif  // WHITENORM_NET_HPP
