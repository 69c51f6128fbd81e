#ifndef WHITENORM_NORM_HPP
#define WHITENORM_NORM_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "whitenorm/linalg.hpp"

namespace whitenorm {

enum class NormMode { Zca, Pca, Bn };

struct DbnOptions {
  NormMode mode = NormMode::Zca;
  Index group_size = 0;  // 0 resolves to the full dimension
  double epsilon = 1e-5;
  double momentum = 0.1;
  bool affine = false;
  // With a near-degenerate spectrum the backward pass throws by default;
  // clamping the 1/(sigma_i - sigma_j) denominators instead yields an
  // approximate gradient.
  bool clamp_degenerate = false;
};

// Per-layer normalization state. Running statistics start at the identity
// transform (mean 0, whitening I) and are updated by running average on
// every training-mode forward pass. The running whitening matrix stays
// block-diagonal with one block per feature group.
struct DbnState {
  DbnState(Index dim, DbnOptions opts);

  Index dim = 0;
  DbnOptions opts;
  Vector running_mean;
  Matrix running_whitening;
  Vector gamma;  // size dim when affine, else empty
  Vector beta;
  bool training = true;
};

// Saved forward-pass tensors consumed by the backward pass.
struct GroupCache {
  Index row0 = 0;
  Vector mean;          // per-group batch mean
  Vector eigenvalues;   // non-increasing
  Matrix eigenvectors;  // columns
  Matrix pca_whitened;  // x-tilde, k x m
};

struct ForwardCache {
  NormMode mode = NormMode::Zca;
  Index dim = 0;
  Index batch = 0;
  std::vector<GroupCache> groups;  // ZCA/PCA path
  Vector mean;                     // BN path
  Vector inv_std;                  // BN path
  Matrix normalized;               // BN path, x-hat
  Matrix pre_affine;               // whitened output before gamma/beta
  bool valid = false;
};

struct AffineGrads {
  Vector dgamma;
  Vector dbeta;
};

// Consecutive-row grouping; the last group keeps d mod k rows when the
// division is uneven. Throws InvalidGroupError outside 1 <= k <= d.
std::vector<std::pair<Index, Index>> group_ranges(Index dim, Index group_size);
std::vector<Matrix> group_split(const Matrix& x, Index group_size);
Matrix group_merge(const std::vector<Matrix>& blocks);

// Per-row standardization (x - mu) / sqrt(var + eps) with biased batch
// variance, affine applied when enabled. Training-mode only; updates the
// running statistics.
Matrix bn_forward(const Matrix& x, DbnState& state, ForwardCache& cache);

// Group-wise whitening per mode (ZCA rotates the PCA-whitened activations
// back). Covariance is epsilon-augmented before the eigendecomposition.
// Updates running mean and running whitening matrix by running average.
Matrix dbn_forward(const Matrix& x, DbnState& state, ForwardCache& cache);

// Mode dispatch used by network layers.
Matrix norm_forward(const Matrix& x, DbnState& state, ForwardCache& cache);

// Inference-time normalization with the running statistics; valid for any
// batch size including m = 1, mutates nothing.
Matrix dbn_infer(const Matrix& x, const DbnState& state);

// Simplified backward pass (single fused formula per group). When affine is
// enabled the gamma/beta gradients are written through `affine` if given.
Matrix dbn_backward(const Matrix& dy, const ForwardCache& cache,
                    const DbnState& state, AffineGrads* affine = nullptr);

// Unsimplified backward chain through dU, dLambda, dD, dSigma, dmu. Same
// contract as dbn_backward; the two are mutual oracles.
Matrix dbn_backward_reference(const Matrix& dy, const ForwardCache& cache,
                              const DbnState& state,
                              AffineGrads* affine = nullptr);

// Elementwise max(x, t) with a per-dimension learnable threshold.
Matrix trelu_forward(const Matrix& x, const Vector& thresholds);

struct TreluBackward {
  Matrix dx;
  Vector dthresholds;
};

// Gradient routes to x where x > t and to the threshold where x <= t.
TreluBackward trelu_backward(const Matrix& dy, const Matrix& x,
                             const Vector& thresholds);

// Feature-map unrolling: every spatial position counts as a sample.
struct Tensor4 {
  Index examples = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;  // indexed (example, channel, row, col)

  Tensor4() = default;
  Tensor4(Index m, Index d, Index h, Index w)
      : examples(m), channels(d), height(h), width(w),
        data(static_cast<std::size_t>(m * d * h * w), 0.0) {}

  double& at(Index m, Index d, Index h, Index w) {
    return data[static_cast<std::size_t>(
        ((m * channels + d) * height + h) * width + w)];
  }
  double at(Index m, Index d, Index h, Index w) const {
    return data[static_cast<std::size_t>(
        ((m * channels + d) * height + h) * width + w)];
  }
};

Matrix unroll_conv(const Tensor4& x);
Tensor4 roll_conv(const Matrix& x, Index examples, Index height, Index width);

}  // namespace whitenorm

#endif  // WHITENORM_NORM_HPP
