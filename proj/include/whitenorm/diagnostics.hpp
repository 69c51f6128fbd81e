#ifndef WHITENORM_DIAGNOSTICS_HPP
#define WHITENORM_DIAGNOSTICS_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "whitenorm/data.hpp"
#include "whitenorm/net.hpp"
#include "whitenorm/norm.hpp"

namespace whitenorm {

// Central-difference check of an analytic gradient: perturbs every entry of
// x0 by +-h and compares (f(x+h) - f(x-h)) / 2h against `analytic`, using
// relative error with denominator max(|analytic|, |numeric|, 1e-8). Returns
// the worst entry. Throws InvalidInputError on non-finite probe values.
double gradcheck(const std::function<double(const Matrix&)>& f,
                 const Matrix& x0, const Matrix& analytic, double h);
double gradcheck_vec(const std::function<double(const Vector&)>& f,
                     const Vector& x0, const Vector& analytic, double h);

// Draws a batch whose epsilon-augmented covariance has relative eigengaps
// of at least `min_gap` in every group (redraws deterministically until the
// spectrum is safe).
Matrix gapped_batch(Index dim, Index batch, Index group_size, double epsilon,
                    std::uint64_t seed, double min_gap = 1e-3);

// Whitening-layer gradient check: a fixed random linear+quadratic probe
// loss through the training-mode forward pass of the given mode, with the
// analytic gradient from dbn_backward. Returns the max relative error.
double whitening_gradcheck_cell(Index dim, Index batch, Index group_size,
                                NormMode mode, double epsilon, double h,
                                std::uint64_t seed);

struct WhitenessReport {
  double max_identity_deviation = 0.0;  // max |cov(xhat) - (I - eps Sigma^-1)|
  Matrix correlation;                   // of the whitened output
  double condition_before = 0.0;        // kappa(Sigma)
  double condition_after = 0.0;         // kappa(cov(xhat))
};

// `sigma` is the epsilon-augmented covariance the whitening saw.
WhitenessReport whiteness_report(const Matrix& xhat, double epsilon,
                                 const Matrix& sigma);

// Compares the PCA/ZCA transforms two batches induce, on a shared point
// set. Permutations are detected by matching whitening-matrix rows by
// maximal absolute cosine similarity (ties to the lower index).
struct PairReport {
  std::vector<int> pca_permutation;
  std::vector<int> zca_permutation;
  double pca_displacement = 0.0;  // max over shared points
  double zca_displacement = 0.0;
};

PairReport axis_swap_compare(const Matrix& batch_a, const Matrix& batch_b,
                             const Matrix& shared_points, double epsilon);

// Constructed 2-D demonstration: a batch pair whose eigenvalue ordering
// flips (axis swap under PCA whitening) and a control pair where it does
// not. Deterministic given the seed.
struct AxisSwapReport {
  PairReport flipping;
  PairReport control;
};

AxisSwapReport axis_swap_demo(std::uint64_t seed);

// Condition number of the empirical Fisher of one linear layer's weights:
// mean over examples of g g^T with g the per-example gradient of the
// negative log-likelihood. The layer must be followed by softmax_nll only,
// and its weight count is capped at 2000.
double fim_condition(const Network& net, const Dataset& dataset,
                     std::size_t layer_index);

}  // namespace whitenorm

#endif  // WHITENORM_DIAGNOSTICS_HPP
