#ifndef WHITENORM_LINALG_HPP
#define WHITENORM_LINALG_HPP

#include <Eigen/Dense>

#include "whitenorm/errors.hpp"

namespace whitenorm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Eigendecomposition of a symmetric matrix in canonical form:
//   - eigenvalues(i) pairs with eigenvectors.col(i),
//   - eigenvalues sorted non-increasingly,
//   - the first significant entry of every eigenvector column is positive,
//   - exact eigenvalue ties ordered by lexicographically descending columns.
struct EigDecomp {
  Vector eigenvalues;
  Matrix eigenvectors;
};

// Cyclic Jacobi eigensolver for symmetric matrices, float64. Sweeps until
// the off-diagonal Frobenius norm drops below 1e-12 * ||S||_F or the sweep
// cap is hit. Deterministic: identical input bits give identical output
// bits.
//
// Throws SymmetryError when max|S - S^T| exceeds 1e-12 * max(1, max|S|),
// ConvergenceError when the sweep cap is exhausted.
EigDecomp sym_eig(const Eigen::Ref<const Matrix>& s, int max_sweeps = 100);

// D diag(lambda)^{-1/2} D^T and diag(lambda)^{-1/2} D^T from an existing
// decomposition. Both throw NotPositiveDefiniteError (carrying the
// offending eigenvalue) unless every eigenvalue is positive.
Matrix assemble_inv_sqrt_zca(const EigDecomp& eig);
Matrix assemble_inv_sqrt_pca(const EigDecomp& eig);

// Symmetric inverse square root (ZCA whitening matrix) of a symmetric
// positive-definite matrix.
Matrix inv_sqrt_zca(const Eigen::Ref<const Matrix>& s);

// PCA whitening matrix diag(lambda)^{-1/2} D^T; not symmetric in general.
Matrix inv_sqrt_pca(const Eigen::Ref<const Matrix>& s);

// sigma_max / sigma_min of a symmetric positive-semidefinite matrix via
// sym_eig; +infinity once sigma_min falls at or below the 1e-300 clamp.
double condition_number(const Eigen::Ref<const Matrix>& s);

// Mean over columns (the batch mean of a d x m activation matrix).
inline Vector batch_mean(const Eigen::Ref<const Matrix>& x) {
  return x.rowwise().mean();
}

// Throws InvalidInputError when the matrix holds a NaN or infinity.
void require_finite(const Eigen::Ref<const Matrix>& x, const char* what);

}  // namespace whitenorm

#endif  // WHITENORM_LINALG_HPP
