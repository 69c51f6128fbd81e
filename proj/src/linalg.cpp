#include "whitenorm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace whitenorm {

namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr double kConvergenceTol = 1e-12;
// Entries below this are treated as zero by the sign convention.
constexpr double kSignificant = 1e-12;

double off_diagonal_norm(const Matrix& a) {
  double sum = 0.0;
  const Index n = a.rows();
  for (Index p = 0; p < n; ++p) {
    for (Index q = 0; q < n; ++q) {
      if (p != q) sum += a(p, q) * a(p, q);
    }
  }
  return std::sqrt(sum);
}

void canonicalize(Vector& values, Matrix& vectors) {
  const Index n = values.size();
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      if (std::abs(vectors(i, j)) > kSignificant) {
        if (vectors(i, j) < 0.0) vectors.col(j) = -vectors.col(j);
        break;
      }
    }
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (values(a) != values(b)) return values(a) > values(b);
    for (Index r = 0; r < n; ++r) {
      if (vectors(r, a) != vectors(r, b)) return vectors(r, a) > vectors(r, b);
    }
    return false;
  });
  Vector sorted_values(n);
  Matrix sorted_vectors(n, n);
  for (Index j = 0; j < n; ++j) {
    sorted_values(j) = values(order[static_cast<std::size_t>(j)]);
    sorted_vectors.col(j) = vectors.col(order[static_cast<std::size_t>(j)]);
  }
  values = std::move(sorted_values);
  vectors = std::move(sorted_vectors);
}

Vector checked_inv_sqrt(const Vector& eigenvalues) {
  for (Index i = 0; i < eigenvalues.size(); ++i) {
    if (eigenvalues(i) <= 0.0) throw NotPositiveDefiniteError(eigenvalues(i));
  }
  return eigenvalues.cwiseSqrt().cwiseInverse();
}

}  // namespace

EigDecomp sym_eig(const Eigen::Ref<const Matrix>& input, int max_sweeps) {
  const Index n = input.rows();
  if (n < 1 || input.cols() != n) {
    throw ShapeError("sym_eig expects a square matrix with d >= 1");
  }
  const double scale = std::max(1.0, input.cwiseAbs().maxCoeff());
  const double asymmetry = (input - input.transpose()).cwiseAbs().maxCoeff();
  if (asymmetry > kSymmetryTol * scale) {
    throw SymmetryError("sym_eig input asymmetric by " +
                        std::to_string(asymmetry));
  }

  Matrix a = 0.5 * (input + input.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double tol = kConvergenceTol * a.norm();

  int sweep = 0;
  double off = off_diagonal_norm(a);
  while (off > tol) {
    if (sweep++ >= max_sweeps) throw ConvergenceError(off);
    for (Index p = 0; p + 1 < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) /
            (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // a <- J^T a J with the rotation acting on rows/columns (p, q)
        const Vector col_p = a.col(p);
        const Vector col_q = a.col(q);
        a.col(p) = c * col_p - s * col_q;
        a.col(q) = s * col_p + c * col_q;
        const Eigen::RowVectorXd row_p = a.row(p);
        const Eigen::RowVectorXd row_q = a.row(q);
        a.row(p) = c * row_p - s * row_q;
        a.row(q) = s * row_p + c * row_q;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        const Vector v_p = v.col(p);
        const Vector v_q = v.col(q);
        v.col(p) = c * v_p - s * v_q;
        v.col(q) = s * v_p + c * v_q;
      }
    }
    off = off_diagonal_norm(a);
  }

  Vector values = a.diagonal();
  canonicalize(values, v);
  return EigDecomp{std::move(values), std::move(v)};
}

Matrix assemble_inv_sqrt_zca(const EigDecomp& eig) {
  const Vector inv_sqrt = checked_inv_sqrt(eig.eigenvalues);
  return eig.eigenvectors * inv_sqrt.asDiagonal() *
         eig.eigenvectors.transpose();
}

Matrix assemble_inv_sqrt_pca(const EigDecomp& eig) {
  const Vector inv_sqrt = checked_inv_sqrt(eig.eigenvalues);
  return inv_sqrt.asDiagonal() * eig.eigenvectors.transpose();
}

Matrix inv_sqrt_zca(const Eigen::Ref<const Matrix>& s) {
  return assemble_inv_sqrt_zca(sym_eig(s));
}

Matrix inv_sqrt_pca(const Eigen::Ref<const Matrix>& s) {
  return assemble_inv_sqrt_pca(sym_eig(s));
}

double condition_number(const Eigen::Ref<const Matrix>& s) {
  const EigDecomp eig = sym_eig(s);
  const double largest = eig.eigenvalues(0);
  const double smallest = eig.eigenvalues(eig.eigenvalues.size() - 1);
  if (smallest <= 1e-300) return std::numeric_limits<double>::infinity();
  return largest / smallest;
}

void require_finite(const Eigen::Ref<const Matrix>& x, const char* what) {
  if (!x.allFinite()) {
    throw InvalidInputError(std::string(what) +
                            " contains a non-finite entry");
  }
}

}  // namespace whitenorm
