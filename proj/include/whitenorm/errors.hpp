#ifndef WHITENORM_ERRORS_HPP
#define WHITENORM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace whitenorm {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input to the eigensolver is not symmetric within tolerance.
class SymmetryError : public Error {
 public:
  using Error::Error;
};

// Jacobi sweeps exhausted before the off-diagonal norm fell under tolerance.
class ConvergenceError : public Error {
 public:
  explicit ConvergenceError(double residual)
      : Error("eigensolver did not converge, off-diagonal norm " +
              std::to_string(residual)),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class NotPositiveDefiniteError : public Error {
 public:
  explicit NotPositiveDefiniteError(double eigenvalue)
      : Error("matrix is not positive definite, eigenvalue " +
              std::to_string(eigenvalue)),
        eigenvalue_(eigenvalue) {}
  double eigenvalue() const { return eigenvalue_; }

 private:
  double eigenvalue_;
};

// Eigenvalue gap too small for the K matrix of the whitening backward pass.
class DegenerateSpectrumError : public Error {
 public:
  explicit DegenerateSpectrumError(double gap)
      : Error("degenerate eigenvalue spectrum, gap " + std::to_string(gap) +
              "; enable clamp_degenerate for an approximate gradient"),
        gap_(gap) {}
  double gap() const { return gap_; }

 private:
  double gap_;
};

class InsufficientBatchError : public Error {
 public:
  using Error::Error;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

class InvalidGroupError : public Error {
 public:
  using Error::Error;
};

class IdxFormatError : public Error {
 public:
  using Error::Error;
};

class EmptyEpochError : public Error {
 public:
  using Error::Error;
};

class DivergedError : public Error {
 public:
  using Error::Error;
};

class CapExceededError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace whitenorm

#endif  // WHITENORM_ERRORS_HPP
