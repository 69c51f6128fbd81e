#include "whitenorm/norm.hpp"

#include <cmath>
#include <string>

namespace whitenorm {

namespace {

constexpr double kEigengapFactor = 1e-8;

void check_training_batch(const Matrix& x, const DbnState& state) {
  if (x.rows() != state.dim) {
    throw ShapeError("input rows " + std::to_string(x.rows()) +
                     " do not match layer dim " + std::to_string(state.dim));
  }
  if (!state.training) {
    throw InvalidInputError("training-mode forward called on inference state");
  }
  if (x.cols() < 2) {
    throw InsufficientBatchError("training batch needs m >= 2, got " +
                                 std::to_string(x.cols()));
  }
  require_finite(x, "activation batch");
}

Matrix apply_affine(const Matrix& whitened, DbnState& state,
                    ForwardCache& cache) {
  if (!state.opts.affine) return whitened;
  cache.pre_affine = whitened;
  Matrix out = (whitened.array().colwise() * state.gamma.array()).matrix();
  out.colwise() += state.beta;
  return out;
}

// Gradient of the affine head; returns the gradient at the whitened output.
Matrix peel_affine(const Matrix& dy, const ForwardCache& cache,
                   const DbnState& state, AffineGrads* affine) {
  if (!state.opts.affine) return dy;
  if (affine) {
    affine->dgamma = (dy.array() * cache.pre_affine.array()).rowwise().sum();
    affine->dbeta = dy.rowwise().sum();
  }
  return (dy.array().colwise() * state.gamma.array()).matrix();
}

// K with K_ij = 1 / (sigma_i - sigma_j) off the diagonal. Gaps under
// 1e-8 * sigma_1 throw unless clamping is enabled.
Matrix eigengap_reciprocal(const Vector& eigenvalues, bool clamp) {
  const Index k = eigenvalues.size();
  Matrix recip = Matrix::Zero(k, k);
  const double threshold = kEigengapFactor * std::abs(eigenvalues(0));
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      if (i == j) continue;
      double gap = eigenvalues(i) - eigenvalues(j);
      if (std::abs(gap) < threshold) {
        if (!clamp) throw DegenerateSpectrumError(std::abs(gap));
        gap = gap >= 0.0 ? threshold : -threshold;
      }
      recip(i, j) = 1.0 / gap;
    }
  }
  return recip;
}

void check_backward_shapes(const Matrix& dy, const ForwardCache& cache,
                           const DbnState& state) {
  if (!cache.valid) {
    throw InvalidInputError("backward pass called without a forward cache");
  }
  if (dy.rows() != cache.dim || dy.cols() != cache.batch ||
      cache.dim != state.dim) {
    throw ShapeError("upstream gradient shape does not match forward cache");
  }
}

// Simplified per-group backward. dy_g is the gradient at this group's
// whitened output.
Matrix simplified_group_backward(const Matrix& dy_g, const GroupCache& g,
                                 NormMode mode, bool clamp) {
  const Index m = dy_g.cols();
  const Matrix& d = g.eigenvectors;
  const Matrix& xt = g.pca_whitened;
  const Vector sqrt_ev = g.eigenvalues.cwiseSqrt();

  const Matrix dxt = mode == NormMode::Zca ? (d.transpose() * dy_g).eval()
                                           : dy_g;
  const Vector f = dxt.rowwise().mean();
  const Matrix fc = (dxt * xt.transpose()) / static_cast<double>(m);
  const Vector diag_fc = fc.diagonal();

  Matrix b = g.eigenvalues.asDiagonal() * fc.transpose();
  if (mode == NormMode::Zca) {
    b += sqrt_ev.asDiagonal() * fc * sqrt_ev.asDiagonal();
  }
  const Matrix k = eigengap_reciprocal(g.eigenvalues, clamp);
  const Matrix kb = k.transpose().cwiseProduct(b);
  const Matrix s = kb + kb.transpose();  // 2 (.)_sym

  Matrix inner = dxt;
  inner.colwise() -= f;
  inner += (s - Matrix(diag_fc.asDiagonal())) * xt;
  return d * sqrt_ev.cwiseInverse().asDiagonal() * inner;
}

// Literal chain through dU, dLambda, dD, dSigma and dmu, in the column
// convention. Serves BN through 1x1 groups, where the K term vanishes.
Matrix reference_group_backward(const Matrix& dy_g, const GroupCache& g,
                                NormMode mode, bool clamp) {
  const double m = static_cast<double>(dy_g.cols());
  const Matrix& d = g.eigenvectors;
  const Matrix& xt = g.pca_whitened;
  const Vector sqrt_ev = g.eigenvalues.cwiseSqrt();
  const Vector inv_sqrt_ev = sqrt_ev.cwiseInverse();

  const Matrix u = inv_sqrt_ev.asDiagonal() * d.transpose();
  const Matrix centered = d * sqrt_ev.asDiagonal() * xt;  // x_i - mu
  const Matrix dxt = mode == NormMode::Zca ? (d.transpose() * dy_g).eval()
                                           : dy_g;
  const Matrix du = dxt * centered.transpose();
  const Matrix dlambda =
      du * d *
      (-0.5 * g.eigenvalues.array().pow(-1.5)).matrix().asDiagonal();
  Matrix dd = du.transpose() * inv_sqrt_ev.asDiagonal();
  if (mode == NormMode::Zca) dd += dy_g * xt.transpose();

  const Matrix k = eigengap_reciprocal(g.eigenvalues, clamp);
  Matrix inner = k.transpose().cwiseProduct(d.transpose() * dd);
  inner += Matrix(Vector(dlambda.diagonal()).asDiagonal());
  const Matrix dsigma = d * inner * d.transpose();
  const Matrix dsigma_sym = 0.5 * (dsigma + dsigma.transpose());

  const Vector dmu = -(u.transpose() * dxt.rowwise().sum()) -
                     (2.0 / m) * (dsigma_sym * centered.rowwise().sum());
  Matrix dx = u.transpose() * dxt + (2.0 / m) * (dsigma_sym * centered);
  dx.colwise() += dmu / m;
  return dx;
}

Matrix bn_backward_closed_form(const Matrix& dyw, const ForwardCache& cache) {
  const Vector mean_dy = dyw.rowwise().mean();
  const Vector mean_dy_xhat =
      (dyw.array() * cache.normalized.array()).rowwise().mean();
  Matrix dx = dyw;
  dx.colwise() -= mean_dy;
  dx -= (cache.normalized.array().colwise() * mean_dy_xhat.array()).matrix();
  return (dx.array().colwise() * cache.inv_std.array()).matrix();
}

GroupCache scalar_group(Index row, const ForwardCache& cache) {
  GroupCache g;
  g.row0 = row;
  g.mean = Vector::Constant(1, cache.mean(row));
  const double inv = cache.inv_std(row);
  g.eigenvalues = Vector::Constant(1, 1.0 / (inv * inv));
  g.eigenvectors = Matrix::Identity(1, 1);
  g.pca_whitened = cache.normalized.row(row);
  return g;
}

using GroupBackwardFn = Matrix (*)(const Matrix&, const GroupCache&, NormMode,
                                   bool);

Matrix backward_dispatch(const Matrix& dy, const ForwardCache& cache,
                         const DbnState& state, AffineGrads* affine,
                         GroupBackwardFn per_group, bool bn_closed_form) {
  check_backward_shapes(dy, cache, state);
  const Matrix dyw = peel_affine(dy, cache, state, affine);
  if (cache.mode == NormMode::Bn) {
    if (bn_closed_form) return bn_backward_closed_form(dyw, cache);
    Matrix dx(cache.dim, cache.batch);
    for (Index r = 0; r < cache.dim; ++r) {
      dx.row(r) = per_group(dyw.row(r), scalar_group(r, cache), NormMode::Zca,
                            state.opts.clamp_degenerate);
    }
    return dx;
  }
  Matrix dx(cache.dim, cache.batch);
  for (const GroupCache& g : cache.groups) {
    const Index k = g.eigenvalues.size();
    dx.middleRows(g.row0, k) =
        per_group(dyw.middleRows(g.row0, k), g, cache.mode,
                  state.opts.clamp_degenerate);
  }
  return dx;
}

}  // namespace

DbnState::DbnState(Index dim_in, DbnOptions opts_in)
    : dim(dim_in), opts(opts_in) {
  if (dim < 1) throw ShapeError("normalization dim must be >= 1");
  if (opts.group_size == 0) opts.group_size = dim;
  if (opts.group_size < 1 || opts.group_size > dim) {
    throw InvalidGroupError("group size " + std::to_string(opts.group_size) +
                            " outside [1, " + std::to_string(dim) + "]");
  }
  if (!(opts.epsilon > 0.0)) {
    throw InvalidInputError("epsilon must be positive");
  }
  if (!(opts.momentum > 0.0) || opts.momentum > 1.0) {
    throw InvalidInputError("momentum must lie in (0, 1]");
  }
  running_mean = Vector::Zero(dim);
  running_whitening = Matrix::Identity(dim, dim);
  if (opts.affine) {
    gamma = Vector::Ones(dim);
    beta = Vector::Zero(dim);
  }
}

std::vector<std::pair<Index, Index>> group_ranges(Index dim,
                                                  Index group_size) {
  if (group_size < 1 || group_size > dim) {
    throw InvalidGroupError("group size " + std::to_string(group_size) +
                            " outside [1, " + std::to_string(dim) + "]");
  }
  std::vector<std::pair<Index, Index>> ranges;
  for (Index r = 0; r < dim; r += group_size) {
    ranges.emplace_back(r, std::min(group_size, dim - r));
  }
  return ranges;
}

std::vector<Matrix> group_split(const Matrix& x, Index group_size) {
  std::vector<Matrix> blocks;
  for (auto [row0, k] : group_ranges(x.rows(), group_size)) {
    blocks.push_back(x.middleRows(row0, k));
  }
  return blocks;
}

Matrix group_merge(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw ShapeError("group_merge needs at least one block");
  Index rows = 0;
  for (const Matrix& b : blocks) {
    if (b.cols() != blocks.front().cols()) {
      throw ShapeError("group_merge blocks disagree on column count");
    }
    rows += b.rows();
  }
  Matrix merged(rows, blocks.front().cols());
  Index r = 0;
  for (const Matrix& b : blocks) {
    merged.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return merged;
}

Matrix bn_forward(const Matrix& x, DbnState& state, ForwardCache& cache) {
  check_training_batch(x, state);
  const double m = static_cast<double>(x.cols());
  const double momentum = state.opts.momentum;

  const Vector mean = x.rowwise().mean();
  Matrix centered = x;
  centered.colwise() -= mean;
  const Vector variance = centered.rowwise().squaredNorm() / m;
  const Vector inv_std =
      (variance.array() + state.opts.epsilon).rsqrt().matrix();
  const Matrix normalized =
      (centered.array().colwise() * inv_std.array()).matrix();

  state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mean;
  state.running_whitening = (1.0 - momentum) * state.running_whitening;
  state.running_whitening.diagonal() += momentum * inv_std;

  cache = ForwardCache{};
  cache.mode = NormMode::Bn;
  cache.dim = state.dim;
  cache.batch = x.cols();
  cache.mean = mean;
  cache.inv_std = inv_std;
  cache.normalized = normalized;
  cache.valid = true;
  return apply_affine(normalized, state, cache);
}

Matrix dbn_forward(const Matrix& x, DbnState& state, ForwardCache& cache) {
  if (state.opts.mode == NormMode::Bn) {
    throw InvalidInputError("dbn_forward expects ZCA or PCA mode");
  }
  check_training_batch(x, state);
  const double m = static_cast<double>(x.cols());
  const double momentum = state.opts.momentum;

  cache = ForwardCache{};
  cache.mode = state.opts.mode;
  cache.dim = state.dim;
  cache.batch = x.cols();
  Matrix out(x.rows(), x.cols());

  for (auto [row0, k] : group_ranges(state.dim, state.opts.group_size)) {
    const auto xg = x.middleRows(row0, k);
    const Vector mean = xg.rowwise().mean();
    Matrix centered = xg;
    centered.colwise() -= mean;
    Matrix sigma = (centered * centered.transpose()) / m;
    sigma.diagonal().array() += state.opts.epsilon;

    EigDecomp eig = sym_eig(sigma);
    // sigma >= epsilon I by construction; anything smaller is solver noise
    eig.eigenvalues = eig.eigenvalues.cwiseMax(state.opts.epsilon);
    const Matrix u = eig.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() *
                     eig.eigenvectors.transpose();
    Matrix xt = u * centered;

    Matrix whitening;
    if (state.opts.mode == NormMode::Zca) {
      whitening = eig.eigenvectors * u;
      out.middleRows(row0, k) = eig.eigenvectors * xt;
    } else {
      whitening = u;
      out.middleRows(row0, k) = xt;
    }

    state.running_mean.segment(row0, k) =
        (1.0 - momentum) * state.running_mean.segment(row0, k) +
        momentum * mean;
    state.running_whitening.block(row0, row0, k, k) =
        (1.0 - momentum) * state.running_whitening.block(row0, row0, k, k) +
        momentum * whitening;

    GroupCache g;
    g.row0 = row0;
    g.mean = mean;
    g.eigenvalues = std::move(eig.eigenvalues);
    g.eigenvectors = std::move(eig.eigenvectors);
    g.pca_whitened = std::move(xt);
    cache.groups.push_back(std::move(g));
  }
  cache.valid = true;
  return apply_affine(out, state, cache);
}

Matrix norm_forward(const Matrix& x, DbnState& state, ForwardCache& cache) {
  return state.opts.mode == NormMode::Bn ? bn_forward(x, state, cache)
                                         : dbn_forward(x, state, cache);
}

Matrix dbn_infer(const Matrix& x, const DbnState& state) {
  if (x.rows() != state.dim) {
    throw ShapeError("input rows do not match layer dim");
  }
  require_finite(x, "activation batch");
  Matrix centered = x;
  centered.colwise() -= state.running_mean;
  Matrix out(x.rows(), x.cols());
  for (auto [row0, k] : group_ranges(state.dim, state.opts.group_size)) {
    out.middleRows(row0, k) = state.running_whitening.block(row0, row0, k, k) *
                              centered.middleRows(row0, k);
  }
  if (state.opts.affine) {
    out = (out.array().colwise() * state.gamma.array()).matrix();
    out.colwise() += state.beta;
  }
  return out;
}

Matrix dbn_backward(const Matrix& dy, const ForwardCache& cache,
                    const DbnState& state, AffineGrads* affine) {
  return backward_dispatch(dy, cache, state, affine,
                           &simplified_group_backward,
                           /*bn_closed_form=*/true);
}

Matrix dbn_backward_reference(const Matrix& dy, const ForwardCache& cache,
                              const DbnState& state, AffineGrads* affine) {
  return backward_dispatch(dy, cache, state, affine,
                           &reference_group_backward,
                           /*bn_closed_form=*/false);
}

Matrix trelu_forward(const Matrix& x, const Vector& thresholds) {
  if (thresholds.size() != x.rows()) {
    throw ShapeError("threshold count does not match feature count");
  }
  Matrix out = x;
  for (Index c = 0; c < out.cols(); ++c) {
    out.col(c) = out.col(c).cwiseMax(thresholds);
  }
  return out;
}

TreluBackward trelu_backward(const Matrix& dy, const Matrix& x,
                             const Vector& thresholds) {
  if (dy.rows() != x.rows() || dy.cols() != x.cols() ||
      thresholds.size() != x.rows()) {
    throw ShapeError("trelu_backward shape mismatch");
  }
  TreluBackward result;
  result.dx = Matrix::Zero(x.rows(), x.cols());
  result.dthresholds = Vector::Zero(thresholds.size());
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < x.rows(); ++r) {
      if (x(r, c) > thresholds(r)) {
        result.dx(r, c) = dy(r, c);
      } else {
        result.dthresholds(r) += dy(r, c);
      }
    }
  }
  return result;
}

Matrix unroll_conv(const Tensor4& x) {
  Matrix out(x.channels, x.examples * x.height * x.width);
  for (Index m = 0; m < x.examples; ++m) {
    for (Index d = 0; d < x.channels; ++d) {
      for (Index h = 0; h < x.height; ++h) {
        for (Index w = 0; w < x.width; ++w) {
          out(d, (m * x.height + h) * x.width + w) = x.at(m, d, h, w);
        }
      }
    }
  }
  return out;
}

Tensor4 roll_conv(const Matrix& x, Index examples, Index height, Index width) {
  if (x.cols() != examples * height * width) {
    throw ShapeError("roll_conv: column count does not factor as m*h*w");
  }
  Tensor4 out(examples, x.rows(), height, width);
  for (Index m = 0; m < examples; ++m) {
    for (Index d = 0; d < x.rows(); ++d) {
      for (Index h = 0; h < height; ++h) {
        for (Index w = 0; w < width; ++w) {
          out.at(m, d, h, w) = x(d, (m * height + h) * width + w);
        }
      }
    }
  }
  return out;
}

}  // namespace whitenorm
