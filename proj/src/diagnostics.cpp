#include "whitenorm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "whitenorm/rng.hpp"

namespace whitenorm {

namespace {

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::vector<int> match_rows(const Matrix& target, const Matrix& reference) {
  std::vector<int> permutation(static_cast<std::size_t>(target.rows()), 0);
  for (Index i = 0; i < target.rows(); ++i) {
    double best = -1.0;
    Index best_j = 0;
    const double target_norm = target.row(i).norm();
    for (Index j = 0; j < reference.rows(); ++j) {
      const double denom = target_norm * reference.row(j).norm();
      const double cosine =
          denom > 0.0 ? std::abs(target.row(i).dot(reference.row(j))) / denom
                      : 0.0;
      if (cosine > best) {
        best = cosine;
        best_j = j;
      }
    }
    permutation[static_cast<std::size_t>(i)] = static_cast<int>(best_j);
  }
  return permutation;
}

double max_column_displacement(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Index c = 0; c < a.cols(); ++c) {
    worst = std::max(worst, (a.col(c) - b.col(c)).norm());
  }
  return worst;
}

Matrix centered_covariance(const Matrix& batch, double epsilon) {
  const Vector mean = batch.rowwise().mean();
  Matrix centered = batch;
  centered.colwise() -= mean;
  Matrix sigma = (centered * centered.transpose()) /
                 static_cast<double>(batch.cols());
  sigma.diagonal().array() += epsilon;
  return sigma;
}

}  // namespace

double gradcheck(const std::function<double(const Matrix&)>& f,
                 const Matrix& x0, const Matrix& analytic, double h) {
  if (analytic.rows() != x0.rows() || analytic.cols() != x0.cols()) {
    throw ShapeError("gradcheck: analytic gradient shape mismatch");
  }
  if (!(h > 0.0)) throw InvalidInputError("gradcheck step must be positive");
  Matrix probe = x0;
  double worst = 0.0;
  for (Index c = 0; c < x0.cols(); ++c) {
    for (Index r = 0; r < x0.rows(); ++r) {
      const double saved = probe(r, c);
      probe(r, c) = saved + h;
      const double up = f(probe);
      probe(r, c) = saved - h;
      const double down = f(probe);
      probe(r, c) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw InvalidInputError("gradcheck probe produced a non-finite value");
      }
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic(r, c), numeric));
    }
  }
  return worst;
}

double gradcheck_vec(const std::function<double(const Vector&)>& f,
                     const Vector& x0, const Vector& analytic, double h) {
  const Matrix x_m = x0;
  const Matrix a_m = analytic;
  return gradcheck(
      [&](const Matrix& m) { return f(Vector(m.col(0))); }, x_m, a_m, h);
}

Matrix gapped_batch(Index dim, Index batch, Index group_size, double epsilon,
                    std::uint64_t seed, double min_gap) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng = Rng::substream(seed + static_cast<std::uint64_t>(attempt),
                             "diag/gapped-batch");
    Matrix x(dim, batch);
    for (Index c = 0; c < batch; ++c) {
      for (Index r = 0; r < dim; ++r) x(r, c) = rng.normal();
    }
    // widen the per-feature scales so covariance eigenvalues spread out
    for (Index r = 0; r < dim; ++r) {
      x.row(r) *= 1.0 + 0.75 * static_cast<double>(r);
    }
    bool safe = true;
    for (auto [row0, k] : group_ranges(dim, group_size)) {
      const Matrix sigma =
          centered_covariance(x.middleRows(row0, k), epsilon);
      const EigDecomp eig = sym_eig(sigma);
      for (Index i = 0; i + 1 < k && safe; ++i) {
        if (eig.eigenvalues(i) - eig.eigenvalues(i + 1) <
            min_gap * eig.eigenvalues(0)) {
          safe = false;
        }
      }
      if (!safe) break;
    }
    if (safe) return x;
  }
  throw InvalidInputError("gapped_batch: no safe spectrum after 100 draws");
}

double whitening_gradcheck_cell(Index dim, Index batch, Index group_size,
                                NormMode mode, double epsilon, double h,
                                std::uint64_t seed) {
  const Matrix x = gapped_batch(dim, batch, group_size, epsilon, seed);
  Rng rng = Rng::substream(seed, "diag/probe");
  Matrix linear(dim, batch);
  Matrix quadratic(dim, batch);
  for (Index c = 0; c < batch; ++c) {
    for (Index r = 0; r < dim; ++r) {
      linear(r, c) = rng.normal();
      quadratic(r, c) = rng.normal();
    }
  }

  DbnOptions opts;
  opts.mode = mode;
  opts.group_size = mode == NormMode::Bn ? 1 : group_size;
  opts.epsilon = epsilon;

  const auto probe_loss = [&](const Matrix& input) {
    DbnState state(dim, opts);
    ForwardCache cache;
    const Matrix y = norm_forward(input, state, cache);
    return (linear.array() * y.array()).sum() +
           0.5 * (quadratic.array() * y.array() * y.array()).sum();
  };

  DbnState state(dim, opts);
  ForwardCache cache;
  const Matrix y = norm_forward(x, state, cache);
  const Matrix dy = linear + quadratic.cwiseProduct(y);
  const Matrix analytic = dbn_backward(dy, cache, state);
  return gradcheck(probe_loss, x, analytic, h);
}

WhitenessReport whiteness_report(const Matrix& xhat, double epsilon,
                                 const Matrix& sigma) {
  if (sigma.rows() != xhat.rows() || sigma.cols() != xhat.rows()) {
    throw ShapeError("whiteness_report: sigma shape mismatch");
  }
  const double m = static_cast<double>(xhat.cols());
  const Matrix cov = (xhat * xhat.transpose()) / m;

  const EigDecomp eig = sym_eig(sigma);
  for (Index i = 0; i < eig.eigenvalues.size(); ++i) {
    if (eig.eigenvalues(i) <= 0.0) {
      throw NotPositiveDefiniteError(eig.eigenvalues(i));
    }
  }
  const Matrix sigma_inv = eig.eigenvectors *
                           eig.eigenvalues.cwiseInverse().asDiagonal() *
                           eig.eigenvectors.transpose();
  const Matrix target =
      Matrix::Identity(xhat.rows(), xhat.rows()) - epsilon * sigma_inv;

  WhitenessReport report;
  report.max_identity_deviation = (cov - target).cwiseAbs().maxCoeff();
  report.correlation.resize(cov.rows(), cov.cols());
  for (Index i = 0; i < cov.rows(); ++i) {
    for (Index j = 0; j < cov.cols(); ++j) {
      const double denom = std::sqrt(cov(i, i) * cov(j, j));
      report.correlation(i, j) = denom > 0.0 ? cov(i, j) / denom : 0.0;
    }
  }
  report.condition_before = condition_number(sigma);
  report.condition_after = condition_number(cov);
  return report;
}

PairReport axis_swap_compare(const Matrix& batch_a, const Matrix& batch_b,
                             const Matrix& shared_points, double epsilon) {
  const Matrix sigma_a = centered_covariance(batch_a, epsilon);
  const Matrix sigma_b = centered_covariance(batch_b, epsilon);
  const Matrix pca_a = inv_sqrt_pca(sigma_a);
  const Matrix pca_b = inv_sqrt_pca(sigma_b);
  const Matrix zca_a = inv_sqrt_zca(sigma_a);
  const Matrix zca_b = inv_sqrt_zca(sigma_b);

  const Vector mean_a = batch_a.rowwise().mean();
  const Vector mean_b = batch_b.rowwise().mean();
  Matrix shared_a = shared_points;
  shared_a.colwise() -= mean_a;
  Matrix shared_b = shared_points;
  shared_b.colwise() -= mean_b;

  PairReport report;
  report.pca_permutation = match_rows(pca_b, pca_a);
  report.zca_permutation = match_rows(zca_b, zca_a);
  report.pca_displacement =
      max_column_displacement(pca_b * shared_b, pca_a * shared_a);
  report.zca_displacement =
      max_column_displacement(zca_b * shared_b, zca_a * shared_a);
  return report;
}

AxisSwapReport axis_swap_demo(std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "diag/axis-swap");
  // Shared core points, symmetric under both axis reflections: zero mean
  // and exactly diagonal covariance by construction. The two axis variances
  // stay close so the flip weight below decides the eigenvalue ordering.
  const double a = 1.05 + 0.05 * rng.uniform();
  const double b = 0.95 + 0.05 * rng.uniform();
  const double c = 0.55 + 0.05 * rng.uniform();
  const double d = 0.50 + 0.05 * rng.uniform();
  Matrix core(2, 8);
  core << a, -a, 0, 0, c, -c, c, -c,
          0, 0, b, -b, d, -d, -d, d;

  const double t = 1.0 + 0.1 * rng.uniform();
  auto with_extra = [&](double x, double y) {
    Matrix batch(2, 10);
    batch.leftCols(8) = core;
    batch.col(8) << x, y;
    batch.col(9) << -x, -y;
    return batch;
  };
  const Matrix batch_x_heavy = with_extra(t, 0.0);      // variance leans on x
  const Matrix batch_y_heavy = with_extra(0.0, t);      // ... and on y
  const Matrix batch_x_heavier = with_extra(t + 0.3, 0.0);

  // the construction must actually flip the eigenvalue ordering
  const double epsilon = 1e-8;
  const EigDecomp eig_a = sym_eig(centered_covariance(batch_x_heavy, epsilon));
  const EigDecomp eig_b = sym_eig(centered_covariance(batch_y_heavy, epsilon));
  const bool a_leads_x = std::abs(eig_a.eigenvectors(0, 0)) >
                         std::abs(eig_a.eigenvectors(1, 0));
  const bool b_leads_x = std::abs(eig_b.eigenvectors(0, 0)) >
                         std::abs(eig_b.eigenvectors(1, 0));
  if (a_leads_x == b_leads_x) {
    throw InvalidInputError(
        "axis_swap_demo: eigenvalue ordering did not flip");
  }

  AxisSwapReport report;
  report.flipping =
      axis_swap_compare(batch_x_heavy, batch_y_heavy, core, epsilon);
  report.control =
      axis_swap_compare(batch_x_heavy, batch_x_heavier, core, epsilon);
  return report;
}

double fim_condition(const Network& net, const Dataset& dataset,
                     std::size_t layer_index) {
  if (layer_index >= net.layers.size()) {
    throw ShapeError("fim_condition: layer index out of range");
  }
  const Layer& layer = net.layers[layer_index];
  if (layer.spec.kind != LayerKind::Linear) {
    throw InvalidInputError("fim_condition expects a linear layer");
  }
  if (layer_index + 2 != net.layers.size() ||
      net.layers.back().spec.kind != LayerKind::SoftmaxNll) {
    throw InvalidInputError(
        "fim_condition supports the linear layer feeding softmax_nll");
  }
  // Softmax gradients satisfy sum-over-classes = 0, so the full weight
  // Fisher is always rank deficient; restrict to the identifiable first
  // C - 1 class rows.
  const Index classes = layer.weight.rows();
  const Index free_rows = classes > 1 ? classes - 1 : 1;
  const Index params = free_rows * layer.weight.cols();
  if (params > 2000) {
    throw CapExceededError("fim_condition: " + std::to_string(params) +
                           " weights exceed the 2000-parameter cap");
  }

  const Matrix h = net_activations(net, dataset.features, layer_index);
  const Matrix logits = (layer.weight * h).colwise() + layer.bias;
  Matrix fisher = Matrix::Zero(params, params);
  Vector g(params);
  for (Index i = 0; i < dataset.size(); ++i) {
    const Vector col = logits.col(i);
    const Vector shifted = col.array() - col.maxCoeff();
    Vector probs = shifted.array().exp();
    probs /= probs.sum();
    Vector delta = probs;
    delta(dataset.labels[static_cast<std::size_t>(i)]) -= 1.0;
    // g = vec(delta[0:C-1] h_i^T), column-major over the weight block
    for (Index cidx = 0; cidx < layer.weight.cols(); ++cidx) {
      g.segment(cidx * free_rows, free_rows) = delta.head(free_rows) * h(cidx, i);
    }
    fisher.noalias() += g * g.transpose();
  }
  fisher /= static_cast<double>(dataset.size());
  // exact collinearity leaves eigenvalues at solver noise; call that singular
  const EigDecomp eig = sym_eig(fisher);
  const double largest = eig.eigenvalues(0);
  const double smallest = eig.eigenvalues(eig.eigenvalues.size() - 1);
  if (smallest <= 1e-12 * std::abs(largest)) {
    return std::numeric_limits<double>::infinity();
  }
  return largest / smallest;
}

}  // namespace whitenorm
