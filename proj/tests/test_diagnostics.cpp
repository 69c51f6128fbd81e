#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "whitenorm/diagnostics.hpp"
#include "whitenorm/rng.hpp"

using namespace whitenorm;

namespace {

Matrix random_matrix(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
  }
  return m;
}

bool is_identity_perm(const std::vector<int>& perm) {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] != static_cast<int>(i)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("gradcheck accepts an exact gradient") {
  Rng rng(3);
  const Matrix x = random_matrix(3, 5, rng);
  const auto f = [](const Matrix& m) { return m.sum(); };
  CHECK(gradcheck(f, x, Matrix::Ones(3, 5), 1e-4) < 1e-10);
}

TEST_CASE("gradcheck validates the squared-norm loss through whitening") {
  // generous epsilon keeps this loss's gradient well above the noise floor:
  // at epsilon -> 0 whitening makes ||xhat||^2 nearly constant
  const double epsilon = 0.25;
  const Matrix x = gapped_batch(4, 16, 4, epsilon, 71);
  DbnOptions opts;
  opts.group_size = 4;
  opts.epsilon = epsilon;
  const auto loss = [&](const Matrix& probe) {
    DbnState state(4, opts);
    ForwardCache cache;
    const Matrix y = dbn_forward(probe, state, cache);
    return 0.5 * y.squaredNorm();
  };
  DbnState state(4, opts);
  ForwardCache cache;
  const Matrix y = dbn_forward(x, state, cache);
  const Matrix analytic = dbn_backward(y, cache, state);
  CHECK(gradcheck(loss, x, analytic, 1e-5) < 1e-5);
}

TEST_CASE("gradcheck flags a doubled gradient entry on every layer kind") {
  struct Case {
    NormMode mode;
  };
  for (const NormMode mode : {NormMode::Zca, NormMode::Pca, NormMode::Bn}) {
    const Matrix x = gapped_batch(4, 12, 2, 1e-3, 83);
    DbnOptions opts;
    opts.mode = mode;
    opts.group_size = 2;
    opts.epsilon = 1e-3;
    Rng rng(5);
    const Matrix w = random_matrix(4, 12, rng);
    const auto loss = [&](const Matrix& probe) {
      DbnState state(4, opts);
      ForwardCache cache;
      return (w.array() * norm_forward(probe, state, cache).array()).sum();
    };
    DbnState state(4, opts);
    ForwardCache cache;
    norm_forward(x, state, cache);
    Matrix analytic = dbn_backward(w, cache, state);
    CHECK(gradcheck(loss, x, analytic, 1e-5) < 1e-5);

    Index r = 0, c = 0;
    analytic.cwiseAbs().maxCoeff(&r, &c);
    analytic(r, c) *= 2.0;
    CHECK(gradcheck(loss, x, analytic, 1e-5) > 0.1);
  }
  {
    // relu / trelu
    Rng rng(7);
    const Matrix x = random_matrix(3, 8, rng);
    const Matrix w = random_matrix(3, 8, rng);
    const Vector t = Vector::Zero(3);
    const auto loss = [&](const Matrix& probe) {
      return (w.array() * trelu_forward(probe, t).array()).sum();
    };
    Matrix analytic = trelu_backward(w, x, t).dx;
    CHECK(gradcheck(loss, x, analytic, 1e-6) < 1e-8);
    Index r = 0, c = 0;
    analytic.cwiseAbs().maxCoeff(&r, &c);
    analytic(r, c) *= 2.0;
    CHECK(gradcheck(loss, x, analytic, 1e-6) > 0.1);
  }
}

TEST_CASE("gradcheck rejects non-finite probes") {
  const Matrix x = Matrix::Ones(2, 2);
  const auto f = [](const Matrix& m) {
    return std::log(m(0, 0) - 10.0);  // NaN at the probe point
  };
  CHECK_THROWS_AS(gradcheck(f, x, Matrix::Ones(2, 2), 1e-6),
                  InvalidInputError);
}

TEST_CASE("whitening gradcheck grid cells stay under 1e-5") {
  CHECK(whitening_gradcheck_cell(8, 64, 4, NormMode::Zca, 1e-5, 1e-5, 2) <
        1e-5);
  CHECK(whitening_gradcheck_cell(2, 16, 1, NormMode::Pca, 1e-5, 1e-5, 3) <
        1e-5);
}

TEST_CASE("whiteness report on whitened and standardized data") {
  const Dataset data = gen_correlated_gaussians(2, 20000, 1, 0.99, 0.0, 41);
  const Matrix& x = data.features;
  const double epsilon = 1e-5;
  const Vector mean = x.rowwise().mean();
  Matrix centered = x;
  centered.colwise() -= mean;
  Matrix sigma =
      (centered * centered.transpose()) / static_cast<double>(x.cols());
  sigma.diagonal().array() += epsilon;

  DbnOptions zca;
  zca.group_size = 2;
  zca.epsilon = epsilon;
  DbnState zca_state(2, zca);
  ForwardCache cache;
  const Matrix whitened = dbn_forward(x, zca_state, cache);
  const WhitenessReport zca_report =
      whiteness_report(whitened, epsilon, sigma);
  CHECK(zca_report.max_identity_deviation < 1e-8);
  CHECK(zca_report.condition_after <=
        1.0 + 10.0 * epsilon * zca_report.condition_before);
  CHECK(zca_report.condition_after <= 1.01);
  CHECK(zca_report.condition_before > 150.0);

  DbnOptions bn;
  bn.mode = NormMode::Bn;
  bn.group_size = 1;
  bn.epsilon = epsilon;
  DbnState bn_state(2, bn);
  const Matrix standardized = bn_forward(x, bn_state, cache);
  const WhitenessReport bn_report =
      whiteness_report(standardized, epsilon, sigma);
  // standardization leaves the correlation: kappa ~ (1+rho)/(1-rho) = 199
  CHECK(bn_report.condition_after >= 150.0);
  CHECK(bn_report.condition_after <= 260.0);
  CHECK(std::abs(bn_report.correlation(0, 1)) > 0.98);
}

TEST_CASE("axis swap demo detects the PCA permutation flip") {
  const AxisSwapReport report = axis_swap_demo(1);
  REQUIRE(report.flipping.pca_permutation.size() == 2);
  CHECK(report.flipping.pca_permutation == std::vector<int>({1, 0}));
  CHECK(is_identity_perm(report.flipping.zca_permutation));
  CHECK(report.flipping.zca_displacement <
        0.5 * report.flipping.pca_displacement);
  CHECK(is_identity_perm(report.control.pca_permutation));
  CHECK(is_identity_perm(report.control.zca_permutation));
}

TEST_CASE("axis swap demo is deterministic per seed") {
  const AxisSwapReport a = axis_swap_demo(9);
  const AxisSwapReport b = axis_swap_demo(9);
  CHECK(a.flipping.pca_displacement == b.flipping.pca_displacement);
  CHECK(a.flipping.zca_displacement == b.flipping.zca_displacement);
  CHECK(a.control.pca_displacement == b.control.pca_displacement);
}

TEST_CASE("identical batches compare as identity with zero displacement") {
  Rng rng(17);
  Matrix batch = random_matrix(2, 12, rng);
  batch.row(0) *= 1.7;  // distinct eigenvalues
  const PairReport report = axis_swap_compare(batch, batch, batch, 1e-8);
  CHECK(is_identity_perm(report.pca_permutation));
  CHECK(is_identity_perm(report.zca_permutation));
  CHECK(report.pca_displacement == 0.0);
  CHECK(report.zca_displacement == 0.0);
}

TEST_CASE("fim condition is infinite for duplicated features") {
  Dataset data = gen_correlated_gaussians(2, 64, 2, 0.0, 3.0, 51);
  Dataset duplicated;
  duplicated.classes = 2;
  duplicated.labels = data.labels;
  duplicated.features.resize(3, data.size());
  duplicated.features.topRows(2) = data.features;
  duplicated.features.row(2) = data.features.row(1);  // exact collinearity
  NetworkSpec spec;
  spec.input_dim = 3;
  spec.layers.push_back(LayerSpec::linear(3, 2));
  spec.layers.push_back(LayerSpec::softmax_nll());
  const Network net = init_params(spec, 53);
  CHECK(std::isinf(fim_condition(net, duplicated, 0)));
}

TEST_CASE("whitening the inputs improves the Fisher conditioning") {
  const Dataset raw = gen_correlated_gaussians(2, 512, 2, 0.95, 0.5, 55);
  Dataset whitened = raw;
  DbnOptions opts;
  opts.group_size = 2;
  opts.epsilon = 1e-5;
  DbnState state(2, opts);
  ForwardCache cache;
  whitened.features = dbn_forward(raw.features, state, cache);

  NetworkSpec spec;
  spec.input_dim = 2;
  spec.layers.push_back(LayerSpec::linear(2, 2));
  spec.layers.push_back(LayerSpec::softmax_nll());
  Network net = init_params(spec, 57);
  // at zero weights the per-example delta is +-1/2, so the Fisher is a
  // quarter of the input second moment and the comparison isolates the data
  net.layers[0].weight.setZero();
  const double kappa_raw = fim_condition(net, raw, 0);
  const double kappa_white = fim_condition(net, whitened, 0);
  CHECK(kappa_white < 1.05);
  CHECK(kappa_white < 0.2 * kappa_raw);
}

TEST_CASE("fim condition enforces the parameter cap") {
  const Dataset data = gen_correlated_gaussians(50, 10, 2, 0.0, 1.0, 61);
  NetworkSpec spec;
  spec.input_dim = 50;
  spec.layers.push_back(LayerSpec::linear(50, 50));
  spec.layers.push_back(LayerSpec::softmax_nll());
  const Network net = init_params(spec, 63);
  CHECK_THROWS_AS(fim_condition(net, data, 0), CapExceededError);
}
