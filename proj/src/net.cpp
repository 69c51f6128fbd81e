#include "whitenorm/net.hpp"

#include <cmath>
#include <string>

#include "whitenorm/rng.hpp"

namespace whitenorm {

namespace {

struct SoftmaxOut {
  Matrix probs;
  double loss = 0.0;
  Index correct = 0;
};

SoftmaxOut softmax_nll(const Matrix& logits, const std::vector<int>& labels) {
  const Index m = logits.cols();
  const Index classes = logits.rows();
  SoftmaxOut out;
  out.probs.resize(classes, m);
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= classes) {
      throw InvalidInputError("label " + std::to_string(label) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
    const Vector col = logits.col(i);
    const double peak = col.maxCoeff();
    const Vector shifted = col.array() - peak;
    const double lse = std::log(shifted.array().exp().sum());
    const Vector logp = shifted.array() - lse;
    out.probs.col(i) = logp.array().exp();
    total -= logp(label);
    Index argmax = 0;
    for (Index c = 1; c < classes; ++c) {
      if (col(c) > col(argmax)) argmax = c;
    }
    if (argmax == label) ++out.correct;
  }
  out.loss = total / static_cast<double>(m);
  return out;
}

void validate_spec(const NetworkSpec& spec) {
  if (spec.input_dim < 1) throw ShapeError("network input_dim must be >= 1");
  if (spec.layers.empty()) throw ShapeError("network needs at least one layer");
  Index dim = spec.input_dim;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    switch (layer.kind) {
      case LayerKind::Linear:
        if (layer.in < 1 || layer.out < 1) {
          throw ShapeError("linear layer has a zero-size dimension");
        }
        if (layer.in != dim) {
          throw ShapeError("linear layer " + std::to_string(i) + " expects " +
                           std::to_string(layer.in) + " inputs but receives " +
                           std::to_string(dim));
        }
        dim = layer.out;
        break;
      case LayerKind::SoftmaxNll:
        if (i + 1 != spec.layers.size()) {
          throw ShapeError("softmax_nll must be the final layer");
        }
        break;
      default:
        break;  // shape-preserving
    }
  }
  if (spec.layers.back().kind != LayerKind::SoftmaxNll) {
    throw ShapeError("network must end in softmax_nll");
  }
}

}  // namespace

LayerSpec LayerSpec::linear(Index in, Index out) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in = in;
  s.out = out;
  return s;
}
LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}
LayerSpec LayerSpec::trelu() {
  LayerSpec s;
  s.kind = LayerKind::Trelu;
  return s;
}
LayerSpec LayerSpec::batch_norm(bool affine) {
  LayerSpec s;
  s.kind = LayerKind::Norm;
  s.norm.mode = NormMode::Bn;
  s.norm.group_size = 1;
  s.norm.affine = affine;
  return s;
}
LayerSpec LayerSpec::dbn(NormMode mode, Index group_size, bool affine) {
  LayerSpec s;
  s.kind = LayerKind::Norm;
  s.norm.mode = mode;
  s.norm.group_size = group_size;
  s.norm.affine = affine;
  return s;
}
LayerSpec LayerSpec::softmax_nll() {
  LayerSpec s;
  s.kind = LayerKind::SoftmaxNll;
  return s;
}

Network init_params(const NetworkSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  Network net;
  net.spec = spec;
  net.input_dim = spec.input_dim;

  Index dim = spec.input_dim;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Layer layer;
    layer.spec = spec.layers[i];
    layer.dim_in = dim;
    switch (layer.spec.kind) {
      case LayerKind::Linear: {
        Rng rng = Rng::substream(seed, "init/layer" + std::to_string(i));
        const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
        layer.weight.resize(layer.spec.out, layer.spec.in);
        for (Index c = 0; c < layer.weight.cols(); ++c) {
          for (Index r = 0; r < layer.weight.rows(); ++r) {
            layer.weight(r, c) = stddev * rng.normal();
          }
        }
        layer.bias = Vector::Zero(layer.spec.out);
        layer.vweight = Matrix::Zero(layer.weight.rows(), layer.weight.cols());
        layer.vbias = Vector::Zero(layer.bias.size());
        dim = layer.spec.out;
        break;
      }
      case LayerKind::Trelu:
        layer.thresholds = Vector::Zero(dim);
        layer.vthresholds = Vector::Zero(dim);
        break;
      case LayerKind::Norm:
        layer.norm.emplace(dim, layer.spec.norm);
        if (layer.norm->opts.affine) {
          layer.vgamma = Vector::Zero(dim);
          layer.vbeta = Vector::Zero(dim);
        }
        break;
      default:
        break;
    }
    layer.dim_out = dim;
    net.layers.push_back(std::move(layer));
  }
  net.classes = dim;
  return net;
}

ForwardResult net_forward(Network& net, const Matrix& x,
                          const std::vector<int>& labels, bool training) {
  if (!training) return net_infer(net, x, labels);
  if (x.rows() != net.input_dim) {
    throw ShapeError("input rows do not match network input_dim");
  }
  if (static_cast<Index>(labels.size()) != x.cols()) {
    throw ShapeError("label count does not match batch size");
  }
  Matrix h = x;
  ForwardResult result;
  for (Layer& layer : net.layers) {
    switch (layer.spec.kind) {
      case LayerKind::Linear:
        layer.input = h;
        h = (layer.weight * h).colwise() + layer.bias;
        break;
      case LayerKind::Relu:
        layer.input = h;
        h = h.cwiseMax(0.0);
        break;
      case LayerKind::Trelu:
        layer.input = h;
        h = trelu_forward(h, layer.thresholds);
        break;
      case LayerKind::Norm:
        layer.norm->training = true;
        h = norm_forward(h, *layer.norm, layer.norm_cache);
        break;
      case LayerKind::SoftmaxNll: {
        SoftmaxOut out = softmax_nll(h, labels);
        layer.probs = std::move(out.probs);
        result.loss = out.loss;
        result.correct = out.correct;
        break;
      }
    }
  }
  net.labels = labels;
  net.caches_valid = true;
  return result;
}

ForwardResult net_infer(const Network& net, const Matrix& x,
                        const std::vector<int>& labels) {
  if (x.rows() != net.input_dim) {
    throw ShapeError("input rows do not match network input_dim");
  }
  if (static_cast<Index>(labels.size()) != x.cols()) {
    throw ShapeError("label count does not match batch size");
  }
  Matrix h = x;
  ForwardResult result;
  for (const Layer& layer : net.layers) {
    switch (layer.spec.kind) {
      case LayerKind::Linear:
        h = (layer.weight * h).colwise() + layer.bias;
        break;
      case LayerKind::Relu:
        h = h.cwiseMax(0.0);
        break;
      case LayerKind::Trelu:
        h = trelu_forward(h, layer.thresholds);
        break;
      case LayerKind::Norm:
        h = dbn_infer(h, *layer.norm);
        break;
      case LayerKind::SoftmaxNll: {
        SoftmaxOut out = softmax_nll(h, labels);
        result.loss = out.loss;
        result.correct = out.correct;
        break;
      }
    }
  }
  return result;
}

Matrix net_activations(const Network& net, const Matrix& x,
                       std::size_t layer_index) {
  if (layer_index > net.layers.size()) {
    throw ShapeError("layer index out of range");
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layer_index; ++i) {
    const Layer& layer = net.layers[i];
    switch (layer.spec.kind) {
      case LayerKind::Linear:
        h = (layer.weight * h).colwise() + layer.bias;
        break;
      case LayerKind::Relu:
        h = h.cwiseMax(0.0);
        break;
      case LayerKind::Trelu:
        h = trelu_forward(h, layer.thresholds);
        break;
      case LayerKind::Norm:
        h = dbn_infer(h, *layer.norm);
        break;
      case LayerKind::SoftmaxNll:
        throw ShapeError("net_activations cannot cross the loss layer");
    }
  }
  return h;
}

Matrix net_backward(Network& net) {
  if (!net.caches_valid) {
    throw InvalidInputError("net_backward called with stale caches");
  }
  const Layer& last = net.layers.back();
  const Index m = last.probs.cols();
  Matrix g = last.probs;
  for (Index i = 0; i < m; ++i) {
    g(net.labels[static_cast<std::size_t>(i)], i) -= 1.0;
  }
  g /= static_cast<double>(m);

  for (std::size_t i = net.layers.size(); i-- > 0;) {
    Layer& layer = net.layers[i];
    switch (layer.spec.kind) {
      case LayerKind::Linear:
        layer.dweight = g * layer.input.transpose();
        layer.dbias = g.rowwise().sum();
        g = layer.weight.transpose() * g;
        break;
      case LayerKind::Relu:
        g = (layer.input.array() > 0.0).select(g, 0.0);
        break;
      case LayerKind::Trelu: {
        TreluBackward tb = trelu_backward(g, layer.input, layer.thresholds);
        layer.dthresholds = std::move(tb.dthresholds);
        g = std::move(tb.dx);
        break;
      }
      case LayerKind::Norm:
        g = dbn_backward(g, layer.norm_cache, *layer.norm, &layer.norm_grads);
        break;
      case LayerKind::SoftmaxNll:
        break;  // handled above
    }
  }
  net.caches_valid = false;
  return g;
}

void for_each_param(Network& net, const ParamVisitor& visit) {
  auto flat = [&](auto& param, auto& grad, auto& velocity) {
    visit(Eigen::Map<Vector>(param.data(), param.size()),
          Eigen::Map<const Vector>(grad.data(), grad.size()),
          Eigen::Map<Vector>(velocity.data(), velocity.size()));
  };
  for (Layer& layer : net.layers) {
    switch (layer.spec.kind) {
      case LayerKind::Linear:
        if (layer.dweight.size() != layer.weight.size()) {
          layer.dweight = Matrix::Zero(layer.weight.rows(),
                                       layer.weight.cols());
          layer.dbias = Vector::Zero(layer.bias.size());
        }
        flat(layer.weight, layer.dweight, layer.vweight);
        flat(layer.bias, layer.dbias, layer.vbias);
        break;
      case LayerKind::Trelu:
        if (layer.dthresholds.size() != layer.thresholds.size()) {
          layer.dthresholds = Vector::Zero(layer.thresholds.size());
        }
        flat(layer.thresholds, layer.dthresholds, layer.vthresholds);
        break;
      case LayerKind::Norm:
        if (layer.norm->opts.affine) {
          if (layer.norm_grads.dgamma.size() != layer.norm->gamma.size()) {
            layer.norm_grads.dgamma = Vector::Zero(layer.norm->gamma.size());
            layer.norm_grads.dbeta = Vector::Zero(layer.norm->beta.size());
          }
          flat(layer.norm->gamma, layer.norm_grads.dgamma, layer.vgamma);
          flat(layer.norm->beta, layer.norm_grads.dbeta, layer.vbeta);
        }
        break;
      default:
        break;
    }
  }
}

Index param_count(const Network& net) {
  Index count = 0;
  for_each_param(const_cast<Network&>(net),
                 [&](Eigen::Map<Vector> p, Eigen::Map<const Vector>,
                     Eigen::Map<Vector>) { count += p.size(); });
  return count;
}

Vector collect_params(const Network& net) {
  Vector out(param_count(net));
  Index at = 0;
  for_each_param(const_cast<Network&>(net),
                 [&](Eigen::Map<Vector> p, Eigen::Map<const Vector>,
                     Eigen::Map<Vector>) {
                   out.segment(at, p.size()) = p;
                   at += p.size();
                 });
  return out;
}

void assign_params(Network& net, const Vector& params) {
  if (params.size() != param_count(net)) {
    throw ShapeError("parameter vector size mismatch");
  }
  Index at = 0;
  for_each_param(net, [&](Eigen::Map<Vector> p, Eigen::Map<const Vector>,
                          Eigen::Map<Vector>) {
    p = params.segment(at, p.size());
    at += p.size();
  });
}

Vector collect_grads(const Network& net) {
  Vector out(param_count(net));
  Index at = 0;
  for_each_param(const_cast<Network&>(net),
                 [&](Eigen::Map<Vector>, Eigen::Map<const Vector> g,
                     Eigen::Map<Vector>) {
                   out.segment(at, g.size()) = g;
                   at += g.size();
                 });
  return out;
}

}  // namespace whitenorm
