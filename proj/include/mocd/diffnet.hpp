#pragma once

// Dense MLPs with a recorded forward pass, exact reverse-mode gradients,
// soft-target cross-entropy and an adaptive-moment optimizer.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocd/mass_calculus.hpp"

namespace mocd {

enum class Activation { kRelu, kTanh };

struct NetSpec {
  std::vector<Eigen::Index> layer_dims;  // input, hidden..., output
  Activation activation = Activation::kRelu;

  std::size_t num_layers() const { return layer_dims.size() - 1; }

  void validate() const {
    if (layer_dims.size() < 2) throw std::domain_error("NetSpec needs input and output dims");
    for (auto d : layer_dims) {
      if (d <= 0) throw std::domain_error("NetSpec dims must be positive");
    }
  }
};

template <class Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // fan_in x fan_out; rows of X multiply from the left
  VectorX<Scalar> bias;
};

template <class Scalar>
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(NetSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
      layers_.push_back({MatrixX<Scalar>::Zero(spec_.layer_dims[l], spec_.layer_dims[l + 1]),
                         VectorX<Scalar>::Zero(spec_.layer_dims[l + 1])});
    }
  }

  const NetSpec& spec() const { return spec_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  Eigen::Index input_dim() const { return spec_.layer_dims.front(); }
  Eigen::Index output_dim() const { return spec_.layer_dims.back(); }

  Eigen::Index num_params() const {
    Eigen::Index total = 0;
    for (const auto& layer : layers_) total += layer.weight.size() + layer.bias.size();
    return total;
  }

  /// Writes all parameters into `out` starting at `offset`; layer by layer,
  /// weight (column-major) then bias. Returns the next offset.
  Eigen::Index flatten_into(VectorX<Scalar>& out, Eigen::Index offset) const {
    for (const auto& layer : layers_) {
      out.segment(offset, layer.weight.size()) = layer.weight.reshaped();
      offset += layer.weight.size();
      out.segment(offset, layer.bias.size()) = layer.bias;
      offset += layer.bias.size();
    }
    return offset;
  }

  Eigen::Index assign_from(const VectorX<Scalar>& in, Eigen::Index offset) {
    for (auto& layer : layers_) {
      layer.weight.reshaped() = in.segment(offset, layer.weight.size());
      offset += layer.weight.size();
      layer.bias = in.segment(offset, layer.bias.size());
      offset += layer.bias.size();
    }
    return offset;
  }

  VectorX<Scalar> flatten() const {
    VectorX<Scalar> out(num_params());
    flatten_into(out, 0);
    return out;
  }

  bool all_finite() const {
    for (const auto& layer : layers_) {
      if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    }
    return true;
  }

 private:
  NetSpec spec_;
  std::vector<DenseLayer<Scalar>> layers_;
};

/// Glorot-uniform weights, zero biases.
template <class Scalar, class Rng>
Mlp<Scalar> init_params(const NetSpec& spec, Rng& rng) {
  Mlp<Scalar> net(spec);
  for (auto& layer : net.layers()) {
    const auto fan = static_cast<Scalar>(layer.weight.rows() + layer.weight.cols());
    const Scalar bound = std::sqrt(Scalar(6) / fan);
    std::uniform_real_distribution<Scalar> dist(-bound, bound);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = dist(rng);
    }
  }
  return net;
}

/// Forward intermediates of one pass: the input to every layer and the
/// pre-activation it produced.
template <class Scalar>
struct MlpTape {
  std::vector<MatrixX<Scalar>> inputs;
  std::vector<MatrixX<Scalar>> pre;
  bool complete = false;
};

template <class Scalar>
struct MlpGrads {
  std::vector<DenseLayer<Scalar>> layers;
  MatrixX<Scalar> input;

  Eigen::Index flatten_into(VectorX<Scalar>& out, Eigen::Index offset) const {
    for (const auto& layer : layers) {
      out.segment(offset, layer.weight.size()) = layer.weight.reshaped();
      offset += layer.weight.size();
      out.segment(offset, layer.bias.size()) = layer.bias;
      offset += layer.bias.size();
    }
    return offset;
  }
};

namespace detail {

template <class Scalar>
void activate(MatrixX<Scalar>& m, Activation act) {
  if (act == Activation::kRelu) {
    m = m.cwiseMax(Scalar(0));
  } else {
    m = m.array().tanh().matrix();
  }
}

// d activation / d pre, evaluated from the pre-activation.
template <class Scalar>
MatrixX<Scalar> activation_slope(const MatrixX<Scalar>& pre, Activation act) {
  if (act == Activation::kRelu) {
    return (pre.array() > Scalar(0)).template cast<Scalar>().matrix();
  }
  return (Scalar(1) - pre.array().tanh().square()).matrix();
}

}  // namespace detail

/// Hidden layers apply the activation; the output layer is affine (logits).
template <class Scalar, class Derived>
MatrixX<Scalar> mlp_forward(const Mlp<Scalar>& net, const Eigen::MatrixBase<Derived>& x,
                            MlpTape<Scalar>* tape = nullptr) {
  if (x.cols() != net.input_dim()) {
    throw std::domain_error("mlp_forward: expected " + std::to_string(net.input_dim()) +
                            " input columns, got " + std::to_string(x.cols()));
  }
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->complete = false;
  }
  MatrixX<Scalar> h = x;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixX<Scalar> pre = h * layers[l].weight;
    pre.rowwise() += layers[l].bias.transpose();
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(pre);
    }
    h = std::move(pre);
    if (l + 1 < layers.size()) detail::activate(h, net.spec().activation);
  }
  if (tape) tape->complete = true;
  return h;
}

/// Reverse pass of a recorded forward: given dL/dlogits, returns dL/dparams
/// and dL/dinput.
template <class Scalar>
MlpGrads<Scalar> backward(const Mlp<Scalar>& net, const MlpTape<Scalar>& tape,
                          const MatrixX<Scalar>& grad_logits) {
  const auto& layers = net.layers();
  if (!tape.complete || tape.inputs.size() != layers.size()) {
    throw std::logic_error("backward: tape does not hold a completed forward pass");
  }
  if (grad_logits.rows() != tape.pre.back().rows() ||
      grad_logits.cols() != tape.pre.back().cols()) {
    throw std::domain_error("backward: upstream gradient has the wrong shape");
  }
  MlpGrads<Scalar> grads;
  grads.layers.resize(layers.size());
  MatrixX<Scalar> delta = grad_logits;  // dL/dpre of the current layer
  for (std::size_t l = layers.size(); l-- > 0;) {
    grads.layers[l].weight = tape.inputs[l].transpose() * delta;
    grads.layers[l].bias = delta.colwise().sum().transpose();
    MatrixX<Scalar> up = delta * layers[l].weight.transpose();
    if (l > 0) {
      delta = up.cwiseProduct(detail::activation_slope(tape.pre[l - 1], net.spec().activation));
    } else {
      grads.input = std::move(up);
    }
  }
  return grads;
}

template <class Derived>
MatrixX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Scalar mx = out.row(r).maxCoeff();
    const Scalar lse = mx + std::log((out.row(r).array() - mx).exp().sum());
    out.row(r).array() -= lse;
  }
  return out;
}

template <class Derived>
MatrixX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  return log_softmax(logits).array().exp().matrix();
}

template <class Scalar>
struct LossAndGrad {
  Scalar value{};
  MatrixX<Scalar> grad;  // d value / d logits
};

namespace detail {

template <class Scalar>
void check_stochastic(const MatrixX<Scalar>& targets, double tol) {
  for (Eigen::Index r = 0; r < targets.rows(); ++r) {
    if ((targets.row(r).array() < Scalar(0)).any() ||
        std::abs(targets.row(r).sum() - Scalar(1)) > tol) {
      throw std::domain_error("target row " + std::to_string(r) + " is not a distribution");
    }
  }
}

}  // namespace detail

/// Mean over rows of -sum_k t_k log softmax(z)_k, with its logit gradient
/// (softmax - t) / n.
template <class Scalar>
LossAndGrad<Scalar> soft_cross_entropy_grad(const MatrixX<Scalar>& logits,
                                            const MatrixX<Scalar>& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw std::domain_error("soft_cross_entropy: shape mismatch");
  }
  if (logits.rows() == 0) throw std::domain_error("soft_cross_entropy: empty batch");
  detail::check_stochastic(targets, 1e-9);
  const MatrixX<Scalar> logp = log_softmax(logits);
  const auto n = static_cast<Scalar>(logits.rows());
  LossAndGrad<Scalar> out;
  out.value = -(targets.array() * logp.array()).sum() / n;
  out.grad = (logp.array().exp() - targets.array()).matrix() / n;
  return out;
}

template <class Scalar>
Scalar soft_cross_entropy(const MatrixX<Scalar>& logits, const MatrixX<Scalar>& targets) {
  return soft_cross_entropy_grad(logits, targets).value;
}

template <class Scalar>
MatrixX<Scalar> one_hot(const std::vector<Eigen::Index>& classes, Eigen::Index num_classes) {
  MatrixX<Scalar> y = MatrixX<Scalar>::Zero(static_cast<Eigen::Index>(classes.size()), num_classes);
  for (std::size_t r = 0; r < classes.size(); ++r) {
    if (classes[r] < 0 || classes[r] >= num_classes) throw std::domain_error("class id out of range");
    y(static_cast<Eigen::Index>(r), classes[r]) = Scalar(1);
  }
  return y;
}

template <class Scalar>
struct AdamState {
  VectorX<Scalar> first_moment;
  VectorX<Scalar> second_moment;
  std::int64_t step = 0;
  Scalar learning_rate = Scalar(0.003);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);

  AdamState() = default;
  AdamState(Eigen::Index size, Scalar lr)
      : first_moment(VectorX<Scalar>::Zero(size)),
        second_moment(VectorX<Scalar>::Zero(size)),
        learning_rate(lr) {}
};

/// One bias-corrected adaptive-moment update of `params` in place.
template <class Scalar>
void adam_step(VectorX<Scalar>& params, const VectorX<Scalar>& grads, AdamState<Scalar>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw std::domain_error("adam_step: shape mismatch");
  }
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (Scalar(1) - state.beta2) * grads.cwiseAbs2();
  const auto t = static_cast<Scalar>(state.step);
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace mocd
