#include "mocd/model.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>
#include <string>

namespace mocd {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
  const double q = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(q / (1.0 - q));
}

NetSpec spec_for(Index in, const std::vector<Index>& hidden, Index out, Activation act) {
  NetSpec spec;
  spec.activation = act;
  spec.layer_dims.push_back(in);
  spec.layer_dims.insert(spec.layer_dims.end(), hidden.begin(), hidden.end());
  spec.layer_dims.push_back(out);
  return spec;
}

Index view_param_count(const ViewNets& v, bool learnable_gamma) {
  return v.feature.num_params() + v.structural.num_params() + v.apn.num_params() +
         (learnable_gamma ? 1 : 0);
}

// Runs fn(v) for every view, concurrently when threads > 1.
template <class Fn>
void for_each_view(Index views, int threads, Fn&& fn) {
  if (threads <= 1 || views <= 1) {
    for (Index v = 0; v < views; ++v) fn(v);
    return;
  }
  std::vector<std::future<void>> jobs;
  for (Index v = 0; v < views; ++v) jobs.push_back(std::async(std::launch::async, fn, v));
  for (auto& j : jobs) j.get();
}

}  // namespace

double ModelState::gamma(Index v) const {
  if (!options.use_structural) return 1.0;
  if (options.learnable_gamma) return sigmoid(views[v].gamma_logit);
  return options.gamma;
}

Index ModelState::num_params() const {
  Index total = 0;
  for (const auto& v : views) total += view_param_count(v, options.learnable_gamma);
  return total;
}

Vector ModelState::flatten() const {
  Vector out(num_params());
  Index offset = 0;
  for (const auto& v : views) {
    offset = v.feature.flatten_into(out, offset);
    offset = v.structural.flatten_into(out, offset);
    offset = v.apn.flatten_into(out, offset);
    if (options.learnable_gamma) out(offset++) = v.gamma_logit;
  }
  return out;
}

void ModelState::assign(const Vector& params) {
  if (params.size() != num_params()) throw std::domain_error("ModelState::assign: size mismatch");
  Index offset = 0;
  for (auto& v : views) {
    offset = v.feature.assign_from(params, offset);
    offset = v.structural.assign_from(params, offset);
    offset = v.apn.assign_from(params, offset);
    if (options.learnable_gamma) v.gamma_logit = params(offset++);
  }
}

bool ModelState::all_finite() const {
  for (const auto& v : views) {
    if (!v.feature.all_finite() || !v.structural.all_finite() || !v.apn.all_finite() ||
        !std::isfinite(v.gamma_logit)) {
      return false;
    }
  }
  return true;
}

ModelState make_model(const std::vector<Index>& view_dims, Index num_classes,
                      const ModelOptions& options, std::mt19937_64& rng) {
  if (view_dims.empty()) throw std::domain_error("model needs at least one view");
  if (num_classes < 2) throw std::domain_error("model needs at least two classes");
  if (options.alpha < 0 || options.beta < 0) throw std::domain_error("alpha, beta must be >= 0");
  if (!(options.gamma >= 0.0 && options.gamma <= 1.0)) {
    throw std::domain_error("gamma must lie in [0, 1]");
  }
  ModelState model;
  model.num_classes = num_classes;
  model.options = options;
  for (Index d : view_dims) {
    ViewNets v;
    v.feature = init_params<double>(spec_for(d, options.hidden, num_classes, options.activation), rng);
    v.structural =
        init_params<double>(spec_for(d, options.hidden, num_classes, options.activation), rng);
    v.apn = init_params<double>(spec_for(d, options.apn_hidden, num_classes, options.activation), rng);
    v.gamma_logit = logit(options.gamma);
    model.views.push_back(std::move(v));
  }
  return model;
}

Matrix msan_forward(const ViewNets& view, double gamma, bool use_structural, const Matrix& x,
                    const Matrix& agg_x, MsanTapes* tapes) {
  Matrix h = mlp_forward(view.feature, x, tapes ? &tapes->feature : nullptr);
  if (!use_structural) {
    if (tapes) tapes->feature_out = h;
    return h;
  }
  if (agg_x.rows() != x.rows()) throw std::domain_error("msan_forward: aggregated rows mismatch");
  Matrix g = mlp_forward(view.structural, agg_x, tapes ? &tapes->structural : nullptr);
  Matrix e = gamma * h + (1.0 - gamma) * g;
  if (tapes) {
    tapes->feature_out = std::move(h);
    tapes->structural_out = std::move(g);
  }
  return e;
}

Matrix fuse(const std::vector<Matrix>& view_logits) {
  if (view_logits.empty()) throw std::domain_error("fuse: no views");
  Matrix z = view_logits.front();
  for (std::size_t v = 1; v < view_logits.size(); ++v) {
    if (view_logits[v].rows() != z.rows() || view_logits[v].cols() != z.cols()) {
      throw std::domain_error("fuse: view shapes differ");
    }
    z += view_logits[v];
  }
  return z / static_cast<double>(view_logits.size());
}

double closed_set_loss(const Matrix& logits, const std::vector<Index>& labels) {
  return soft_cross_entropy<double>(logits, one_hot<double>(labels, logits.cols()));
}

LossAndGrad<double> perception_loss(const Matrix& logits, const PerceptionTargets& t) {
  const Index n = logits.rows();
  const Index k = logits.cols();
  if (static_cast<Index>(t.class_i.size()) != n || static_cast<Index>(t.class_j.size()) != n ||
      t.w_i.size() != n || t.w_j.size() != n || t.w_unk.size() != n) {
    throw std::domain_error("perception_loss: target rows do not match logits");
  }
  if (n == 0) throw std::domain_error("perception_loss: empty batch");
  const Matrix logp = log_softmax(logits);
  LossAndGrad<double> out;
  out.grad.resize(n, k);
  double sum = 0.0;
  for (Index r = 0; r < n; ++r) {
    const double wi = t.w_i(r), wj = t.w_j(r), wu = t.w_unk(r);
    if (wi < -1e-12 || wj < -1e-12 || wu < -1e-12 || std::abs(wi + wj + wu - 1.0) > 1e-9) {
      throw std::domain_error("perception_loss: coefficients of row " + std::to_string(r) +
                              " are not a convex combination");
    }
    if (t.class_i[r] < 0 || t.class_i[r] >= k || t.class_j[r] < 0 || t.class_j[r] >= k) {
      throw std::domain_error("perception_loss: class id out of range");
    }
    sum += -wi * logp(r, t.class_i[r]) - wj * logp(r, t.class_j[r]) - wu * logp.row(r).mean();
    out.grad.row(r) = (wi + wj + wu) * logp.row(r).array().exp();
    out.grad(r, t.class_i[r]) -= wi;
    out.grad(r, t.class_j[r]) -= wj;
    out.grad.row(r).array() -= wu / static_cast<double>(k);
  }
  out.value = sum / static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

PerceptionTargets perception_targets(const OMixBatch<double>& batch, Index view) {
  const auto& v = batch.views.at(static_cast<std::size_t>(view));
  return {batch.class_i, batch.class_j, v.coeff_i, v.coeff_j, v.coeff_unk};
}

Objective total_loss(const ModelState& model, const BatchInputs& batch, bool want_grad,
                     int threads) {
  const Index views = model.num_views();
  if (static_cast<Index>(batch.features.size()) != views) {
    throw std::domain_error("total_loss: batch view count does not match the model");
  }
  if (model.options.use_structural && static_cast<Index>(batch.aggregated.size()) != views) {
    throw std::domain_error("total_loss: missing aggregated features");
  }
  const Index n = static_cast<Index>(batch.labels.size());
  const double alpha = model.options.alpha;
  const double beta = model.options.beta;
  const bool use_apn = batch.mix != nullptr && (alpha > 0.0 || beta > 0.0);
  const bool use_hsic = use_apn && beta > 0.0;
  if (use_apn && static_cast<Index>(batch.mix->views.size()) != views) {
    throw std::domain_error("total_loss: mixed batch view count does not match the model");
  }
  const Matrix targets = one_hot<double>(batch.labels, model.num_classes);
  static const Matrix kNoAgg;

  struct ViewPass {
    MsanTapes msan;
    Matrix e;
    LossAndGrad<double> cc;
    MlpTape<double> apn_tape;
    Matrix apn_out;
    LossAndGrad<double> om;
    Matrix grad_h;  // dCD/dH_v
    Vector grad;    // this view's slice of the flat gradient
  };
  std::vector<ViewPass> pass(static_cast<std::size_t>(views));

  for_each_view(views, threads, [&](Index v) {
    auto& p = pass[v];
    const auto& nets = model.views[v];
    if (batch.features[v].rows() != n) throw std::domain_error("total_loss: row count mismatch");
    const Matrix& agg = model.options.use_structural ? batch.aggregated[v] : kNoAgg;
    p.e = msan_forward(nets, model.gamma(v), model.options.use_structural, batch.features[v], agg,
                       &p.msan);
    p.cc = soft_cross_entropy_grad<double>(p.e, targets);
    if (use_apn) {
      p.apn_out = mlp_forward(nets.apn, batch.mix->views[v].mixed_features, &p.apn_tape);
      p.om = perception_loss(p.apn_out, perception_targets(*batch.mix, v));
    }
  });

  Objective out;
  Matrix grad_z;
  std::vector<double> cd(static_cast<std::size_t>(views), 0.0);
  if (use_hsic) {
    std::vector<Matrix> e_list;
    for (const auto& p : pass) e_list.push_back(p.e);
    const Matrix z = fuse(e_list);
    grad_z = Matrix::Zero(z.rows(), z.cols());
    for (Index v = 0; v < views; ++v) {
      auto r = hsic_grad<double>(z, pass[v].apn_out, model.options.bandwidth);
      cd[v] = r.value;
      grad_z += beta * r.grad_z;
      pass[v].grad_h = std::move(r.grad_h);
    }
  }

  for (Index v = 0; v < views; ++v) {
    out.loss.cc += pass[v].cc.value;
    if (use_apn) out.loss.om += pass[v].om.value;
    out.loss.cd += cd[v];
  }
  out.loss.total = out.loss.cc + alpha * out.loss.om + beta * out.loss.cd;
  if (!want_grad) return out;

  for_each_view(views, threads, [&](Index v) {
    auto& p = pass[v];
    const auto& nets = model.views[v];
    const double gamma = model.gamma(v);
    p.grad = Vector::Zero(view_param_count(nets, model.options.learnable_gamma));

    Matrix grad_e = p.cc.grad;
    if (use_hsic) grad_e += grad_z / static_cast<double>(views);

    Index offset = 0;
    if (model.options.use_structural) {
      const auto gh = backward(nets.feature, p.msan.feature, Matrix(gamma * grad_e));
      offset = gh.flatten_into(p.grad, offset);
      const auto gg = backward(nets.structural, p.msan.structural, Matrix((1.0 - gamma) * grad_e));
      offset = gg.flatten_into(p.grad, offset);
    } else {
      const auto gh = backward(nets.feature, p.msan.feature, grad_e);
      offset = gh.flatten_into(p.grad, offset);
      offset += nets.structural.num_params();
    }
    if (use_apn) {
      Matrix grad_apn = alpha * p.om.grad;
      if (use_hsic) grad_apn += beta * p.grad_h;
      const auto ga = backward(nets.apn, p.apn_tape, grad_apn);
      offset = ga.flatten_into(p.grad, offset);
    } else {
      offset += nets.apn.num_params();
    }
    if (model.options.learnable_gamma) {
      const double d_gamma =
          model.options.use_structural
              ? grad_e.cwiseProduct(p.msan.feature_out - p.msan.structural_out).sum()
              : 0.0;
      p.grad(offset++) = d_gamma * gamma * (1.0 - gamma);
    }
  });

  out.grad.resize(model.num_params());
  Index offset = 0;
  for (auto& p : pass) {
    out.grad.segment(offset, p.grad.size()) = p.grad;
    offset += p.grad.size();
  }
  return out;
}

Prediction predict(const ModelState& model, const std::vector<Matrix>& features,
                   const std::vector<Matrix>& aggregated) {
  if (!model.all_finite()) throw std::logic_error("predict: model parameters are not finite");
  if (static_cast<Index>(features.size()) != model.num_views()) {
    throw std::domain_error("predict: view count does not match the model");
  }
  static const Matrix kNoAgg;
  std::vector<Matrix> e;
  for (Index v = 0; v < model.num_views(); ++v) {
    const Matrix& agg = model.options.use_structural ? aggregated.at(v) : kNoAgg;
    e.push_back(msan_forward(model.views[v], model.gamma(v), model.options.use_structural,
                             features[v], agg));
  }
  Prediction out;
  out.probabilities = softmax(fuse(e));
  out.scores.resize(out.probabilities.rows());
  out.predicted.resize(static_cast<std::size_t>(out.probabilities.rows()));
  for (Index r = 0; r < out.probabilities.rows(); ++r) {
    Index arg = 0;
    out.scores(r) = out.probabilities.row(r).maxCoeff(&arg);
    out.predicted[r] = arg;
  }
  return out;
}

namespace {

void put_net(Checkpoint& ckpt, const std::string& prefix, const Net& net) {
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    ckpt.arrays.push_back({prefix + "/W" + std::to_string(l), net.layers()[l].weight});
    ckpt.arrays.push_back({prefix + "/b" + std::to_string(l), Matrix(net.layers()[l].bias)});
  }
}

Net get_net(const Checkpoint& ckpt, const std::string& prefix, Activation act) {
  NetSpec spec;
  spec.activation = act;
  std::vector<std::pair<Matrix, Vector>> layers;
  for (std::size_t l = 0;; ++l) {
    const std::string w = prefix + "/W" + std::to_string(l);
    if (!ckpt.has_array(w)) break;
    const Matrix& weight = ckpt.array(w);
    const Matrix& bias = ckpt.array(prefix + "/b" + std::to_string(l));
    if (bias.cols() != 1 || bias.rows() != weight.cols()) {
      throw std::runtime_error("checkpoint: inconsistent bias shape in " + prefix);
    }
    if (l == 0) spec.layer_dims.push_back(weight.rows());
    if (weight.rows() != spec.layer_dims.back()) {
      throw std::runtime_error("checkpoint: inconsistent layer chain in " + prefix);
    }
    spec.layer_dims.push_back(weight.cols());
    layers.emplace_back(weight, bias.col(0));
  }
  if (layers.empty()) throw std::runtime_error("checkpoint: no layers for " + prefix);
  Net net(spec);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    net.layers()[l].weight = layers[l].first;
    net.layers()[l].bias = layers[l].second;
  }
  return net;
}

}  // namespace

Checkpoint to_checkpoint(const ModelState& model) {
  Checkpoint ckpt;
  const auto& o = model.options;
  ckpt.scalars = {{"views", static_cast<double>(model.num_views())},
                  {"classes", static_cast<double>(model.num_classes)},
                  {"alpha", o.alpha},
                  {"beta", o.beta},
                  {"gamma", o.gamma},
                  {"learnable_gamma", o.learnable_gamma ? 1.0 : 0.0},
                  {"use_structural", o.use_structural ? 1.0 : 0.0},
                  {"activation", o.activation == Activation::kRelu ? 0.0 : 1.0},
                  {"bandwidth_median", o.bandwidth.median ? 1.0 : 0.0},
                  {"bandwidth_sigma", o.bandwidth.fixed_sigma}};
  for (Index v = 0; v < model.num_views(); ++v) {
    const std::string prefix = "view" + std::to_string(v);
    put_net(ckpt, prefix + "/feature", model.views[v].feature);
    put_net(ckpt, prefix + "/structural", model.views[v].structural);
    put_net(ckpt, prefix + "/apn", model.views[v].apn);
    ckpt.arrays.push_back({prefix + "/gamma_logit", Matrix::Constant(1, 1, model.views[v].gamma_logit)});
  }
  return ckpt;
}

ModelState from_checkpoint(const Checkpoint& ckpt) {
  ModelState model;
  auto& o = model.options;
  o.alpha = ckpt.scalar("alpha");
  o.beta = ckpt.scalar("beta");
  o.gamma = ckpt.scalar("gamma");
  o.learnable_gamma = ckpt.scalar("learnable_gamma") != 0.0;
  o.use_structural = ckpt.scalar("use_structural") != 0.0;
  o.activation = ckpt.scalar("activation") == 0.0 ? Activation::kRelu : Activation::kTanh;
  o.bandwidth.median = ckpt.scalar("bandwidth_median") != 0.0;
  o.bandwidth.fixed_sigma = ckpt.scalar("bandwidth_sigma");
  model.num_classes = static_cast<Index>(ckpt.scalar("classes"));
  const auto views = static_cast<Index>(ckpt.scalar("views"));
  for (Index v = 0; v < views; ++v) {
    const std::string prefix = "view" + std::to_string(v);
    ViewNets nets;
    nets.feature = get_net(ckpt, prefix + "/feature", o.activation);
    nets.structural = get_net(ckpt, prefix + "/structural", o.activation);
    nets.apn = get_net(ckpt, prefix + "/apn", o.activation);
    nets.gamma_logit = ckpt.array(prefix + "/gamma_logit")(0, 0);
    model.views.push_back(std::move(nets));
  }
  if (!model.views.empty()) {
    o.hidden.assign(model.views[0].feature.spec().layer_dims.begin() + 1,
                    model.views[0].feature.spec().layer_dims.end() - 1);
    o.apn_hidden.assign(model.views[0].apn.spec().layer_dims.begin() + 1,
                        model.views[0].apn.spec().layer_dims.end() - 1);
  }
  return model;
}

}  // namespace mocd
