#pragma once

// Per-view semantic alignment (feature + structural branch), ambiguity
// perception branch, view fusion, the three training losses and inference.

#include <filesystem>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "mocd/checkpoint.hpp"
#include "mocd/diffnet.hpp"
#include "mocd/hsic.hpp"
#include "mocd/omix.hpp"

namespace mocd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Net = Mlp<double>;

struct ViewNets {
  Net feature;     // h: raw view features -> K logits
  Net structural;  // g: graph-aggregated view features -> K logits
  Net apn;         // ambiguity perception branch on mixed features
  double gamma_logit = 0.0;  // only used with a learnable blend
};

struct ModelOptions {
  std::vector<Index> hidden{256, 64};
  std::vector<Index> apn_hidden{128, 32};
  Activation activation = Activation::kRelu;
  double gamma = 0.7;
  bool learnable_gamma = false;
  bool use_structural = true;
  double alpha = 1.0;
  double beta = 1.0;
  BandwidthPolicy bandwidth;
};

struct ModelState {
  std::vector<ViewNets> views;
  Index num_classes = 0;
  ModelOptions options;

  Index num_views() const { return static_cast<Index>(views.size()); }
  /// Blend factor of view v; 1 when the structural branch is disabled.
  double gamma(Index v) const;
  Index num_params() const;
  Vector flatten() const;
  void assign(const Vector& params);
  bool all_finite() const;
};

ModelState make_model(const std::vector<Index>& view_dims, Index num_classes,
                      const ModelOptions& options, std::mt19937_64& rng);

/// e = gamma h(x) + (1 - gamma) g(agg_x).
struct MsanTapes {
  MlpTape<double> feature;
  MlpTape<double> structural;
  Matrix feature_out;
  Matrix structural_out;
};

Matrix msan_forward(const ViewNets& view, double gamma, bool use_structural, const Matrix& x,
                    const Matrix& agg_x, MsanTapes* tapes = nullptr);

/// Entrywise mean over views.
Matrix fuse(const std::vector<Matrix>& view_logits);

double closed_set_loss(const Matrix& logits, const std::vector<Index>& labels);

struct PerceptionTargets {
  std::vector<Index> class_i;
  std::vector<Index> class_j;
  Vector w_i;
  Vector w_j;
  Vector w_unk;
};

/// Mean over rows of w_i l(z, y_i) + w_j l(z, y_j) + w_unk l(z, uniform),
/// with l the cross-entropy.
LossAndGrad<double> perception_loss(const Matrix& logits, const PerceptionTargets& targets);

PerceptionTargets perception_targets(const OMixBatch<double>& batch, Index view);

/// One step's data: clean view features, their graph aggregation, labels
/// and (optionally) the mixed batch built from the same rows.
struct BatchInputs {
  std::vector<Matrix> features;
  std::vector<Matrix> aggregated;
  std::vector<Index> labels;
  const OMixBatch<double>* mix = nullptr;
};

struct LossBreakdown {
  double cc = 0.0;  // sum over views of closed-set losses
  double om = 0.0;  // sum over views of perception losses
  double cd = 0.0;  // sum over views of HSIC(Z, H_v)
  double total = 0.0;
};

struct Objective {
  LossBreakdown loss;
  Vector grad;  // aligned with ModelState::flatten()
};

/// sum_v CC_v + alpha OM_v + beta CD_v and its gradient. `threads > 1` runs
/// the per-view passes concurrently; results are identical either way.
Objective total_loss(const ModelState& model, const BatchInputs& batch, bool want_grad = true,
                     int threads = 1);

struct Prediction {
  Matrix probabilities;
  Vector scores;                 // max class probability per row
  std::vector<Index> predicted;  // argmax per row
};

Prediction predict(const ModelState& model, const std::vector<Matrix>& features,
                   const std::vector<Matrix>& aggregated);

Checkpoint to_checkpoint(const ModelState& model);
ModelState from_checkpoint(const Checkpoint& ckpt);

}  // namespace mocd
