#pragma once

// The training loop: per-batch view encodings, O-Mix generation, APN
// forward, fusion and one optimizer step on the total objective.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mocd/model.hpp"

namespace mocd {

struct TrainConfig {
  int epochs = 200;
  Index batch_size = 64;
  double learning_rate = 0.003;
  double tau = 1.0;
  double c = 0.5;
  double gamma = 0.7;
  double alpha = 1.0;
  double beta = 1.0;
  Index k_neighbors = 10;
  std::uint64_t seed = 0;
  std::vector<Index> hidden{256, 64};
  std::vector<Index> apn_hidden{128, 32};
  Activation activation = Activation::kRelu;
  int patience = 30;  // epochs without a validation gain; <= 0 disables
  bool learnable_gamma = false;
  bool use_structural = true;
  MixMode mix = MixMode::kOMix;
  BandwidthPolicy bandwidth;
  int threads = 1;

  void validate() const;
  ModelOptions model_options() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss_cc = 0.0;
  double loss_om = 0.0;
  double loss_cd = 0.0;
  double loss_total = 0.0;
  double val_acc = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;

  void write_csv(const std::filesystem::path& path) const;
};

/// Rows of one split with per-view graph aggregation over the split itself.
struct PreparedSplit {
  std::vector<Matrix> features;
  std::vector<Matrix> aggregated;
  std::vector<Index> labels;  // known-class index in [0, K); -1 for unknowns

  Index size() const { return static_cast<Index>(labels.size()); }
};

PreparedSplit prepare_split(const std::vector<Matrix>& features, std::vector<Index> labels,
                            Index k_neighbors, bool use_structural);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelState model;
  TrainHistory history;
};

/// One optimizer step on the total objective for a prepared batch.
LossBreakdown train_step(ModelState& model, AdamState<double>& optimizer, const BatchInputs& batch,
                         int threads = 1);

TrainResult train(const PreparedSplit& train_split, const PreparedSplit& val_split,
                  Index num_classes, const TrainConfig& config);

/// Fraction of rows whose argmax matches the label.
double evaluate_closed(const ModelState& model, const PreparedSplit& split);

}  // namespace mocd
