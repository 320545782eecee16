#include "mocd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "mocd/neighbor_graph.hpp"
#include "mocd/numfmt.hpp"

namespace mocd {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::domain_error("epochs must be >= 1");
  if (batch_size < 2) throw std::domain_error("batch_size must be >= 2");
  if (!(learning_rate > 0)) throw std::domain_error("learning_rate must be > 0");
  if (alpha < 0 || beta < 0) throw std::domain_error("alpha, beta must be >= 0");
  if (k_neighbors < 1) throw std::domain_error("k_neighbors must be >= 1");
  if (threads < 1) throw std::domain_error("threads must be >= 1");
  OMixConfig{tau, c}.validate();
  if (!(gamma >= 0 && gamma <= 1)) throw std::domain_error("gamma must lie in [0, 1]");
  for (auto h : hidden) {
    if (h < 1) throw std::domain_error("hidden dims must be positive");
  }
  for (auto h : apn_hidden) {
    if (h < 1) throw std::domain_error("apn hidden dims must be positive");
  }
}

ModelOptions TrainConfig::model_options() const {
  ModelOptions o;
  o.hidden = hidden;
  o.apn_hidden = apn_hidden;
  o.activation = activation;
  o.gamma = gamma;
  o.learnable_gamma = learnable_gamma;
  o.use_structural = use_structural;
  o.alpha = mix == MixMode::kNone ? 0.0 : alpha;
  o.beta = mix == MixMode::kNone ? 0.0 : beta;
  o.bandwidth = bandwidth;
  return o;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "epoch,loss_cc,loss_om,loss_cd,loss_total,val_acc\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_double(e.loss_cc) << ',' << format_double(e.loss_om) << ','
        << format_double(e.loss_cd) << ',' << format_double(e.loss_total) << ','
        << format_double(e.val_acc) << '\n';
  }
}

PreparedSplit prepare_split(const std::vector<Matrix>& features, std::vector<Index> labels,
                            Index k_neighbors, bool use_structural) {
  PreparedSplit s;
  s.features = features;
  s.labels = std::move(labels);
  for (const auto& x : features) {
    if (x.rows() != s.size()) throw std::domain_error("prepare_split: rows do not match labels");
  }
  if (use_structural && s.size() > 0) {
    if (s.size() < 3) throw std::domain_error("prepare_split: graph needs at least 3 rows");
    const Index k = std::min(k_neighbors, s.size() - 2);
    for (const auto& x : features) s.aggregated.push_back(aggregate(build_graph(x, k), x));
  }
  return s;
}

LossBreakdown train_step(ModelState& model, AdamState<double>& optimizer, const BatchInputs& batch,
                         int threads) {
  const Objective obj = total_loss(model, batch, true, threads);
  if (!std::isfinite(obj.loss.total) || !obj.grad.allFinite()) {
    throw TrainingError("non-finite loss or gradient");
  }
  Vector params = model.flatten();
  adam_step(params, obj.grad, optimizer);
  model.assign(params);
  return obj.loss;
}

double evaluate_closed(const ModelState& model, const PreparedSplit& split) {
  if (split.size() == 0) throw std::domain_error("evaluate_closed: empty split");
  const Prediction p = predict(model, split.features, split.aggregated);
  Index correct = 0;
  for (Index r = 0; r < split.size(); ++r) {
    if (p.predicted[r] == split.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

namespace {

std::vector<std::vector<Index>> make_batches(std::vector<Index> order, Index batch_size) {
  std::vector<std::vector<Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // HSIC needs two rows; a singleton tail joins the previous batch.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

TrainResult train(const PreparedSplit& train_split, const PreparedSplit& val_split,
                  Index num_classes, const TrainConfig& config) {
  config.validate();
  if (train_split.size() < config.batch_size) {
    throw std::domain_error("training split has fewer rows than batch_size");
  }
  if (std::set<Index>(train_split.labels.begin(), train_split.labels.end()).size() < 2) {
    throw std::domain_error("training split needs at least two classes");
  }
  for (Index y : train_split.labels) {
    if (y < 0 || y >= num_classes) throw std::domain_error("training label out of range");
  }
  if (config.use_structural && train_split.aggregated.size() != train_split.features.size()) {
    throw std::domain_error("training split lacks aggregated features");
  }

  std::mt19937_64 rng(config.seed);
  std::vector<Index> dims;
  for (const auto& x : train_split.features) dims.push_back(x.cols());
  TrainResult result;
  result.model = make_model(dims, num_classes, config.model_options(), rng);
  AdamState<double> optimizer(result.model.num_params(), config.learning_rate);
  const OMixConfig omix{config.tau, config.c};
  const Index views = result.model.num_views();

  ModelState best = result.model;
  double best_acc = -1.0;
  int stale = 0;
  std::vector<Index> order(static_cast<std::size_t>(train_split.size()));
  std::iota(order.begin(), order.end(), Index{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const auto batches = make_batches(order, config.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& rows = batches[b];
      BatchInputs in;
      for (Index v = 0; v < views; ++v) {
        Matrix x(static_cast<Index>(rows.size()), train_split.features[v].cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          x.row(static_cast<Index>(i)) = train_split.features[v].row(rows[i]);
        }
        in.features.push_back(std::move(x));
        if (config.use_structural) {
          Matrix a(static_cast<Index>(rows.size()), train_split.aggregated[v].cols());
          for (std::size_t i = 0; i < rows.size(); ++i) {
            a.row(static_cast<Index>(i)) = train_split.aggregated[v].row(rows[i]);
          }
          in.aggregated.push_back(std::move(a));
        }
      }
      for (Index r : rows) in.labels.push_back(train_split.labels[r]);
      OMixBatch<double> mixed;
      if (config.mix != MixMode::kNone) {
        mixed = mix_batch<double>(in.features, in.labels, num_classes, omix, rng, config.mix);
        in.mix = &mixed;
      }
      LossBreakdown loss;
      try {
        loss = train_step(result.model, optimizer, in, config.threads);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(b));
      }
      rec.loss_cc += loss.cc;
      rec.loss_om += loss.om;
      rec.loss_cd += loss.cd;
      rec.loss_total += loss.total;
    }
    const auto nb = static_cast<double>(batches.size());
    rec.loss_cc /= nb;
    rec.loss_om /= nb;
    rec.loss_cd /= nb;
    rec.loss_total /= nb;

    if (val_split.size() > 0) {
      rec.val_acc = evaluate_closed(result.model, val_split);
      // Ties move the kept model forward but do not reset patience.
      stale = rec.val_acc > best_acc ? 0 : stale + 1;
      if (rec.val_acc >= best_acc) {
        best_acc = rec.val_acc;
        best = result.model;
        result.history.best_epoch = epoch;
      }
    } else {
      rec.val_acc = std::nan("");
      best = result.model;
      result.history.best_epoch = epoch;
    }
    result.history.epochs.push_back(rec);
    if (config.patience > 0 && stale >= config.patience) break;
  }
  result.model = std::move(best);
  return result;
}

}  // namespace mocd
