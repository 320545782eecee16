#pragma once

// Multi-view datasets: synthetic generation with an optional biased view,
// the on-disk directory layout, open-set splits and standardization.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mocd {

struct MultiViewDataset {
  std::string name;
  std::vector<Eigen::MatrixXd> views;  // N x d_v each
  std::vector<long> labels;            // class id per sample
  long class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::vector<Eigen::Index> view_dims() const;
  /// Throws std::domain_error if shapes or labels are inconsistent.
  void validate() const;
};

/// Classes [0, known_classes) are the known classes; the remaining
/// unknown_classes follow. If `bias_view` is set, the last known_classes
/// coordinates of that view carry bias_strength * onehot(c), where c is the
/// sample's class for known classes and a random known class for unknown
/// ones: predictive in closed-set data, misleading for unknowns.
struct SyntheticSpec {
  long known_classes = 6;
  long unknown_classes = 2;
  long samples_per_class = 300;
  long views = 3;
  std::vector<long> view_dims{24, 24, 24};
  long latent_dim = 8;
  double noise_std = 1.0;
  std::vector<double> view_noise_std;  // per view; empty means noise_std
  std::optional<long> bias_view;
  double bias_strength = 0.0;

  void validate() const;
};

MultiViewDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// meta.json, view_<v>.csv and labels.csv under `dir`.
void save_dataset(const MultiViewDataset& data, const std::filesystem::path& dir);
MultiViewDataset load_dataset(const std::filesystem::path& dir);

struct SplitRatios {
  double train = 0.1;
  double val = 0.1;  // the rest goes to test_known
};

struct OpenSplit {
  std::vector<long> train;
  std::vector<long> val;
  std::vector<long> test_known;
  std::vector<long> test_unknown;
  std::vector<long> known_class_ids;
  std::vector<long> unknown_class_ids;
  double realized_openness = 0.0;
};

/// Stratified split over the known classes; every sample of the unknown
/// classes (all non-known classes unless `unknown_class_ids` is given) goes
/// to test_unknown. Per class, train and val take floor(ratio * n) samples,
/// at least one each.
OpenSplit open_split(const MultiViewDataset& data, const std::vector<long>& known_class_ids,
                     const SplitRatios& ratios, std::uint64_t seed,
                     std::optional<std::vector<long>> unknown_class_ids = std::nullopt);

void save_split(const std::filesystem::path& path, const OpenSplit& split);
OpenSplit load_split(const std::filesystem::path& path);

/// Per-view z-scoring with statistics from a subset of rows.
struct Standardizer {
  std::vector<Eigen::RowVectorXd> mean;
  std::vector<Eigen::RowVectorXd> scale;

  static Standardizer fit(const MultiViewDataset& data, const std::vector<long>& rows);
  MultiViewDataset apply(const MultiViewDataset& data) const;
};

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<long>& rows);

}  // namespace mocd
