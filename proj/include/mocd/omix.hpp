#pragma once

// Per-view O-Mix virtual batches: shared pairing, per-view Beta mixing
// coefficients, interpolated features, calibrated soft labels and the
// perception-loss coefficients.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "mocd/mass_calculus.hpp"

namespace mocd {

enum class MixMode { kNone, kVanilla, kOMix };

/// Draws lambda ~ Beta(tau, tau) as X / (X + Y) with X, Y ~ Gamma(tau, 1).
template <class Scalar, class Rng>
Scalar sample_lambda(Rng& rng, Scalar tau) {
  if (!(tau > Scalar(0))) throw std::domain_error("tau must be > 0");
  std::gamma_distribution<Scalar> gamma(tau, Scalar(1));
  for (;;) {
    const Scalar x = gamma(rng);
    const Scalar y = gamma(rng);
    // Both draws underflow to 0 only for tiny tau.
    if (x + y > Scalar(0)) return x / (x + y);
  }
}

template <class Scalar>
struct OMixView {
  MatrixX<Scalar> mixed_features;
  VectorX<Scalar> lambda;
  VectorX<Scalar> u;
  MatrixX<Scalar> soft_labels;
  VectorX<Scalar> coeff_i;
  VectorX<Scalar> coeff_j;
  VectorX<Scalar> coeff_unk;
};

template <class Scalar>
struct OMixBatch {
  std::vector<OMixView<Scalar>> views;
  std::vector<Eigen::Index> pair_index;  // mixing partner of each row
  std::vector<Eigen::Index> class_i;     // class of each row
  std::vector<Eigen::Index> class_j;     // class of each row's partner
  Eigen::Index num_classes = 0;
};

namespace detail {

inline void check_views(const auto& features, Eigen::Index rows) {
  if (features.empty()) throw std::domain_error("mix_batch needs at least one view");
  for (const auto& x : features) {
    if (x.rows() != rows) throw std::domain_error("views disagree on the number of rows");
  }
}

inline bool is_permutation(const std::vector<Eigen::Index>& p) {
  std::vector<char> seen(p.size(), 0);
  for (auto j : p) {
    if (j < 0 || static_cast<std::size_t>(j) >= p.size() || seen[j]) return false;
    seen[j] = 1;
  }
  return true;
}

}  // namespace detail

/// Deterministic core of mix_batch: the pairing and the per-view, per-row
/// lambdas are given. `c = 0` yields vanilla Mixup.
template <class Scalar>
OMixBatch<Scalar> mix_batch_with(const std::vector<MatrixX<Scalar>>& features,
                                 const std::vector<Eigen::Index>& labels,
                                 Eigen::Index num_classes,
                                 const std::vector<Eigen::Index>& pair_index,
                                 const std::vector<VectorX<Scalar>>& lambdas, Scalar c) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  detail::check_views(features, n);
  if (static_cast<Eigen::Index>(pair_index.size()) != n || !detail::is_permutation(pair_index)) {
    throw std::domain_error("pair_index must be a permutation of the batch");
  }
  if (lambdas.size() != features.size()) throw std::domain_error("one lambda vector per view");

  OMixBatch<Scalar> batch;
  batch.pair_index = pair_index;
  batch.num_classes = num_classes;
  batch.class_i = labels;
  batch.class_j.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) batch.class_j[r] = labels[pair_index[r]];

  for (std::size_t v = 0; v < features.size(); ++v) {
    const auto& x = features[v];
    const auto& lam = lambdas[v];
    if (lam.size() != n) throw std::domain_error("lambda length must match the batch");
    OMixView<Scalar> out;
    out.mixed_features.resize(n, x.cols());
    out.lambda = lam;
    out.u.resize(n);
    out.soft_labels.resize(n, num_classes);
    out.coeff_i.resize(n);
    out.coeff_j.resize(n);
    out.coeff_unk.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Scalar l = lam(r);
      const Scalar u = adaptive_uncertainty(l, c);
      out.mixed_features.row(r) = l * x.row(r) + (Scalar(1) - l) * x.row(pair_index[r]);
      out.u(r) = u;
      const auto mass = omix_masses(l, u);
      out.soft_labels.row(r) =
          omix_soft_label(mass, batch.class_i[r], batch.class_j[r], num_classes).transpose();
      const auto w = perception_coefficients(l, u);
      out.coeff_i(r) = w.w_i;
      out.coeff_j(r) = w.w_j;
      out.coeff_unk(r) = w.w_unk;
    }
    batch.views.push_back(std::move(out));
  }
  return batch;
}

/// One shared random pairing per batch and an independent lambda per view
/// and row. Each view draws from its own substream seeded off `rng`.
template <class Scalar, class Rng>
OMixBatch<Scalar> mix_batch(const std::vector<MatrixX<Scalar>>& features,
                            const std::vector<Eigen::Index>& labels, Eigen::Index num_classes,
                            const OMixConfig& config, Rng& rng,
                            MixMode mode = MixMode::kOMix) {
  config.validate();
  if (mode == MixMode::kNone) throw std::domain_error("mix_batch called with MixMode::kNone");
  const auto n = static_cast<Eigen::Index>(labels.size());
  detail::check_views(features, n);

  std::vector<Eigen::Index> pair(n);
  std::iota(pair.begin(), pair.end(), Eigen::Index{0});
  std::shuffle(pair.begin(), pair.end(), rng);

  std::vector<VectorX<Scalar>> lambdas;
  lambdas.reserve(features.size());
  for (std::size_t v = 0; v < features.size(); ++v) {
    const std::uint64_t draw = rng();
    std::seed_seq seq{static_cast<std::uint32_t>(draw), static_cast<std::uint32_t>(draw >> 32),
                      static_cast<std::uint32_t>(v)};
    std::mt19937_64 view_rng(seq);
    VectorX<Scalar> lam(n);
    for (Eigen::Index r = 0; r < n; ++r) lam(r) = sample_lambda(view_rng, Scalar(config.tau));
    lambdas.push_back(std::move(lam));
  }
  const Scalar c = mode == MixMode::kVanilla ? Scalar(0) : Scalar(config.c);
  return mix_batch_with(features, labels, num_classes, pair, lambdas, c);
}

}  // namespace mocd
