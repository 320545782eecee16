#pragma once

// Adaptive-neighbor affinity graph and the symmetric-normalized propagation
// operator used by the structural branch.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mocd/mass_calculus.hpp"

namespace mocd {

template <class Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

template <class Scalar>
struct AffinityGraph {
  SparseMatrix<Scalar> weights;     // row i: adaptive weights of i's neighbors
  SparseMatrix<Scalar> normalized;  // D^-1/2 (S_sym + I) D^-1/2
  Eigen::Index k = 0;
};

inline Eigen::Index default_neighbor_count(Eigen::Index n) {
  return std::max<Eigen::Index>(1, std::min<Eigen::Index>(10, n - 2));
}

/// Closed-form adaptive-neighbor weights for one sample. `distances` holds
/// squared distances to the candidates (self excluded). The r-th nearest of
/// the k nearest gets (d_(k+1) - d_(r)) / (k d_(k+1) - sum_{s<=k} d_(s)).
/// A zero denominator (all k+1 nearest equidistant) falls back to 1/k.
template <class Derived>
VectorX<typename Derived::Scalar> adaptive_neighbor_weights(
    const Eigen::MatrixBase<Derived>& distances, Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = distances.size();
  if (k < 1) throw std::domain_error("k must be >= 1");
  if (k + 1 > m) throw std::domain_error("adaptive neighbors need at least k + 1 candidates");

  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return distances(a) < distances(b); });

  const Scalar d_next = distances(order[k]);
  Scalar head = 0;
  for (Eigen::Index r = 0; r < k; ++r) head += distances(order[r]);
  const Scalar denom = static_cast<Scalar>(k) * d_next - head;

  VectorX<Scalar> w = VectorX<Scalar>::Zero(m);
  const Scalar scale = std::max(std::abs(d_next), Scalar(1));
  if (denom <= std::numeric_limits<Scalar>::epsilon() * scale * static_cast<Scalar>(k)) {
    for (Eigen::Index r = 0; r < k; ++r) w(order[r]) = Scalar(1) / static_cast<Scalar>(k);
    return w;
  }
  for (Eigen::Index r = 0; r < k; ++r) w(order[r]) = (d_next - distances(order[r])) / denom;
  return w;
}

template <class Derived>
MatrixX<typename Derived::Scalar> pairwise_sq_distances(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> xe = x;
  const VectorX<Scalar> norms = xe.rowwise().squaredNorm();
  MatrixX<Scalar> d = Scalar(-2) * xe * xe.transpose();
  d.colwise() += norms;
  d.rowwise() += norms.transpose();
  return d.cwiseMax(Scalar(0));
}

/// Builds the graph over the rows of `x`.
template <class Derived>
AffinityGraph<typename Derived::Scalar> build_graph(const Eigen::MatrixBase<Derived>& x,
                                                     Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  using Triplet = Eigen::Triplet<Scalar>;
  const Eigen::Index n = x.rows();
  if (k < 1 || n < k + 2) throw std::domain_error("build_graph needs n >= k + 2");

  const MatrixX<Scalar> dist = pairwise_sq_distances(x);
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(n * k));
  VectorX<Scalar> row(n - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0, c = 0; j < n; ++j) {
      if (j != i) row(c++) = dist(i, j);
    }
    const VectorX<Scalar> w = adaptive_neighbor_weights(row, k);
    for (Eigen::Index c = 0; c < n - 1; ++c) {
      if (w(c) != Scalar(0)) entries.emplace_back(i, c < i ? c : c + 1, w(c));
    }
  }

  AffinityGraph<Scalar> g;
  g.k = k;
  g.weights.resize(n, n);
  g.weights.setFromTriplets(entries.begin(), entries.end());

  SparseMatrix<Scalar> sym = (g.weights + SparseMatrix<Scalar>(g.weights.transpose())) * Scalar(0.5);
  SparseMatrix<Scalar> eye(n, n);
  eye.setIdentity();
  sym += eye;
  VectorX<Scalar> inv_sqrt_deg(n);
  for (Eigen::Index i = 0; i < n; ++i) inv_sqrt_deg(i) = Scalar(1) / std::sqrt(sym.row(i).sum());
  g.normalized = inv_sqrt_deg.asDiagonal() * sym * inv_sqrt_deg.asDiagonal();
  g.normalized.makeCompressed();
  return g;
}

/// normalized * h, the neighborhood message for every row.
template <class Scalar, class Derived>
MatrixX<Scalar> aggregate(const AffinityGraph<Scalar>& g, const Eigen::MatrixBase<Derived>& h) {
  if (g.normalized.cols() != h.rows()) throw std::domain_error("aggregate: dimension mismatch");
  return g.normalized * h;
}

}  // namespace mocd
