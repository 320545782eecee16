#pragma once

// Biased HSIC estimator with Gaussian kernels, Tr(K_Z C K_H C) / (n - 1)^2,
// and its gradient with respect to both arguments.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mocd/mass_calculus.hpp"
#include "mocd/neighbor_graph.hpp"

namespace mocd {

/// Kernel width policy. With `median` set, sigma is the median pairwise
/// Euclidean distance of the argument; otherwise `fixed_sigma`.
struct BandwidthPolicy {
  bool median = true;
  double fixed_sigma = 1.0;

  static BandwidthPolicy fixed(double sigma) {
    if (!(sigma > 0.0)) throw std::domain_error("fixed bandwidth must be > 0");
    return {false, sigma};
  }
};

/// Median of the n(n-1)/2 pairwise distances; 1 when they are all zero.
template <class Derived>
typename Derived::Scalar median_bandwidth(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> d2 = pairwise_sq_distances(x);
  std::vector<Scalar> dists;
  dists.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
  for (Eigen::Index a = 0; a < x.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < x.rows(); ++b) dists.push_back(std::sqrt(d2(a, b)));
  }
  if (dists.empty()) return Scalar(1);
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  Scalar med = *mid;
  if (dists.size() % 2 == 0) {
    med = (med + *std::max_element(dists.begin(), mid)) / Scalar(2);
  }
  return med > Scalar(0) ? med : Scalar(1);
}

template <class Derived>
typename Derived::Scalar resolve_bandwidth(const Eigen::MatrixBase<Derived>& x,
                                           const BandwidthPolicy& policy) {
  using Scalar = typename Derived::Scalar;
  return policy.median ? median_bandwidth(x) : static_cast<Scalar>(policy.fixed_sigma);
}

template <class Derived>
MatrixX<typename Derived::Scalar> gaussian_kernel(const Eigen::MatrixBase<Derived>& x,
                                                  typename Derived::Scalar sigma) {
  using Scalar = typename Derived::Scalar;
  return (pairwise_sq_distances(x).array() / (Scalar(-2) * sigma * sigma)).exp().matrix();
}

/// C K C for the centering matrix C = I - 11^T / n.
template <class Scalar>
MatrixX<Scalar> double_center(const MatrixX<Scalar>& k) {
  const VectorX<Scalar> row_mean = k.rowwise().mean();
  const VectorX<Scalar> col_mean = k.colwise().mean().transpose();
  MatrixX<Scalar> out = k;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean.transpose();
  out.array() += k.mean();
  return out;
}

template <class Scalar>
struct HsicResult {
  Scalar value{};
  MatrixX<Scalar> grad_z;
  MatrixX<Scalar> grad_h;
  Scalar sigma_z{};
  Scalar sigma_h{};
};

namespace detail {

// Gradient of sum_ab G_ab K_ab with respect to the kernel inputs x, for a
// symmetric G and K_ab = exp(-|x_a - x_b|^2 / (2 sigma^2)).
template <class Scalar>
MatrixX<Scalar> kernel_input_grad(const MatrixX<Scalar>& g, const MatrixX<Scalar>& k,
                                  const MatrixX<Scalar>& x, Scalar sigma) {
  const MatrixX<Scalar> m = g.cwiseProduct(k);
  const VectorX<Scalar> row_sum = m.rowwise().sum();
  return (Scalar(-2) / (sigma * sigma)) * (row_sum.asDiagonal() * x - m * x);
}

}  // namespace detail

/// Bandwidths are resolved once from the inputs and held constant in the
/// gradient.
template <class Scalar>
HsicResult<Scalar> hsic_grad(const MatrixX<Scalar>& z, const MatrixX<Scalar>& h,
                             const BandwidthPolicy& policy = {}) {
  const Eigen::Index n = z.rows();
  if (n < 2) throw std::domain_error("hsic needs at least 2 samples");
  if (h.rows() != n) throw std::domain_error("hsic: arguments disagree on sample count");

  HsicResult<Scalar> out;
  out.sigma_z = resolve_bandwidth(z, policy);
  out.sigma_h = resolve_bandwidth(h, policy);
  const MatrixX<Scalar> kz = gaussian_kernel(z, out.sigma_z);
  const MatrixX<Scalar> kh = gaussian_kernel(h, out.sigma_h);
  const Scalar norm = Scalar(1) / static_cast<Scalar>((n - 1) * (n - 1));
  const MatrixX<Scalar> kh_c = double_center(kh);
  const MatrixX<Scalar> kz_c = double_center(kz);

  out.value = kz.cwiseProduct(kh_c).sum() * norm;
  out.grad_z = detail::kernel_input_grad<Scalar>(kh_c * norm, kz, z, out.sigma_z);
  out.grad_h = detail::kernel_input_grad<Scalar>(kz_c * norm, kh, h, out.sigma_h);
  return out;
}

template <class Scalar>
Scalar hsic(const MatrixX<Scalar>& z, const MatrixX<Scalar>& h,
            const BandwidthPolicy& policy = {}) {
  const Eigen::Index n = z.rows();
  if (n < 2) throw std::domain_error("hsic needs at least 2 samples");
  if (h.rows() != n) throw std::domain_error("hsic: arguments disagree on sample count");
  const MatrixX<Scalar> kz = gaussian_kernel(z, resolve_bandwidth(z, policy));
  const MatrixX<Scalar> kh = gaussian_kernel(h, resolve_bandwidth(h, policy));
  return kz.cwiseProduct(double_center(kh)).sum() / static_cast<Scalar>((n - 1) * (n - 1));
}

}  // namespace mocd
