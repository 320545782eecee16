#pragma once

// Generalized basic probability assignments over the two-label frame of a
// mixed sample, and the O-Mix soft label built from them.

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace mocd {

template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

template <class Scalar>
void require_unit(Scalar x, const char* name) {
  if (!(x >= Scalar(0) && x <= Scalar(1))) {
    throw std::domain_error(std::string(name) + " must lie in [0, 1], got " +
                            std::to_string(static_cast<double>(x)));
  }
}

}  // namespace detail

/// A focal element is a set of known-class ids. The empty set stands for the
/// out-of-frame element, which a generalized assignment may give mass to.
using FocalElement = std::set<int>;

/// Generalized BPA: masses over subsets of the frame plus the out-of-frame
/// element. Unlike a classical BPA the empty element may carry mass.
class Gbpa {
 public:
  void assign(const FocalElement& focal, double mass) {
    if (!(mass >= 0.0 && mass <= 1.0)) {
      throw std::domain_error("focal mass must lie in [0, 1]");
    }
    masses_[focal] += mass;
  }

  double mass(const FocalElement& focal) const {
    auto it = masses_.find(focal);
    return it == masses_.end() ? 0.0 : it->second;
  }

  double total() const {
    double sum = 0.0;
    for (const auto& [focal, m] : masses_) sum += m;
    return sum;
  }

  bool valid(double tol = 1e-12) const {
    for (const auto& [focal, m] : masses_) {
      if (m < 0.0) return false;
    }
    return std::abs(total() - 1.0) <= tol;
  }

  const std::map<FocalElement, double>& masses() const { return masses_; }

 private:
  std::map<FocalElement, double> masses_;
};

/// Masses of {y_i}, {y_j}, {y_i, y_j} and the out-of-frame element for one
/// mixed sample.
template <class Scalar>
struct MassAssignment {
  Scalar m_i{};
  Scalar m_j{};
  Scalar m_amb{};
  Scalar m_empty{};
  Scalar lambda{};
  Scalar u{};

  Scalar total() const { return m_i + m_j + m_amb + m_empty; }

  /// Expands into a GBPA over class ids. A same-class pair collapses the
  /// ambiguous subset into the singleton.
  Gbpa to_gbpa(int class_i, int class_j) const {
    Gbpa g;
    g.assign({class_i}, static_cast<double>(m_i));
    g.assign({class_j}, static_cast<double>(m_j));
    g.assign({class_i, class_j}, static_cast<double>(m_amb));
    g.assign({}, static_cast<double>(m_empty));
    return g;
  }
};

struct OMixConfig {
  double tau = 1.0;  // Beta(tau, tau) shape
  double c = 0.5;    // maximum uncertainty level

  void validate() const {
    if (!(tau > 0.0)) throw std::domain_error("tau must be > 0");
    detail::require_unit(c, "c");
  }
};

/// u = c (1 - |lambda - 0.5|). Peaks at lambda = 0.5 and lies in [c/2, c].
template <class Scalar>
Scalar adaptive_uncertainty(Scalar lambda, Scalar c) {
  detail::require_unit(lambda, "lambda");
  detail::require_unit(c, "c");
  return c * (Scalar(1) - std::abs(lambda - Scalar(0.5)));
}

/// Entropy of the split (a, u - a) with the constant terms dropped.
/// Natural log; 0 log 0 is taken as 0.
template <class Scalar>
Scalar ambiguity_entropy(Scalar a, Scalar u) {
  auto plogp = [](Scalar p) { return p > Scalar(0) ? p * std::log(p) : Scalar(0); };
  return -plogp(a) - plogp(u - a);
}

/// Entropy-maximizing mass for the ambiguous subset: half of the budget.
template <class Scalar>
Scalar ambiguity_split(Scalar u) {
  detail::require_unit(u, "u");
  return u / Scalar(2);
}

template <class Scalar>
MassAssignment<Scalar> omix_masses(Scalar lambda, Scalar u) {
  detail::require_unit(lambda, "lambda");
  detail::require_unit(u, "u");
  MassAssignment<Scalar> m;
  m.lambda = lambda;
  m.u = u;
  m.m_i = lambda * (Scalar(1) - u);
  m.m_j = (Scalar(1) - lambda) * (Scalar(1) - u);
  m.m_amb = ambiguity_split(u);
  m.m_empty = u - m.m_amb;
  return m;
}

/// Index of the hot entry; throws if `y` is not a one-hot vector.
template <class Derived>
Eigen::Index one_hot_index(const Eigen::MatrixBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  Eigen::Index hot = -1;
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    if (y(k) == Scalar(1)) {
      if (hot >= 0) throw std::domain_error("label has more than one hot entry");
      hot = k;
    } else if (y(k) != Scalar(0)) {
      throw std::domain_error("label is not one-hot");
    }
  }
  if (hot < 0) throw std::domain_error("label has no hot entry");
  return hot;
}

/// Soft label of a mixed sample over K classes. The out-of-frame mass is
/// spread uniformly, so the result is a probability vector.
template <class Scalar>
VectorX<Scalar> omix_soft_label(const MassAssignment<Scalar>& mass,
                                Eigen::Index class_i, Eigen::Index class_j,
                                Eigen::Index num_classes) {
  if (num_classes < 2) throw std::domain_error("need at least 2 classes");
  if (class_i < 0 || class_i >= num_classes || class_j < 0 || class_j >= num_classes) {
    throw std::domain_error("class index out of range");
  }
  VectorX<Scalar> label = VectorX<Scalar>::Zero(num_classes);
  // Known-class terms first so that u = 0 reproduces the vanilla Mixup
  // label bit for bit.
  label(class_i) += mass.m_i;
  label(class_j) += mass.m_j;
  label(class_i) += mass.m_amb / Scalar(2);
  label(class_j) += mass.m_amb / Scalar(2);
  label.array() += mass.m_empty / static_cast<Scalar>(num_classes);
  return label;
}

template <class DerivedI, class DerivedJ>
VectorX<typename DerivedI::Scalar> omix_soft_label(
    const MassAssignment<typename DerivedI::Scalar>& mass,
    const Eigen::MatrixBase<DerivedI>& y_i, const Eigen::MatrixBase<DerivedJ>& y_j) {
  if (y_i.size() != y_j.size()) throw std::domain_error("label length mismatch");
  return omix_soft_label(mass, one_hot_index(y_i), one_hot_index(y_j), y_i.size());
}

/// Vanilla Mixup label lambda y_i + (1 - lambda) y_j.
template <class Scalar>
VectorX<Scalar> mixup_label(Scalar lambda, Eigen::Index class_i, Eigen::Index class_j,
                            Eigen::Index num_classes) {
  VectorX<Scalar> label = VectorX<Scalar>::Zero(num_classes);
  label(class_i) += lambda;
  label(class_j) += Scalar(1) - lambda;
  return label;
}

/// Weights of the perception loss terms against y_i, y_j and the uniform
/// distribution. They are the soft label's coefficients regrouped.
template <class Scalar>
struct PerceptionCoefficients {
  Scalar w_i{};
  Scalar w_j{};
  Scalar w_unk{};
};

template <class Scalar>
PerceptionCoefficients<Scalar> perception_coefficients(Scalar lambda, Scalar u) {
  detail::require_unit(lambda, "lambda");
  detail::require_unit(u, "u");
  return {lambda * (Scalar(1) - u) + u / Scalar(4),
          (Scalar(1) - lambda) * (Scalar(1) - u) + u / Scalar(4), u / Scalar(2)};
}

}  // namespace mocd
