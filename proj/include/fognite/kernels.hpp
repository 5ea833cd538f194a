#pragma once

// Elementwise activation kernels shared by the forecaster and the policy
// networks. All are expression-friendly: they accept any Eigen dense
// expression and return an expression or a plain object of the same scalar.

#include <Eigen/Dense>

namespace fognite::kernels {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) + (-x).exp()).inverse();
}

template <typename Derived>
auto relu(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.max(Scalar(0));
}

// d relu / dx evaluated at pre-activation x (0 at the kink).
template <typename Derived>
auto relu_grad(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (x > Scalar(0)).template cast<Scalar>();
}

// Numerically stable softmax over a vector of logits.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = logits.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

// log(sum(exp(x))) with max shift.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  const auto m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

}  // namespace fognite::kernels
