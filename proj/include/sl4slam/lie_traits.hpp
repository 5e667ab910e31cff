#pragma once

// Uniform interface over the matrix Lie groups the backend optimizes on, plus
// the left/right Jacobians of Exp that the exact factor Jacobians need.

#include <Eigen/Dense>

#include <concepts>

#include "sl4slam/sim3.hpp"
#include "sl4slam/sl4.hpp"

namespace sl4slam {

template <class G>
struct LieGroupTraits;

template <>
struct LieGroupTraits<Homography> {
  static constexpr int kDof = 15;
  static constexpr const char* kName = "SL4";
  using Tangent = SL4Tangent;
  using Jacobian = SL4Adjoint;

  static Homography identity() { return Homography::identity(); }
  static Homography compose(const Homography& a, const Homography& b) { return a * b; }
  static Homography inverse(const Homography& a) { return a.inverse(); }
  static Homography exp(const Tangent& xi) { return exp_sl4(xi); }
  static Tangent log(const Homography& h) { return log_sl4(h); }
  static Jacobian adjoint(const Homography& h) { return sl4slam::adjoint(h); }
  static Jacobian ad(const Tangent& xi) { return sl4slam::ad(xi); }
  static Homography renormalize(const Homography& h) { return h.renormalized(); }
  /// Action on homogeneous points.
  static Mat4 matrix(const Homography& h) { return h.matrix(); }
};

template <>
struct LieGroupTraits<Sim3Transform> {
  static constexpr int kDof = 7;
  static constexpr const char* kName = "Sim3";
  using Tangent = Sim3Tangent;
  using Jacobian = Sim3Adjoint;

  static Sim3Transform identity() { return Sim3Transform::identity(); }
  static Sim3Transform compose(const Sim3Transform& a, const Sim3Transform& b) { return a * b; }
  static Sim3Transform inverse(const Sim3Transform& a) { return a.inverse(); }
  static Sim3Transform exp(const Tangent& v) { return exp_sim3(v); }
  static Tangent log(const Sim3Transform& s) { return log_sim3(s); }
  static Jacobian adjoint(const Sim3Transform& s) { return sl4slam::adjoint(s); }
  static Jacobian ad(const Tangent& v) { return sim3_ad(v); }
  static Sim3Transform renormalize(const Sim3Transform& s) { return s.renormalized(); }
  static Mat4 matrix(const Sim3Transform& s) { return s.matrix(); }
};

template <class G>
concept MatrixLieGroup = requires { LieGroupTraits<G>::kDof; };

/// Right Jacobian of Exp: Exp(x + d) ~ Exp(x) Exp(Jr(x) d).
/// Jr(x) = sum_k (-ad_x)^k / (k+1)!, summed until the terms vanish.
template <MatrixLieGroup G>
typename LieGroupTraits<G>::Jacobian right_jacobian(const typename LieGroupTraits<G>::Tangent& x) {
  using J = typename LieGroupTraits<G>::Jacobian;
  const J minus_ad = -LieGroupTraits<G>::ad(x);
  J sum = J::Identity();
  J term = J::Identity();
  for (int k = 1; k < 200; ++k) {
    term = term * minus_ad / static_cast<double>(k + 1);
    sum += term;
    if (term.norm() < 1e-18 * sum.norm()) break;
  }
  return sum;
}

/// Left Jacobian: Exp(x + d) ~ Exp(Jl(x) d) Exp(x); Jl(x) = Jr(-x).
template <MatrixLieGroup G>
typename LieGroupTraits<G>::Jacobian left_jacobian(const typename LieGroupTraits<G>::Tangent& x) {
  return right_jacobian<G>(-x);
}

template <MatrixLieGroup G>
typename LieGroupTraits<G>::Jacobian right_jacobian_inverse(
    const typename LieGroupTraits<G>::Tangent& x) {
  return right_jacobian<G>(x).partialPivLu().inverse();
}

template <MatrixLieGroup G>
typename LieGroupTraits<G>::Jacobian left_jacobian_inverse(
    const typename LieGroupTraits<G>::Tangent& x) {
  return left_jacobian<G>(x).partialPivLu().inverse();
}

}  // namespace sl4slam
