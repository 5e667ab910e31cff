#pragma once

// The special linear group SL(4) of 3D projective transforms and its algebra.
//
// Tangent vectors are ordered like the generator listing: the twelve
// off-diagonal units E_01, E_02, E_03, E_10, E_12, E_13, E_20, E_21, E_23,
// E_30, E_31, E_32 followed by B_1 = diag(1,-1,0,0), B_2 = diag(0,1,-1,0),
// B_3 = diag(0,0,1,-1).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>

#include "sl4slam/errors.hpp"
#include "sl4slam/matrix_functions.hpp"

namespace sl4slam {

using Mat4 = Eigen::Matrix4d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using SL4Tangent = Eigen::Matrix<double, 15, 1>;
using SL4Adjoint = Eigen::Matrix<double, 15, 15>;

inline constexpr double kDetTolerance = 1e-9;

namespace detail {

// (row, col) of the unit entry for generators G_1 .. G_12.
inline constexpr std::array<std::array<int, 2>, 12> kOffDiagonal{{
    {0, 1}, {0, 2}, {0, 3},
    {1, 0}, {1, 2}, {1, 3},
    {2, 0}, {2, 1}, {2, 3},
    {3, 0}, {3, 1}, {3, 2},
}};

/// Row-major vec of a 4x4 matrix.
inline Eigen::Matrix<double, 16, 1> vec_rows(const Mat4& m) {
  Eigen::Matrix<double, 16, 1> v;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) v(4 * r + c) = m(r, c);
  return v;
}

inline Mat4 unvec_rows(const Eigen::Matrix<double, 16, 1>& v) {
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v(4 * r + c);
  return m;
}

inline Eigen::Matrix<double, 16, 16> kron(const Mat4& a, const Mat4& b) {
  Eigen::Matrix<double, 16, 16> k;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) k.block<4, 4>(4 * i, 4 * j) = a(i, j) * b;
  return k;
}

/// Positive real fourth root of det(m); throws when det(m) <= 0.
inline double det_fourth_root(const Mat4& m) {
  const double det = m.determinant();
  if (!(det > 0.0) || !std::isfinite(det))
    throw DegenerateConfiguration("matrix determinant is not positive: " + std::to_string(det));
  return std::pow(det, 0.25);
}

}  // namespace detail

/// G_1 .. G_15 (zero-based here).
inline const std::array<Mat4, 15>& sl4_generators() {
  static const std::array<Mat4, 15> gens = [] {
    std::array<Mat4, 15> g;
    for (int k = 0; k < 12; ++k) {
      g[k].setZero();
      g[k](detail::kOffDiagonal[k][0], detail::kOffDiagonal[k][1]) = 1.0;
    }
    for (int k = 0; k < 3; ++k) {
      g[12 + k].setZero();
      g[12 + k](k, k) = 1.0;
      g[12 + k](k + 1, k + 1) = -1.0;
    }
    return g;
  }();
  return gens;
}

/// B = [vec(G_1) ... vec(G_15)], 16x15, row-major vec.
inline const Eigen::Matrix<double, 16, 15>& sl4_basis() {
  static const Eigen::Matrix<double, 16, 15> basis = [] {
    Eigen::Matrix<double, 16, 15> b;
    const auto& g = sl4_generators();
    for (int k = 0; k < 15; ++k) b.col(k) = detail::vec_rows(g[k]);
    return b;
  }();
  return basis;
}

/// (B^T B)^{-1} B^T. The columns of B are not orthogonal (B_1 . B_2 = -1).
inline const Eigen::Matrix<double, 15, 16>& sl4_basis_pinv() {
  static const Eigen::Matrix<double, 15, 16> pinv = [] {
    const auto& b = sl4_basis();
    const Eigen::Matrix<double, 15, 15> gram = b.transpose() * b;
    return Eigen::Matrix<double, 15, 16>(gram.inverse() * b.transpose());
  }();
  return pinv;
}

inline Mat4 hat(const SL4Tangent& xi) {
  Mat4 m = Mat4::Zero();
  for (int k = 0; k < 12; ++k) m(detail::kOffDiagonal[k][0], detail::kOffDiagonal[k][1]) = xi(k);
  m(0, 0) = xi(12);
  m(1, 1) = xi(13) - xi(12);
  m(2, 2) = xi(14) - xi(13);
  m(3, 3) = -xi(14);
  return m;
}

inline SL4Tangent vee(const Mat4& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (std::abs(m.trace()) >= 1e-9 * scale)
    throw InvalidTangent("vee of a matrix with non-zero trace " + std::to_string(m.trace()));
  SL4Tangent xi;
  for (int k = 0; k < 12; ++k) xi(k) = m(detail::kOffDiagonal[k][0], detail::kOffDiagonal[k][1]);
  xi(12) = m(0, 0);
  xi(14) = -m(3, 3);
  xi(13) = m(1, 1) + m(0, 0);
  return xi;
}

/// Element of SL(4): a 4x4 real matrix with unit determinant.
class Homography {
 public:
  Homography() : m_(Mat4::Identity()) {}

  /// Wraps a matrix that already has unit determinant.
  explicit Homography(const Mat4& m) : m_(m) {
    if (!m.allFinite()) throw DegenerateConfiguration("homography has non-finite entries");
    const double det = m.determinant();
    if (std::abs(det - 1.0) > kDetTolerance)
      throw DegenerateConfiguration("homography determinant " + std::to_string(det) + " != 1");
  }

  /// Rescales an arbitrary positive-determinant matrix onto SL(4).
  static Homography normalized(const Mat4& m) {
    if (!m.allFinite()) throw DegenerateConfiguration("homography has non-finite entries");
    Homography h;
    h.m_ = m / detail::det_fourth_root(m);
    return h;
  }

  static Homography identity() { return Homography(); }

  const Mat4& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  Homography inverse() const {
    Homography h;
    h.m_ = m_.inverse();
    return h;
  }

  Homography operator*(const Homography& other) const {
    Homography h;
    h.m_ = m_ * other.m_;
    return h;
  }

  /// Divides by det^(1/4) again to remove accumulated drift.
  Homography renormalized() const { return normalized(m_); }

  /// Maps a Euclidean point through the projective transform.
  Vec3 apply(const Vec3& p) const {
    const Vec4 q = m_ * p.homogeneous();
    if (std::abs(q(3)) <= 1e-12) throw PointAtInfinity("point mapped to the plane at infinity");
    return q.head<3>() / q(3);
  }

 private:
  Mat4 m_;
};

inline Homography exp_sl4(const SL4Tangent& xi) {
  // exp of a trace-free matrix has det = e^0 = 1; the renormalization only
  // strips floating-point drift.
  return Homography::normalized(matfun::expm(hat(xi)));
}

inline SL4Tangent log_sl4(const Homography& h) {
  Mat4 l = matfun::logm(h.matrix());
  // log det(H) = trace(log H) is zero up to the determinant tolerance; the
  // residual scalar part is not representable in sl(4).
  l.diagonal().array() -= l.trace() / 4.0;
  return vee(l);
}

/// Ad_H = pinv(B) (H kron H^{-T}) B, satisfying hat(Ad_H xi) = H hat(xi) H^{-1}.
inline SL4Adjoint adjoint(const Homography& h) {
  const Mat4 h_inv_t = h.matrix().inverse().transpose();
  return sl4_basis_pinv() * detail::kron(h.matrix(), h_inv_t) * sl4_basis();
}

/// Matrix of the Lie bracket ad_xi(eta) = [hat(xi), hat(eta)].
inline SL4Adjoint ad(const SL4Tangent& xi) {
  const Mat4 x = hat(xi);
  const Mat4 i4 = Mat4::Identity();
  const Eigen::Matrix<double, 16, 16> op =
      detail::kron(x, i4) - detail::kron(i4, x.transpose());
  return sl4_basis_pinv() * op * sl4_basis();
}

}  // namespace sl4slam
