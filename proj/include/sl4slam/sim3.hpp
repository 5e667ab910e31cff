#pragma once

// Similarity transforms x -> s R x + t, stored as (scale, rotation,
// translation). The Lie algebra coordinates are (omega, rho, sigma): rotation
// generators first, then translation, then log-scale.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/matrix_functions.hpp"
#include "sl4slam/sl4.hpp"

namespace sl4slam {

using Mat3 = Eigen::Matrix3d;
using Sim3Tangent = Eigen::Matrix<double, 7, 1>;
using Sim3Adjoint = Eigen::Matrix<double, 7, 7>;

/// Nearest proper rotation in the Frobenius sense.
inline Mat3 project_to_rotation(const Mat3& a) {
  Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

class Sim3Transform {
 public:
  Sim3Transform() = default;

  Sim3Transform(double scale, const Mat3& rotation, const Vec3& translation)
      : scale_(scale), rotation_(rotation), translation_(translation) {
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw DegenerateConfiguration("similarity scale must be positive, got " + std::to_string(scale));
    if ((rotation.transpose() * rotation - Mat3::Identity()).norm() > 1e-9 ||
        rotation.determinant() < 0.0)
      throw DegenerateConfiguration("similarity rotation is not proper orthonormal");
  }

  static Sim3Transform identity() { return {}; }

  /// From a 4x4 matrix proportional to [sR t; 0 1].
  static Sim3Transform from_matrix(const Mat4& m) {
    if (std::abs(m(3, 3)) < 1e-15) throw DegenerateConfiguration("not a similarity matrix");
    const Mat4 n = m / m(3, 3);
    const Mat3 a = n.topLeftCorner<3, 3>();
    const double det = a.determinant();
    if (!(det > 0.0)) throw DegenerateConfiguration("similarity block has non-positive determinant");
    const double s = std::cbrt(det);
    return {s, project_to_rotation(a / s), n.block<3, 1>(0, 3)};
  }

  double scale() const { return scale_; }
  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = scale_ * rotation_;
    m.block<3, 1>(0, 3) = translation_;
    return m;
  }

  /// Promotion to SL(4): divides [sR t; 0 1] by the fourth root of s^3.
  Homography to_homography() const { return Homography::normalized(matrix()); }

  Vec3 apply(const Vec3& p) const { return scale_ * (rotation_ * p) + translation_; }

  Sim3Transform operator*(const Sim3Transform& o) const {
    Sim3Transform r;
    r.scale_ = scale_ * o.scale_;
    r.rotation_ = rotation_ * o.rotation_;
    r.translation_ = scale_ * (rotation_ * o.translation_) + translation_;
    return r;
  }

  Sim3Transform inverse() const {
    Sim3Transform r;
    r.scale_ = 1.0 / scale_;
    r.rotation_ = rotation_.transpose();
    r.translation_ = -(r.rotation_ * translation_) / scale_;
    return r;
  }

  Sim3Transform renormalized() const {
    Sim3Transform r = *this;
    r.rotation_ = project_to_rotation(rotation_);
    return r;
  }

 private:
  double scale_ = 1.0;
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

inline const std::array<Mat4, 7>& sim3_generators() {
  static const std::array<Mat4, 7> gens = [] {
    std::array<Mat4, 7> g;
    for (auto& m : g) m.setZero();
    // so(3)
    g[0](2, 1) = 1.0; g[0](1, 2) = -1.0;
    g[1](0, 2) = 1.0; g[1](2, 0) = -1.0;
    g[2](1, 0) = 1.0; g[2](0, 1) = -1.0;
    // translation
    g[3](0, 3) = 1.0;
    g[4](1, 3) = 1.0;
    g[5](2, 3) = 1.0;
    // scale
    g[6](0, 0) = g[6](1, 1) = g[6](2, 2) = 1.0;
    return g;
  }();
  return gens;
}

inline const Eigen::Matrix<double, 16, 7>& sim3_basis() {
  static const Eigen::Matrix<double, 16, 7> basis = [] {
    Eigen::Matrix<double, 16, 7> b;
    const auto& g = sim3_generators();
    for (int k = 0; k < 7; ++k) b.col(k) = detail::vec_rows(g[k]);
    return b;
  }();
  return basis;
}

inline const Eigen::Matrix<double, 7, 16>& sim3_basis_pinv() {
  static const Eigen::Matrix<double, 7, 16> pinv = [] {
    const auto& b = sim3_basis();
    const Eigen::Matrix<double, 7, 7> gram = b.transpose() * b;
    return Eigen::Matrix<double, 7, 16>(gram.inverse() * b.transpose());
  }();
  return pinv;
}

inline Mat4 sim3_hat(const Sim3Tangent& v) {
  Mat4 m = Mat4::Zero();
  const auto& g = sim3_generators();
  for (int k = 0; k < 7; ++k) m += v(k) * g[k];
  return m;
}

inline Sim3Tangent sim3_vee(const Mat4& m) {
  Sim3Tangent v;
  v(0) = 0.5 * (m(2, 1) - m(1, 2));
  v(1) = 0.5 * (m(0, 2) - m(2, 0));
  v(2) = 0.5 * (m(1, 0) - m(0, 1));
  v(3) = m(0, 3);
  v(4) = m(1, 3);
  v(5) = m(2, 3);
  v(6) = m.topLeftCorner<3, 3>().trace() / 3.0;
  return v;
}

inline Sim3Transform exp_sim3(const Sim3Tangent& v) {
  return Sim3Transform::from_matrix(matfun::expm(sim3_hat(v)));
}

inline Sim3Tangent log_sim3(const Sim3Transform& s) { return sim3_vee(matfun::logm(s.matrix())); }

inline Sim3Adjoint adjoint(const Sim3Transform& s) {
  const Mat4 m = s.matrix();
  return sim3_basis_pinv() * detail::kron(m, m.inverse().transpose()) * sim3_basis();
}

inline Sim3Adjoint sim3_ad(const Sim3Tangent& v) {
  const Mat4 x = sim3_hat(v);
  const Mat4 i4 = Mat4::Identity();
  return sim3_basis_pinv() * (detail::kron(x, i4) - detail::kron(i4, x.transpose())) * sim3_basis();
}

/// Least-squares similarity (or rigid motion) taking src onto dst.
inline Sim3Transform umeyama_align(std::span<const Vec3> src, std::span<const Vec3> dst,
                                   bool with_scale) {
  if (src.size() != dst.size()) throw LengthMismatch("umeyama_align: point lists differ in length");
  if (src.size() < 3) throw DegenerateConfiguration("umeyama_align: need at least 3 correspondences");

  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix3Xd s(3, n), d(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.col(i) = src[i];
    d.col(i) = dst[i];
  }

  const Eigen::Matrix3Xd centered = s.colwise() - s.rowwise().mean();
  const Vec3 sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centered).singularValues();
  const double extent = std::max(1.0, s.cwiseAbs().maxCoeff());
  if (sv(0) <= 1e-12 * extent * std::sqrt(static_cast<double>(n)))
    throw DegenerateConfiguration("umeyama_align: source points are coincident");
  if (sv(1) <= 1e-9 * sv(0))
    throw DegenerateConfiguration("umeyama_align: source points are collinear");

  const Mat4 t = Eigen::umeyama(s, d, with_scale);
  const Mat3 a = t.topLeftCorner<3, 3>();
  const double scale = with_scale ? std::cbrt(a.determinant()) : 1.0;
  return {scale, project_to_rotation(a / scale), t.block<3, 1>(0, 3)};
}

inline Sim3Transform umeyama_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                                   bool with_scale) {
  return umeyama_align(std::span<const Vec3>(src), std::span<const Vec3>(dst), with_scale);
}

/// Whether a 4x4 camera/pose matrix is a similarity up to a relative tolerance.
inline bool is_similarity(const Mat4& m, double tol) {
  if (std::abs(m(3, 3)) < 1e-15) return false;
  const Mat4 n = m / m(3, 3);
  const Mat3 a = n.topLeftCorner<3, 3>();
  const double det = a.determinant();
  if (!(det > 0.0)) return false;
  const double s = std::cbrt(det);
  if (n.block<1, 3>(3, 0).norm() > tol) return false;
  return (a.transpose() * a / (s * s) - Mat3::Identity()).norm() <= tol;
}

/// Closest similarity to a (possibly projective) 4x4 matrix: drops the
/// projective row and projects the linear block onto scaled rotations.
inline Sim3Transform nearest_similarity(const Mat4& m) {
  if (std::abs(m(3, 3)) < 1e-15) throw DegenerateConfiguration("matrix has vanishing (3,3) entry");
  const Mat4 n = m / m(3, 3);
  const Mat3 a = n.topLeftCorner<3, 3>();
  Eigen::JacobiSVD<Mat3> svd(a);
  const double s = svd.singularValues().mean();
  if (!(s > 0.0)) throw DegenerateConfiguration("matrix has a singular linear block");
  return {s, project_to_rotation(a), n.block<3, 1>(0, 3)};
}

}  // namespace sl4slam
