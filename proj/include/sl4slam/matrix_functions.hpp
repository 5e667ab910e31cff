#pragma once

// Dense 4x4 matrix exponential, square root and logarithm.
//
// exp: scaling and squaring around a truncated Taylor core.
// log: inverse scaling and squaring; repeated principal square roots
//      (Denman-Beavers) bring the argument within 0.25 of the identity, a
//      Mercator series finishes the job and the result is scaled back up.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>

#include "sl4slam/errors.hpp"

namespace sl4slam::matfun {

using Mat4 = Eigen::Matrix4d;

inline Mat4 expm(const Mat4& a) {
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Mat4 scaled = a / std::ldexp(1.0, squarings);

  // ||scaled||_1 <= 0.5, so 0.5^19 / 19! bounds the truncation error.
  Mat4 result = Mat4::Identity();
  Mat4 term = Mat4::Identity();
  for (int k = 1; k <= 18; ++k) {
    term = term * scaled / static_cast<double>(k);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

/// Principal square root. Throws LogDomainError if the iteration stalls.
inline Mat4 sqrtm(const Mat4& a) {
  Mat4 y = a;
  Mat4 z = Mat4::Identity();
  for (int it = 0; it < 100; ++it) {
    Eigen::PartialPivLU<Mat4> lu_y(y);
    Eigen::PartialPivLU<Mat4> lu_z(z);
    const Mat4 y_next = 0.5 * (y + lu_z.inverse());
    const Mat4 z_next = 0.5 * (z + lu_y.inverse());
    if (!y_next.allFinite() || !z_next.allFinite()) break;
    const double step = (y_next - y).norm();
    y = y_next;
    z = z_next;
    if (step <= 1e-15 * y.norm()) return y;
  }
  throw LogDomainError("matrix square root iteration did not converge");
}

/// True when some eigenvalue sits on the closed negative real axis, where no
/// real principal logarithm exists.
inline bool has_nonpositive_real_eigenvalue(const Mat4& a) {
  Eigen::EigenSolver<Mat4> solver(a, false);
  if (solver.info() != Eigen::Success) return true;
  const double scale = std::max(1.0, a.norm());
  for (int i = 0; i < 4; ++i) {
    const std::complex<double> ev = solver.eigenvalues()(i);
    if (std::abs(ev.imag()) <= 1e-12 * scale && ev.real() <= 1e-14 * scale) return true;
  }
  return false;
}

/// Principal logarithm. Throws LogDomainError outside the principal domain.
inline Mat4 logm(const Mat4& a) {
  if (!a.allFinite()) throw LogDomainError("logarithm of a non-finite matrix");
  if (has_nonpositive_real_eigenvalue(a))
    throw LogDomainError("matrix has an eigenvalue on the closed negative real axis");

  Mat4 x = a;
  int roots = 0;
  while ((x - Mat4::Identity()).norm() >= 0.25) {
    if (++roots > 60) throw LogDomainError("inverse scaling did not reach the identity");
    x = sqrtm(x);
  }

  const Mat4 e = x - Mat4::Identity();
  Mat4 power = e;
  Mat4 sum = e;
  for (int k = 2; k <= 60; ++k) {
    power = power * e;
    const Mat4 term = power / static_cast<double>(k);
    if (k % 2 == 0) sum -= term;
    else sum += term;
    if (term.norm() < 1e-19) break;
  }
  return std::ldexp(1.0, roots) * sum;
}

}  // namespace sl4slam::matfun
