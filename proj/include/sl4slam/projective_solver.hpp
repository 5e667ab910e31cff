#pragma once

// Estimation of the 15-DOF projective transform relating two reconstructions
// of the same surface. A correspondence (a, b) pairs a point a of submap i
// with the point b of submap j seen through the same pixel; the sought
// H = H^i_j satisfies [a; 1] ~ H [b; 1].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/sim3.hpp"
#include "sl4slam/sl4.hpp"

namespace sl4slam {

struct Correspondence {
  Vec3 a;  ///< point in submap i (the older one)
  Vec3 b;  ///< point in submap j
};

/// Similarity [s I | -s c; 0 1] mapping a point set to centroid 0 and RMS
/// radius sqrt(3).
class NormalizationTransform {
 public:
  NormalizationTransform() = default;

  static NormalizationTransform fit(std::span<const Vec3> points) {
    if (points.empty()) throw DegenerateSample("normalization of an empty point set");
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());
    double sq = 0.0;
    for (const auto& p : points) sq += (p - centroid).squaredNorm();
    const double rms = std::sqrt(sq / static_cast<double>(points.size()));
    if (!(rms > 0.0) || !std::isfinite(rms)) throw DegenerateSample("point set has zero spread");
    NormalizationTransform t;
    t.scale_ = std::sqrt(3.0) / rms;
    t.centroid_ = centroid;
    return t;
  }

  double scale() const { return scale_; }
  const Vec3& centroid() const { return centroid_; }

  Vec3 apply(const Vec3& p) const { return scale_ * (p - centroid_); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() *= scale_;
    m.block<3, 1>(0, 3) = -scale_ * centroid_;
    return m;
  }

  Mat4 inverse_matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() /= scale_;
    m.block<3, 1>(0, 3) = centroid_;
    return m;
  }

 private:
  double scale_ = 1.0;
  Vec3 centroid_ = Vec3::Zero();
};

using ConstraintRows = Eigen::Matrix<double, 6, 16>;

/// One row per index pair p < q of the homogeneous 4-vectors a~ and H b~:
/// a~_p (H b~)_q - a~_q (H b~)_p = 0, linear in the row-major entries of H.
inline ConstraintRows build_constraint_rows(const Correspondence& c) {
  const Vec4 a = c.a.homogeneous();
  const Vec4 b = c.b.homogeneous();
  ConstraintRows rows = ConstraintRows::Zero();
  int r = 0;
  for (int p = 0; p < 4; ++p) {
    for (int q = p + 1; q < 4; ++q, ++r) {
      for (int col = 0; col < 4; ++col) {
        rows(r, 4 * q + col) += a(p) * b(col);
        rows(r, 4 * p + col) -= a(q) * b(col);
      }
    }
  }
  return rows;
}

namespace detail {

inline constexpr double kRankTolerance = 1e-6;
// Second-smallest over smallest singular value below this ratio means the
// nullspace is not separated from the noise floor (e.g. a planar scene).
inline constexpr double kNullspaceSeparation = 10.0;

/// Sign making the homogeneous scale of the mapped points mostly positive.
inline Mat4 orient(const Mat4& h, std::span<const Correspondence> corrs) {
  long balance = 0;
  for (const auto& c : corrs) balance += (h.row(3).dot(c.b.homogeneous()) >= 0.0) ? 1 : -1;
  return balance < 0 ? Mat4(-h) : h;
}

}  // namespace detail

/// Direct linear transform on >= 5 correspondences, returned on SL(4).
inline Homography solve_dlt(std::span<const Correspondence> corrs) {
  if (corrs.size() < 5) throw DegenerateSample("solve_dlt needs at least 5 correspondences");

  std::vector<Vec3> as, bs;
  as.reserve(corrs.size());
  bs.reserve(corrs.size());
  for (const auto& c : corrs) {
    as.push_back(c.a);
    bs.push_back(c.b);
  }
  const auto norm_a = NormalizationTransform::fit(as);
  const auto norm_b = NormalizationTransform::fit(bs);

  const auto rows = static_cast<Eigen::Index>(6 * corrs.size());
  Eigen::Matrix<double, Eigen::Dynamic, 16> a_mat(rows, 16);
  for (size_t i = 0; i < corrs.size(); ++i) {
    const Correspondence nc{norm_a.apply(corrs[i].a), norm_b.apply(corrs[i].b)};
    a_mat.middleRows<6>(static_cast<Eigen::Index>(6 * i)) = build_constraint_rows(nc);
  }

  // QR first so the SVD works on a 16x16 factor; singular values are kept.
  Eigen::Matrix<double, 16, 16> r_factor;
  if (rows > 16) {
    Eigen::HouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 16>> qr(a_mat);
    r_factor = qr.matrixQR().topRows<16>().triangularView<Eigen::Upper>();
  } else {
    r_factor.setZero();
    r_factor.topRows(rows) = a_mat;
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 16, 16>> svd(r_factor, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(14) <= detail::kRankTolerance * sv(0))
    throw DegenerateSample("constraint system has a non-unique nullspace");
  if (sv(14) <= detail::kNullspaceSeparation * sv(15))
    throw DegenerateSample("nullspace not separated from noise (near-planar points?)");

  const Mat4 h_norm = detail::unvec_rows(svd.matrixV().col(15));
  const double det_norm = h_norm.determinant();
  if (std::abs(det_norm) <= 1e-12) throw DegenerateSample("rank-deficient homography");
  if (det_norm < 0.0) throw DegenerateSample("negative determinant; no real fourth root");

  const Mat4 h = norm_a.inverse_matrix() * h_norm * norm_b.matrix();
  return Homography::normalized(detail::orient(h, corrs));
}

inline Homography solve_dlt(const std::vector<Correspondence>& corrs) {
  return solve_dlt(std::span<const Correspondence>(corrs));
}

/// ||a - dehomogenize(H b~)||.
inline double transfer_error(const Homography& h, const Correspondence& c) {
  const Vec4 q = h.matrix() * c.b.homogeneous();
  if (std::abs(q(3)) <= 1e-12) throw PointAtInfinity("transfer maps point to infinity");
  return (c.a - q.head<3>() / q(3)).norm();
}

struct RansacResult {
  Homography h;
  std::vector<bool> inlier_mask;
  size_t inlier_count = 0;
  int iterations_run = 0;
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the stream of (seed, index); independent of evaluation order.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index + 0x632be59bd9b4e019ULL));
}

inline std::array<size_t, 5> sample_five(uint64_t seed, size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  std::array<size_t, 5> idx{};
  for (size_t k = 0; k < 5; ++k) {
    size_t candidate;
    do {
      candidate = pick(rng);
    } while (std::find(idx.begin(), idx.begin() + k, candidate) != idx.begin() + k);
    idx[k] = candidate;
  }
  return idx;
}

}  // namespace detail

/// 5-point RANSAC. Inliers are scored by transfer error in the normalized
/// frame of the destination points (RMS radius sqrt(3)); the winner is refit on
/// all of its inliers. `iterations` is a cap: sampling stops once an
/// all-inlier sample has been drawn with probability `confidence` given the
/// best inlier ratio so far. confidence >= 1 always runs the full cap.
inline RansacResult ransac_homography(std::span<const Correspondence> corrs, int iterations,
                                      double threshold, uint64_t seed, double confidence = 0.999) {
  const size_t n = corrs.size();
  if (n < 5) throw InsufficientInliers("RANSAC needs at least 5 correspondences, got " + std::to_string(n));

  std::vector<Vec3> as, bs;
  for (const auto& c : corrs) {
    as.push_back(c.a);
    bs.push_back(c.b);
  }
  const auto norm_a = NormalizationTransform::fit(as);
  const auto norm_b = NormalizationTransform::fit(bs);
  std::vector<Correspondence> normalized(n);
  for (size_t i = 0; i < n; ++i) normalized[i] = {norm_a.apply(corrs[i].a), norm_b.apply(corrs[i].b)};

  std::vector<bool> best_mask, mask(n);
  size_t best_count = 0;
  double best_error = 0.0;
  std::vector<Correspondence> sample(5);
  int needed = iterations;
  int it = 0;
  for (; it < std::min(iterations, needed); ++it) {
    const auto idx = detail::sample_five(detail::derive_seed(seed, static_cast<uint64_t>(it)), n);
    for (size_t k = 0; k < 5; ++k) sample[k] = normalized[idx[k]];
    Homography model;
    try {
      model = solve_dlt(sample);
    } catch (const DegenerateSample&) {
      continue;
    }
    size_t count = 0;
    double error_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double e;
      try {
        e = transfer_error(model, normalized[i]);
      } catch (const PointAtInfinity&) {
        mask[i] = false;
        continue;
      }
      mask[i] = e < threshold;
      if (mask[i]) {
        ++count;
        error_sum += e;
      }
    }
    if (count > best_count || (count == best_count && count > 0 && error_sum < best_error)) {
      best_count = count;
      best_error = error_sum;
      best_mask = mask;
      if (confidence < 1.0) {
        const double all_inlier = std::pow(static_cast<double>(count) / static_cast<double>(n), 5.0);
        if (all_inlier >= 1.0) {
          needed = it + 1;
        } else if (all_inlier > 0.0) {
          const double k = std::ceil(std::log(1.0 - confidence) / std::log(1.0 - all_inlier));
          if (k < static_cast<double>(iterations)) needed = static_cast<int>(k);
        }
      }
    }
  }

  if (best_count < 5)
    throw InsufficientInliers("RANSAC found " + std::to_string(best_count) + " inliers");

  std::vector<Correspondence> inliers;
  inliers.reserve(best_count);
  for (size_t i = 0; i < n; ++i)
    if (best_mask[i]) inliers.push_back(normalized[i]);
  const Homography polished = solve_dlt(inliers);

  const Mat4 h = norm_a.inverse_matrix() * polished.matrix() * norm_b.matrix();
  RansacResult result;
  result.h = Homography::normalized(detail::orient(h, corrs));
  result.inlier_mask = std::move(best_mask);
  result.inlier_count = best_count;
  result.iterations_run = it;
  return result;
}

inline RansacResult ransac_homography(const std::vector<Correspondence>& corrs, int iterations,
                                      double threshold, uint64_t seed, double confidence = 0.999) {
  return ransac_homography(std::span<const Correspondence>(corrs), iterations, threshold, seed, confidence);
}

/// Similarity between two point sets of the same frame. With a pose hint the
/// rotation and translation come from the hint and only the scale is
/// estimated, as the median ratio of centered norms.
inline Sim3Transform estimate_sim3(std::span<const Vec3> src, std::span<const Vec3> dst,
                                   const std::optional<Sim3Transform>& rel_pose_hint) {
  if (src.size() != dst.size()) throw LengthMismatch("estimate_sim3: point lists differ in length");
  if (!rel_pose_hint) return umeyama_align(src, dst, true);
  if (src.size() < 3) throw DegenerateConfiguration("estimate_sim3: need at least 3 correspondences");

  Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    src_mean += src[i];
    dst_mean += dst[i];
  }
  src_mean /= static_cast<double>(src.size());
  dst_mean /= static_cast<double>(dst.size());

  Eigen::Matrix3Xd centered(3, static_cast<Eigen::Index>(src.size()));
  std::vector<double> ratios;
  ratios.reserve(src.size());
  for (size_t i = 0; i < src.size(); ++i) {
    centered.col(static_cast<Eigen::Index>(i)) = src[i] - src_mean;
    const double denom = (src[i] - src_mean).norm();
    if (denom > 0.0) ratios.push_back((dst[i] - dst_mean).norm() / denom);
  }
  const Vec3 sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centered).singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0))
    throw DegenerateConfiguration("estimate_sim3: points are collinear or coincident");

  auto mid = ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2);
  std::nth_element(ratios.begin(), mid, ratios.end());
  double scale = *mid;
  if (ratios.size() % 2 == 0) {
    const double lower = *std::max_element(ratios.begin(), mid);
    scale = 0.5 * (scale + lower);
  }
  if (!(scale > 1e-12) || !std::isfinite(scale)) throw ZeroScale("estimate_sim3: median scale underflows");
  return {scale, rel_pose_hint->rotation(), rel_pose_hint->translation()};
}

inline Sim3Transform estimate_sim3(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                                   const std::optional<Sim3Transform>& rel_pose_hint) {
  return estimate_sim3(std::span<const Vec3>(src), std::span<const Vec3>(dst), rel_pose_hint);
}

}  // namespace sl4slam
