#pragma once

// Trajectory and dense-map error metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/kdtree.hpp"
#include "sl4slam/sim3.hpp"

namespace sl4slam {

enum class AteAlignment { SE3, Sim3 };

inline AteAlignment parse_ate_alignment(const std::string& s) {
  if (s == "se3") return AteAlignment::SE3;
  if (s == "sim3") return AteAlignment::Sim3;
  throw FormatError("unknown alignment '" + s + "' (expected se3 or sim3)");
}

struct AteReport {
  double rmse = 0.0;
  Sim3Transform alignment;  ///< maps the estimate into the ground-truth frame
  std::vector<double> errors;
};

/// RMSE of camera-position errors after aligning est to gt (positions are
/// matched by index).
inline AteReport ate_rmse(std::span<const Vec3> est, std::span<const Vec3> gt, AteAlignment align) {
  if (est.size() != gt.size())
    throw LengthMismatch("trajectories have " + std::to_string(est.size()) + " and " +
                         std::to_string(gt.size()) + " poses");
  AteReport r;
  r.alignment = umeyama_align(est, gt, align == AteAlignment::Sim3);
  double sq = 0.0;
  for (size_t k = 0; k < est.size(); ++k) {
    const double e = (r.alignment.apply(est[k]) - gt[k]).norm();
    r.errors.push_back(e);
    sq += e * e;
  }
  r.rmse = est.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(est.size()));
  return r;
}

inline AteReport ate_rmse(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, AteAlignment align) {
  return ate_rmse(std::span<const Vec3>(est), std::span<const Vec3>(gt), align);
}

struct ReconReport {
  double accuracy = 0.0;    ///< mean distance from estimate points to ground truth
  double completion = 0.0;  ///< mean distance from ground truth points to the estimate
  double chamfer = 0.0;
};

namespace detail {

inline double mean_nn_distance(std::span<const Vec3> from, const KdTree3& to,
                               std::optional<double> trim_percentile) {
  std::vector<double> d;
  d.reserve(from.size());
  for (const auto& p : from) d.push_back(std::sqrt(to.nearest_squared(p)));
  if (trim_percentile) {
    // Keep the closest trim_percentile percent.
    const double p = std::clamp(*trim_percentile, 0.0, 100.0);
    const auto keep = std::max<size_t>(1, static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(d.size()))));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(keep - 1), d.end());
    d.resize(keep);
  }
  double sum = 0.0;
  for (double x : d) sum += x;
  return sum / static_cast<double>(d.size());
}

}  // namespace detail

/// Accuracy, completion and Chamfer distance. `est` must already be in the
/// ground-truth frame. An optional percentile trims the largest distances in
/// each direction.
inline ReconReport recon_metrics(std::span<const Vec3> est, std::span<const Vec3> gt,
                                 std::optional<double> trim_percentile = std::nullopt) {
  if (est.empty() || gt.empty()) throw EmptyCloud("reconstruction metrics need two non-empty clouds");
  const KdTree3 gt_tree(std::vector<Vec3>(gt.begin(), gt.end()));
  const KdTree3 est_tree(std::vector<Vec3>(est.begin(), est.end()));
  ReconReport r;
  r.accuracy = detail::mean_nn_distance(est, gt_tree, trim_percentile);
  r.completion = detail::mean_nn_distance(gt, est_tree, trim_percentile);
  r.chamfer = 0.5 * (r.accuracy + r.completion);
  return r;
}

inline ReconReport recon_metrics(const std::vector<Vec3>& est, const std::vector<Vec3>& gt,
                                 std::optional<double> trim_percentile = std::nullopt) {
  return recon_metrics(std::span<const Vec3>(est), std::span<const Vec3>(gt), trim_percentile);
}

}  // namespace sl4slam
