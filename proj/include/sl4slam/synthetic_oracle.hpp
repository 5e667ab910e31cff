#pragma once

// Synthetic stand-in for the feed-forward reconstructor. Builds a scene with a
// camera trajectory, then answers reconstruction requests the way the network
// would: points and cameras expressed in the first requested camera's frame,
// distorted by a per-request projective (or similarity) ambiguity, plus noise
// and low-confidence gross outliers. Everything is seeded; a request's output
// depends only on (seed, request index).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/projective_solver.hpp"
#include "sl4slam/sim3.hpp"
#include "sl4slam/sl4.hpp"
#include "sl4slam/submap.hpp"

namespace sl4slam {

enum class Layout { Room, CorridorLoop, PlanarFloor };

inline const char* to_string(Layout l) {
  switch (l) {
    case Layout::Room: return "room";
    case Layout::CorridorLoop: return "corridor_loop";
    case Layout::PlanarFloor: return "planar_floor";
  }
  return "?";
}

inline Layout parse_layout(const std::string& s) {
  if (s == "room") return Layout::Room;
  if (s == "corridor_loop") return Layout::CorridorLoop;
  if (s == "planar_floor") return Layout::PlanarFloor;
  throw FormatError("unknown layout '" + s + "'");
}

/// Frustum used for visibility: optical axis +z, x right, y down.
struct ViewVolume {
  double tan_half_h = std::tan(45.0 * M_PI / 180.0);
  double tan_half_v = std::tan(35.0 * M_PI / 180.0);
  double near = 0.2;
  double far = 8.0;
};

struct Scene {
  Layout layout = Layout::Room;
  ViewVolume view;
  std::vector<Vec3> points;
  std::vector<Sim3Transform> poses;       ///< world-from-camera, unit scale
  std::vector<std::vector<int>> visible;  ///< sorted point indices per frame

  double diameter() const {
    Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
    for (const auto& p : points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
  }

  double trajectory_length() const {
    double len = 0.0;
    for (size_t k = 1; k < poses.size(); ++k)
      len += (poses[k].translation() - poses[k - 1].translation()).norm();
    return len;
  }
};

namespace oracle_detail {

inline Mat3 look_rotation(const Vec3& forward) {
  const Vec3 z = forward.normalized();
  const Vec3 x = z.cross(Vec3::UnitZ()).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r << x, y, z;
  return r;
}

inline Vec3 heading_direction(double yaw, double pitch) {
  return {std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch)};
}

inline std::vector<int> visible_points(const std::vector<Vec3>& points, const Sim3Transform& pose,
                                       const ViewVolume& view) {
  std::vector<int> ids;
  const Mat3 rt = pose.rotation().transpose();
  for (size_t i = 0; i < points.size(); ++i) {
    const Vec3 c = rt * (points[i] - pose.translation());
    if (c.z() < view.near || c.z() > view.far) continue;
    if (std::abs(c.x()) > view.tan_half_h * c.z() || std::abs(c.y()) > view.tan_half_v * c.z())
      continue;
    ids.push_back(static_cast<int>(i));
  }
  return ids;
}

// Surface samplers. Each draws one point uniformly on its surface.
inline Vec3 on_box_face(std::mt19937_64& rng, const Vec3& lo, const Vec3& hi, bool with_bottom) {
  const Vec3 ext = hi - lo;
  std::array<double, 6> area{ext.y() * ext.z(), ext.y() * ext.z(), ext.x() * ext.z(),
                             ext.x() * ext.z(), with_bottom ? ext.x() * ext.y() : 0.0,
                             ext.x() * ext.y()};
  std::discrete_distribution<int> face(area.begin(), area.end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 p(lo.x() + u(rng) * ext.x(), lo.y() + u(rng) * ext.y(), lo.z() + u(rng) * ext.z());
  switch (face(rng)) {
    case 0: p.x() = lo.x(); break;
    case 1: p.x() = hi.x(); break;
    case 2: p.y() = lo.y(); break;
    case 3: p.y() = hi.y(); break;
    case 4: p.z() = lo.z(); break;
    default: p.z() = hi.z(); break;
  }
  return p;
}

inline void build_room(Scene& s, std::mt19937_64& rng, int n_points, int n_frames) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 lo(-5, -4, 0), hi(5, 4, 3);
  // Furniture in the middle of the room so inward-looking views have depth.
  std::vector<std::pair<Vec3, Vec3>> boxes;
  while (boxes.size() < 4) {
    const Vec3 c(-1.5 + 3.0 * u(rng), -1.2 + 2.4 * u(rng), 0.0);
    const Vec3 half(0.2 + 0.3 * u(rng), 0.2 + 0.3 * u(rng), 0.0);
    const double height = 0.5 + u(rng);
    boxes.emplace_back(c - half, c + half + Vec3(0, 0, height));
  }
  const int n_furniture = n_points / 4;
  for (int i = 0; i < n_points - n_furniture; ++i) s.points.push_back(on_box_face(rng, lo, hi, true));
  for (int i = 0; i < n_furniture; ++i) {
    const auto& b = boxes[static_cast<size_t>(i) % boxes.size()];
    s.points.push_back(on_box_face(rng, b.first, b.second, false));
  }
  // Walk 80% of an ellipse, looking inward of the walking direction.
  s.view.far = 9.0;
  for (int k = 0; k < n_frames; ++k) {
    const double t = 1.6 * M_PI * k / std::max(1, n_frames - 1);
    const Vec3 c(3.0 * std::cos(t), 2.4 * std::sin(t), 1.5);
    const double walk_yaw = std::atan2(2.4 * std::cos(t), -3.0 * std::sin(t));
    const Vec3 f = heading_direction(walk_yaw + 35.0 * M_PI / 180.0, -10.0 * M_PI / 180.0);
    s.poses.emplace_back(1.0, look_rotation(f), c);
  }
}

inline void build_corridor(Scene& s, std::mt19937_64& rng, int n_points, int n_frames) {
  // Annular corridor between radii 5 and 7, 2.5 high; the camera goes around
  // the centerline exactly once.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r_in = 5.0, r_out = 7.0, height = 2.5;
  const std::array<double, 4> area{2 * M_PI * r_in * height, 2 * M_PI * r_out * height,
                                   M_PI * (r_out * r_out - r_in * r_in),
                                   M_PI * (r_out * r_out - r_in * r_in)};
  std::discrete_distribution<int> surface(area.begin(), area.end());
  for (int i = 0; i < n_points; ++i) {
    const double a = 2 * M_PI * u(rng);
    const int k = surface(rng);
    if (k < 2) {
      const double r = k == 0 ? r_in : r_out;
      s.points.emplace_back(r * std::cos(a), r * std::sin(a), height * u(rng));
    } else {
      // Uniform over the annulus: radius with density proportional to r.
      const double r = std::sqrt(r_in * r_in + u(rng) * (r_out * r_out - r_in * r_in));
      s.points.emplace_back(r * std::cos(a), r * std::sin(a), k == 2 ? 0.0 : height);
    }
  }
  s.view.far = 6.0;
  for (int k = 0; k < n_frames; ++k) {
    const double t = 2 * M_PI * k / n_frames;
    const Vec3 c(6.0 * std::cos(t), 6.0 * std::sin(t), 1.2);
    const Vec3 f = heading_direction(t + M_PI / 2, 0.0);
    s.poses.emplace_back(1.0, look_rotation(f), c);
  }
}

inline void build_floor(Scene& s, std::mt19937_64& rng, int n_points, int n_frames) {
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int i = 0; i < n_points; ++i) s.points.emplace_back(u(rng), u(rng), 0.0);
  s.view.far = 8.0;
  for (int k = 0; k < n_frames; ++k) {
    const double t = -3.0 + 6.0 * k / std::max(1, n_frames - 1);
    const Vec3 c(t, 0.3 * std::sin(t), 2.0);
    s.poses.emplace_back(1.0, look_rotation(heading_direction(0.0, -55.0 * M_PI / 180.0)), c);
  }
}

}  // namespace oracle_detail

/// Deterministic scene. The trajectory is fixed by the layout; the seed only
/// moves the points.
inline Scene make_scene(uint64_t seed, int n_points, int n_frames, Layout layout) {
  if (n_points < 100) throw DegenerateConfiguration("make_scene needs at least 100 points");
  if (n_frames < 1) throw DegenerateConfiguration("make_scene needs at least one frame");
  Scene s;
  s.layout = layout;
  std::mt19937_64 rng(detail::derive_seed(seed, 0));
  switch (layout) {
    case Layout::Room: oracle_detail::build_room(s, rng, n_points, n_frames); break;
    case Layout::CorridorLoop: oracle_detail::build_corridor(s, rng, n_points, n_frames); break;
    case Layout::PlanarFloor: oracle_detail::build_floor(s, rng, n_points, n_frames); break;
  }
  for (const auto& pose : s.poses) s.visible.push_back(oracle_detail::visible_points(s.points, pose, s.view));
  return s;
}

enum class WarpKind { Identity, Sim3, SL4 };

inline const char* to_string(WarpKind k) {
  switch (k) {
    case WarpKind::Identity: return "identity";
    case WarpKind::Sim3: return "sim3";
    case WarpKind::SL4: return "sl4";
  }
  return "?";
}

inline WarpKind parse_warp_kind(const std::string& s) {
  if (s == "identity") return WarpKind::Identity;
  if (s == "sim3") return WarpKind::Sim3;
  if (s == "sl4") return WarpKind::SL4;
  throw FormatError("unknown warp kind '" + s + "'");
}

struct WarpModel {
  WarpKind kind = WarpKind::Identity;
  double magnitude = 0.0;  ///< bound on the tangent norm of the per-request warp
  double noise_sigma = 0.0;
  double outlier_fraction = 0.0;
  /// Norm of the similarity drift accumulated across one request (see
  /// OracleReconstructor). Zero disables drift.
  double drift_magnitude = 0.0;
  /// Whether the very first request is warped too. Off by default: the first
  /// submap fixes the global frame, and a projective warp there is invisible
  /// to any backend, so it would only blur the metrics.
  bool warp_first = false;
};

namespace oracle_detail {

template <int N>
Eigen::Matrix<double, N, 1> random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix<double, N, 1> v;
  for (int k = 0; k < N; ++k) v(k) = n(rng);
  return v.normalized();
}

inline Homography draw_warp(WarpKind kind, double magnitude, std::mt19937_64& rng) {
  if (kind == WarpKind::Identity || magnitude <= 0.0) return Homography();
  std::uniform_real_distribution<double> frac(0.5, 1.0);
  const double r = magnitude * frac(rng);
  if (kind == WarpKind::Sim3) return exp_sim3(r * random_direction<7>(rng)).to_homography();
  return exp_sl4(r * random_direction<15>(rng));
}

// Homogeneous scale a warp gives a point; the warp is redrawn when any
// visible point gets close to the plane at infinity.
inline constexpr double kMinWarpW = 0.1;

}  // namespace oracle_detail

/// Answers one request. `drift` is a similarity tangent: frame k of the
/// request (k = 0..n-1) gets the extra distortion Exp(k/(n-1) * drift), so
/// reconstructions are slightly inconsistent frame to frame, as real ones are.
inline Submap reconstruct(const Scene& scene, const ReconstructionRequest& request,
                          const WarpModel& warp, uint64_t seed, bool apply_warp = true,
                          const Sim3Tangent& drift = Sim3Tangent::Zero()) {
  if (request.frame_ids.empty()) throw EmptySubmap("empty reconstruction request");
  if (request.roles.size() != request.frame_ids.size())
    throw LengthMismatch("request frame ids and roles differ in length");
  for (int f : request.frame_ids)
    if (f < 0 || f >= static_cast<int>(scene.poses.size()))
      throw DegenerateConfiguration("request names unknown frame " + std::to_string(f));

  std::mt19937_64 rng(seed);
  const Sim3Transform first_from_world = scene.poses[static_cast<size_t>(request.frame_ids.front())].inverse();
  const size_t n = request.frame_ids.size();

  std::vector<Homography> frame_warps(n);
  for (int attempt = 0;; ++attempt) {
    const Homography h_w =
        apply_warp ? oracle_detail::draw_warp(warp.kind, warp.magnitude, rng) : Homography();
    bool ok = true;
    for (size_t k = 0; k < n && ok; ++k) {
      const double t = n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 0.0;
      frame_warps[k] = h_w * exp_sim3(t * drift).to_homography();
      for (int id : scene.visible[static_cast<size_t>(request.frame_ids[k])]) {
        const Vec3 x = first_from_world.apply(scene.points[static_cast<size_t>(id)]);
        if (frame_warps[k].matrix().row(3).dot(x.homogeneous()) < oracle_detail::kMinWarpW) {
          ok = false;
          break;
        }
      }
    }
    if (ok) break;
    if (attempt == 1000) throw DegenerateConfiguration("could not draw a warp keeping points finite");
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> inlier_conf(0.8, 1.2), outlier_conf(0.02, 0.08), u01(0.0, 1.0);
  Submap s;
  for (size_t k = 0; k < n; ++k) {
    const int fid = request.frame_ids[k];
    FrameEntry e;
    e.frame_id = fid;
    e.role = request.roles[k];
    const Sim3Transform cam_from_first = scene.poses[static_cast<size_t>(fid)].inverse() * first_from_world.inverse();
    e.camera = cam_from_first.matrix() * frame_warps[k].inverse().matrix();
    e.pixel_ids = scene.visible[static_cast<size_t>(fid)];
    for (int id : e.pixel_ids) {
      Vec3 p = frame_warps[k].apply(first_from_world.apply(scene.points[static_cast<size_t>(id)]));
      if (warp.noise_sigma > 0.0) p += warp.noise_sigma * Vec3(noise(rng), noise(rng), noise(rng));
      e.points.push_back(p);
      e.confidences.push_back(inlier_conf(rng));
    }
    // Gross outliers: a fixed share of the frame's points moved anywhere in
    // the frame's bounding box, with low confidence.
    const size_t m = e.points.size();
    const auto n_out = static_cast<size_t>(std::lround(warp.outlier_fraction * static_cast<double>(m)));
    if (n_out > 0) {
      Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
      for (const auto& p : e.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
      std::vector<size_t> order(m);
      std::iota(order.begin(), order.end(), size_t{0});
      for (size_t i = 0; i < n_out; ++i) {
        std::uniform_int_distribution<size_t> pick(i, m - 1);
        std::swap(order[i], order[pick(rng)]);
        const size_t j = order[i];
        e.points[j] = lo + Vec3(u01(rng), u01(rng), u01(rng)).cwiseProduct(hi - lo);
        e.confidences[j] = outlier_conf(rng);
      }
    }
    s.frames.push_back(std::move(e));
  }
  return s;
}

struct GroundTruth {
  std::vector<int> frame_ids;
  std::vector<Sim3Transform> poses;  ///< world-from-camera
  std::vector<int> point_ids;        ///< sorted union of visible points
  std::vector<Vec3> points;
};

inline GroundTruth ground_truth(const Scene& scene, std::span<const int> frame_ids) {
  GroundTruth gt;
  std::vector<char> seen(scene.points.size(), 0);
  for (int f : frame_ids) {
    if (f < 0 || f >= static_cast<int>(scene.poses.size()))
      throw DegenerateConfiguration("unknown frame " + std::to_string(f));
    gt.frame_ids.push_back(f);
    gt.poses.push_back(scene.poses[static_cast<size_t>(f)]);
    for (int id : scene.visible[static_cast<size_t>(f)]) seen[static_cast<size_t>(id)] = 1;
  }
  for (size_t i = 0; i < seen.size(); ++i)
    if (seen[i]) {
      gt.point_ids.push_back(static_cast<int>(i));
      gt.points.push_back(scene.points[i]);
    }
  return gt;
}

inline constexpr int kDescriptorDim = 256;

/// Frame stream for a scene. Disparity is synthesized from the baseline and
/// rotation relative to the previous frame (focal 500 px). Descriptors are
/// random Fourier features of camera position and heading, so nearby views
/// with similar headings score high cosine similarity.
inline std::vector<Frame> make_frame_stream(const Scene& scene, uint64_t seed) {
  constexpr double kFocal = 500.0;
  const size_t n = scene.poses.size();
  std::vector<double> steps;
  for (size_t k = 1; k < n; ++k)
    steps.push_back((scene.poses[k].translation() - scene.poses[k - 1].translation()).norm());
  double length_scale = 1.0;
  if (!steps.empty()) {
    std::nth_element(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2), steps.end());
    length_scale = std::max(3.0 * steps[steps.size() / 2], 1e-6);
  }
  constexpr double kHeadingScale = 1.0;  // radians

  std::mt19937_64 rng(detail::derive_seed(seed, 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2 * M_PI);
  Eigen::Matrix<double, kDescriptorDim, 5> w;
  Eigen::Matrix<double, kDescriptorDim, 1> b;
  for (int i = 0; i < kDescriptorDim; ++i) {
    for (int j = 0; j < 5; ++j) w(i, j) = gauss(rng);
    b(i) = phase(rng);
  }

  std::vector<Frame> frames;
  for (size_t k = 0; k < n; ++k) {
    Frame f;
    f.frame_id = static_cast<int>(k);
    if (k > 0) {
      const auto& prev = scene.poses[k - 1];
      const auto& cur = scene.poses[k];
      double depth = 0.0;
      const auto& vis = scene.visible[k];
      for (int id : vis) depth += (cur.inverse().apply(scene.points[static_cast<size_t>(id)])).z();
      depth = vis.empty() ? 1.0 : depth / static_cast<double>(vis.size());
      const double angle = Eigen::AngleAxisd(prev.rotation().transpose() * cur.rotation()).angle();
      f.disparity = kFocal * ((cur.translation() - prev.translation()).norm() / depth + angle);
    }
    const Vec3 axis = scene.poses[k].rotation().col(2);
    const double yaw = std::atan2(axis.y(), axis.x());
    Eigen::Matrix<double, 5, 1> z;
    z << scene.poses[k].translation() / length_scale, std::cos(yaw) / kHeadingScale,
        std::sin(yaw) / kHeadingScale;
    std::mt19937_64 frame_rng(detail::derive_seed(seed, 2 + k));
    f.descriptor.resize(kDescriptorDim);
    for (int i = 0; i < kDescriptorDim; ++i)
      f.descriptor(i) = std::cos(w.row(i).dot(z) + b(i)) + 0.05 * gauss(frame_rng);
    frames.push_back(std::move(f));
  }
  return frames;
}

/// Reconstructor backed by a scene. Request c is answered with seed
/// derive_seed(seed, 1000 + c). With drift enabled each request drifts along
/// a fixed similarity direction (systematic, like scale drift in monocular
/// SLAM) plus a smaller per-request jitter.
class OracleReconstructor final : public Reconstructor {
 public:
  OracleReconstructor(const Scene& scene, const WarpModel& warp, uint64_t seed)
      : scene_(&scene), warp_(warp), seed_(seed) {
    std::mt19937_64 rng(detail::derive_seed(seed, 0xD71F7));
    systematic_ = warp.drift_magnitude * oracle_detail::random_direction<7>(rng);
  }

  Submap reconstruct(const ReconstructionRequest& request) override {
    const uint64_t call = calls_++;
    const uint64_t s = detail::derive_seed(seed_, 1000 + call);
    Sim3Tangent drift = systematic_;
    if (warp_.drift_magnitude > 0.0) {
      std::mt19937_64 rng(detail::derive_seed(s, 7));
      drift += 0.3 * warp_.drift_magnitude * oracle_detail::random_direction<7>(rng);
    }
    Submap out = sl4slam::reconstruct(*scene_, request, warp_, s, call > 0 || warp_.warp_first, drift);
    out.submap_id = static_cast<int>(call);
    return out;
  }

  uint64_t calls() const { return calls_; }

 private:
  const Scene* scene_;
  WarpModel warp_;
  uint64_t seed_;
  Sim3Tangent systematic_ = Sim3Tangent::Zero();
  uint64_t calls_ = 0;
};

}  // namespace sl4slam
