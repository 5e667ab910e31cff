#pragma once

// Submap-based backend: keyframe gating, submap scheduling with one overlap
// frame, confidence filtering, alignment of consecutive submaps through the
// shared frame, descriptor-based loop closures, and a global pose graph over
// the submap transforms (SL(4), or Sim(3) as a baseline).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/factor_graph.hpp"
#include "sl4slam/projective_solver.hpp"
#include "sl4slam/sim3.hpp"
#include "sl4slam/sl4.hpp"
#include "sl4slam/submap.hpp"

namespace sl4slam {

enum class AlignMode { SL4, Sim3 };

inline const char* to_string(AlignMode m) { return m == AlignMode::SL4 ? "sl4" : "sim3"; }

inline AlignMode parse_align_mode(const std::string& s) {
  if (s == "sl4") return AlignMode::SL4;
  if (s == "sim3") return AlignMode::Sim3;
  throw FormatError("unknown mode '" + s + "' (expected sl4 or sim3)");
}

struct PipelineConfig {
  AlignMode mode = AlignMode::SL4;
  int w = 32;
  int w_loop = 1;
  double tau_disparity = 25.0;  ///< pixels
  int tau_interval = 2;         ///< submaps
  double tau_desc = 0.8;        ///< cosine similarity
  double tau_conf = 25.0;       ///< percent of the submap's mean confidence
  int ransac_iters = 300;  ///< cap; see ransac_confidence
  double ransac_thresh = 0.01;
  double ransac_confidence = 0.999;
  uint64_t seed = 0;
  bool loop_closure = true;
  LmConfig lm;
};

// ---------------------------------------------------------------- gating

/// Strict threshold; the first frame of a session is always a keyframe.
inline bool gate_keyframe(double disparity, double tau_disparity, bool first_frame) {
  return first_frame || disparity > tau_disparity;
}

/// Stream frames carry disparity against their predecessor; the gate sums it
/// since the last accepted keyframe.
class KeyframeGate {
 public:
  explicit KeyframeGate(double tau_disparity) : tau_(tau_disparity) {}

  bool push(const Frame& f) {
    if (!std::isfinite(f.disparity) || f.disparity < 0.0)
      throw FormatError("frame " + std::to_string(f.frame_id) + " has invalid disparity");
    accumulated_ = first_ ? 0.0 : accumulated_ + f.disparity;
    const bool key = gate_keyframe(accumulated_, tau_, first_);
    first_ = false;
    if (key) accumulated_ = 0.0;
    return key;
  }

 private:
  double tau_;
  double accumulated_ = 0.0;
  bool first_ = true;
};

// ---------------------------------------------------------------- scheduling

/// Prior overlap frame first, then the new keyframes, then at most `w_loop`
/// loop frames.
inline ReconstructionRequest schedule_submap(std::span<const int> keyframes, std::optional<int> prior,
                                             std::span<const int> loop_frames, int w_loop) {
  ReconstructionRequest r;
  if (prior) {
    r.frame_ids.push_back(*prior);
    r.roles.push_back(FrameRole::PriorOverlap);
  }
  for (int f : keyframes) {
    r.frame_ids.push_back(f);
    r.roles.push_back(FrameRole::Regular);
  }
  const size_t n_loop = std::min(loop_frames.size(), static_cast<size_t>(std::max(0, w_loop)));
  for (size_t k = 0; k < n_loop; ++k) {
    r.frame_ids.push_back(loop_frames[k]);
    r.roles.push_back(FrameRole::Loop);
  }
  return r;
}

// ---------------------------------------------------------------- filtering

/// Drops points whose confidence is below tau_percent of the submap's mean
/// confidence (over all its frames). Pixel ids are pruned alongside.
inline Submap filter_confidence(const Submap& s, double tau_percent) {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& f : s.frames) {
    for (double c : f.confidences) sum += c;
    n += f.confidences.size();
  }
  if (n == 0) throw EmptySubmap("submap " + std::to_string(s.submap_id) + " has no points");
  const double cutoff = tau_percent / 100.0 * (sum / static_cast<double>(n));

  Submap out;
  out.submap_id = s.submap_id;
  size_t kept = 0;
  for (const auto& f : s.frames) {
    FrameEntry g;
    g.frame_id = f.frame_id;
    g.role = f.role;
    g.camera = f.camera;
    for (size_t i = 0; i < f.points.size(); ++i) {
      if (f.confidences[i] < cutoff) continue;
      g.pixel_ids.push_back(f.pixel_ids[i]);
      g.points.push_back(f.points[i]);
      g.confidences.push_back(f.confidences[i]);
    }
    kept += g.points.size();
    out.frames.push_back(std::move(g));
  }
  if (kept == 0)
    throw EmptySubmap("confidence filter removed every point of submap " + std::to_string(s.submap_id));
  return out;
}

// ---------------------------------------------------------------- correspondences

/// Zips the shared frame's points by pixel id: a from the older submap, b
/// from the newer, so the fitted transform maps new to old.
inline std::vector<Correspondence> shared_frame_correspondences(const Submap& s_new, const Submap& s_old,
                                                                int frame_id) {
  const FrameEntry* fn = s_new.find(frame_id);
  const FrameEntry* fo = s_old.find(frame_id, FrameRole::Regular);
  if (!fo) fo = s_old.find(frame_id);
  if (!fn || !fo)
    throw NoSharedFrame("frame " + std::to_string(frame_id) + " not in both submaps " +
                        std::to_string(s_old.submap_id) + " and " + std::to_string(s_new.submap_id));
  std::vector<Correspondence> out;
  size_t i = 0, j = 0;
  while (i < fo->pixel_ids.size() && j < fn->pixel_ids.size()) {
    if (fo->pixel_ids[i] < fn->pixel_ids[j]) {
      ++i;
    } else if (fn->pixel_ids[j] < fo->pixel_ids[i]) {
      ++j;
    } else {
      out.push_back({fo->points[i], fn->points[j]});
      ++i;
      ++j;
    }
  }
  if (out.size() < 5)
    throw TooFewPoints("only " + std::to_string(out.size()) + " jointly surviving points in frame " +
                       std::to_string(frame_id));
  return out;
}

// ---------------------------------------------------------------- loop closure

inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw LengthMismatch("descriptor dimensions differ");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

struct HistoryFrame {
  Frame frame;
  int submap_id = 0;
};

struct LoopCandidate {
  int frame_id = 0;
  int submap_id = 0;
  double similarity = 0.0;
};

/// Best-matching earlier frames for the current keyframes. Only submaps with
/// index <= latest - tau_interval are searched; a history frame scores its
/// best similarity against any current keyframe.
inline std::vector<LoopCandidate> retrieve_loop_candidates(std::span<const Frame> current,
                                                           std::span<const HistoryFrame> history,
                                                           int latest, double tau_desc, int tau_interval,
                                                           int w_loop) {
  std::vector<LoopCandidate> found;
  for (const auto& h : history) {
    if (h.submap_id > latest - tau_interval) continue;
    double best = -1.0;
    for (const auto& f : current) best = std::max(best, cosine_similarity(f.descriptor, h.frame.descriptor));
    if (best > tau_desc) found.push_back({h.frame.frame_id, h.submap_id, best});
  }
  std::sort(found.begin(), found.end(), [](const LoopCandidate& a, const LoopCandidate& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.frame_id < b.frame_id;
  });
  if (found.size() > static_cast<size_t>(std::max(0, w_loop))) found.resize(static_cast<size_t>(std::max(0, w_loop)));
  return found;
}

// ---------------------------------------------------------------- alignment

/// One relative measurement: `measured` maps submap j's frame into submap i's.
struct Edge {
  int i = 0;
  int j = 0;
  int frame_id = 0;
  bool loop = false;
  Homography measured;
  Sim3Transform measured_sim3;
  size_t correspondences = 0;
  size_t inliers = 0;
};

/// Projective alignment of s_new onto s_old through a shared frame.
inline Edge align_sl4(const Submap& s_old, const Submap& s_new, int frame_id, const PipelineConfig& cfg,
                      uint64_t seed) {
  const auto corrs = shared_frame_correspondences(s_new, s_old, frame_id);
  const RansacResult r = ransac_homography(corrs, cfg.ransac_iters, cfg.ransac_thresh, seed, cfg.ransac_confidence);
  Edge e;
  e.i = s_old.submap_id;
  e.j = s_new.submap_id;
  e.frame_id = frame_id;
  e.measured = r.h;
  e.correspondences = corrs.size();
  e.inliers = r.inlier_count;
  return e;
}

/// Similarity alignment: rotation and translation from the two camera
/// estimates of the shared frame, scale from the points seen in that frame
/// (median ratio in camera coordinates).
inline Edge align_sim3(const Submap& s_old, const Submap& s_new, int frame_id) {
  const auto corrs = shared_frame_correspondences(s_new, s_old, frame_id);
  const FrameEntry* fn = s_new.find(frame_id);
  const FrameEntry* fo = s_old.find(frame_id, FrameRole::Regular);
  if (!fo) fo = s_old.find(frame_id);
  const Sim3Transform cam_old = nearest_similarity(fo->camera);
  const Sim3Transform cam_new = nearest_similarity(fn->camera);
  std::vector<Vec3> y_old, y_new;
  for (const auto& c : corrs) {
    y_old.push_back(cam_old.apply(c.a));
    y_new.push_back(cam_new.apply(c.b));
  }
  const Sim3Transform s = estimate_sim3(y_new, y_old, Sim3Transform::identity());
  Edge e;
  e.i = s_old.submap_id;
  e.j = s_new.submap_id;
  e.frame_id = frame_id;
  e.measured_sim3 = cam_old.inverse() * s * cam_new;
  e.measured = e.measured_sim3.to_homography();
  e.correspondences = corrs.size();
  e.inliers = corrs.size();
  return e;
}

// ---------------------------------------------------------------- global map

struct CameraEstimate {
  int frame_id = 0;
  int submap_id = 0;
  FrameRole role = FrameRole::Regular;
  Mat4 camera = Mat4::Identity();  ///< camera-from-global
  Vec3 center = Vec3::Zero();      ///< camera center in the global frame
  bool similarity = true;          ///< camera is a similarity, `pose` is valid
  Sim3Transform pose;              ///< global-from-camera when `similarity`
};

inline constexpr double kSimilarityTolerance = 1e-2;

/// Cameras of a submap after its points move by h_abs. Points transform as
/// X -> h_abs X, so camera-from-submap matrices become P h_abs^-1, which keeps
/// every incidence P X unchanged.
inline std::vector<CameraEstimate> correct_cameras(const Submap& s, const Homography& h_abs) {
  std::vector<CameraEstimate> out;
  const Mat4 h_inv = h_abs.inverse().matrix();
  for (const auto& f : s.frames) {
    CameraEstimate c;
    c.frame_id = f.frame_id;
    c.submap_id = s.submap_id;
    c.role = f.role;
    c.camera = f.camera * h_inv;
    const Vec4 center = h_abs.matrix() * f.camera.partialPivLu().solve(Vec4::UnitW());
    c.center = center.head<3>() / center(3);
    c.similarity = std::abs(center(3)) > 1e-12 && is_similarity(c.camera, kSimilarityTolerance);
    if (c.similarity) c.pose = nearest_similarity(c.camera).inverse();
    out.push_back(c);
  }
  return out;
}

struct GlobalMap {
  std::vector<Homography> absolute;  ///< per submap, global-from-submap
  std::vector<Vec3> points;
  std::vector<int> provenance;       ///< submap id of each point
  std::vector<CameraEstimate> cameras;
  size_t dropped_points = 0;         ///< points sent to infinity by their transform

  /// One camera per keyframe: the estimate from the submap where the frame
  /// was a regular member, in frame order.
  std::vector<CameraEstimate> trajectory() const {
    std::vector<CameraEstimate> t;
    for (const auto& c : cameras)
      if (c.role == FrameRole::Regular) t.push_back(c);
    std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) { return a.frame_id < b.frame_id; });
    return t;
  }
};

inline GlobalMap compose_global_map(std::span<const Submap> submaps, std::vector<Homography> absolute) {
  GlobalMap g;
  g.absolute = std::move(absolute);
  for (size_t k = 0; k < submaps.size(); ++k) {
    const Homography& h = g.absolute[k];
    for (const auto& f : submaps[k].frames)
      for (const auto& p : f.points) {
        const Vec4 q = h.matrix() * p.homogeneous();
        if (std::abs(q(3)) <= 1e-12) {
          ++g.dropped_points;
          continue;
        }
        g.points.push_back(q.head<3>() / q(3));
        g.provenance.push_back(submaps[k].submap_id);
      }
    const auto cams = correct_cameras(submaps[k], h);
    g.cameras.insert(g.cameras.end(), cams.begin(), cams.end());
  }
  return g;
}

namespace detail {

inline void check_connected(size_t n, std::span<const Edge> edges) {
  std::vector<std::vector<int>> adj(n);
  for (const auto& e : edges) {
    adj[static_cast<size_t>(e.i)].push_back(e.j);
    adj[static_cast<size_t>(e.j)].push_back(e.i);
  }
  std::vector<char> seen(n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int u : adj[static_cast<size_t>(v)])
      if (!seen[static_cast<size_t>(u)]) {
        seen[static_cast<size_t>(u)] = 1;
        q.push(u);
      }
  }
  for (size_t k = 0; k < n; ++k)
    if (!seen[k]) throw DisconnectedGraph("submap " + std::to_string(k) + " is not connected to submap 0");
}

// Initial values by chaining sequential edges from submap 0.
template <class G>
GraphValues<G> chain_init(size_t n, std::span<const Edge> edges, const G& (*pick)(const Edge&)) {
  using T = LieGroupTraits<G>;
  GraphValues<G> v;
  v[0] = T::identity();
  for (const auto& e : edges)
    if (!e.loop && e.j == e.i + 1 && v.count(static_cast<VariableId>(e.i)))
      v[static_cast<VariableId>(e.j)] = T::compose(v[static_cast<VariableId>(e.i)], pick(e));
  for (size_t k = 0; k < n; ++k)
    if (!v.count(k)) v[k] = T::identity();
  return v;
}

inline const Homography& pick_sl4(const Edge& e) { return e.measured; }
inline const Sim3Transform& pick_sim3(const Edge& e) { return e.measured_sim3; }

}  // namespace detail

struct SolveResult {
  std::vector<Homography> absolute;
  OptimizationReport report;
};

/// Anchors submap 0 at identity and optimizes the relative measurements.
inline SolveResult solve_submap_graph(size_t n_submaps, std::span<const Edge> edges, AlignMode mode,
                                      const LmConfig& lm = {}) {
  if (n_submaps == 0) throw EmptySubmap("no submaps to solve for");
  for (const auto& e : edges)
    if (e.i < 0 || e.j < 0 || static_cast<size_t>(e.i) >= n_submaps || static_cast<size_t>(e.j) >= n_submaps)
      throw InvalidFactor("edge names a submap that does not exist");
  detail::check_connected(n_submaps, edges);

  SolveResult out;
  if (mode == AlignMode::SL4) {
    FactorGraph<Homography> graph;
    for (const auto& e : edges) graph.add_between(e.i, e.j, e.measured);
    graph.add_prior(0, Homography());
    const auto res = optimize_lm(graph, detail::chain_init<Homography>(n_submaps, edges, &detail::pick_sl4), lm);
    for (const auto& [id, h] : res.values) out.absolute.push_back(h);
    out.report = res.report;
  } else {
    FactorGraph<Sim3Transform> graph;
    for (const auto& e : edges) graph.add_between(e.i, e.j, e.measured_sim3);
    graph.add_prior(0, Sim3Transform::identity());
    const auto res =
        optimize_lm(graph, detail::chain_init<Sim3Transform>(n_submaps, edges, &detail::pick_sim3), lm);
    for (const auto& [id, s] : res.values) out.absolute.push_back(s.to_homography());
    out.report = res.report;
  }
  return out;
}

// ---------------------------------------------------------------- driver

struct PipelineResult {
  GlobalMap map;
  std::vector<Submap> submaps;  ///< after confidence filtering
  std::vector<Edge> edges;
  OptimizationReport report;
  std::vector<int> keyframes;
  std::vector<std::string> warnings;
};

namespace detail {

inline Edge align(const Submap& s_old, const Submap& s_new, int frame_id, const PipelineConfig& cfg,
                  uint64_t seed) {
  return cfg.mode == AlignMode::SL4 ? align_sl4(s_old, s_new, frame_id, cfg, seed)
                                    : align_sim3(s_old, s_new, frame_id);
}

}  // namespace detail

/// Runs the full backend over a frame stream.
inline PipelineResult run_pipeline(std::span<const Frame> stream, Reconstructor& reconstructor,
                                   const PipelineConfig& cfg) {
  if (cfg.w < 1) throw DegenerateConfiguration("w must be at least 1");
  for (size_t k = 1; k < stream.size(); ++k)
    if (stream[k].frame_id <= stream[k - 1].frame_id)
      throw FormatError("frame ids must be strictly increasing");

  PipelineResult out;
  KeyframeGate gate(cfg.tau_disparity);
  std::vector<Frame> buffer;
  std::vector<HistoryFrame> history;
  std::optional<int> prior;
  uint64_t edge_counter = 0;

  auto process = [&]() {
    const int index = static_cast<int>(out.submaps.size());
    std::vector<int> ids;
    for (const auto& f : buffer) ids.push_back(f.frame_id);

    std::vector<LoopCandidate> loops;
    if (cfg.loop_closure)
      loops = retrieve_loop_candidates(buffer, history, index, cfg.tau_desc, cfg.tau_interval, cfg.w_loop);
    std::vector<int> loop_ids;
    for (const auto& l : loops) loop_ids.push_back(l.frame_id);

    Submap raw = reconstructor.reconstruct(schedule_submap(ids, prior, loop_ids, cfg.w_loop));
    raw.submap_id = index;
    validate(raw);
    Submap s;
    try {
      s = filter_confidence(raw, cfg.tau_conf);
    } catch (const EmptySubmap& e) {
      throw AlignmentFailure(std::string("submap ") + std::to_string(index) + ": " + e.what());
    }

    if (prior) {
      try {
        out.edges.push_back(
            detail::align(out.submaps.back(), s, *prior, cfg, detail::derive_seed(cfg.seed, edge_counter++)));
      } catch (const Error& e) {
        throw AlignmentFailure("sequential alignment " + std::to_string(index - 1) + " -> " +
                               std::to_string(index) + " via frame " + std::to_string(*prior) +
                               " failed: " + e.what());
      }
    }
    for (const auto& l : loops) {
      try {
        Edge e = detail::align(out.submaps[static_cast<size_t>(l.submap_id)], s, l.frame_id, cfg,
                               detail::derive_seed(cfg.seed, edge_counter++));
        e.loop = true;
        out.edges.push_back(e);
      } catch (const Error& e) {
        out.warnings.push_back("loop closure " + std::to_string(l.submap_id) + " -> " + std::to_string(index) +
                               " via frame " + std::to_string(l.frame_id) + " skipped: " + e.what());
      }
    }

    for (const auto& f : buffer) history.push_back({f, index});
    prior = buffer.back().frame_id;
    out.submaps.push_back(std::move(s));
    buffer.clear();
  };

  for (const auto& f : stream) {
    if (!gate.push(f)) continue;
    out.keyframes.push_back(f.frame_id);
    buffer.push_back(f);
    if (static_cast<int>(buffer.size()) == cfg.w) process();
  }
  if (!buffer.empty()) process();
  if (out.submaps.empty()) throw EmptySubmap("the stream produced no keyframes");

  SolveResult solved = solve_submap_graph(out.submaps.size(), out.edges, cfg.mode, cfg.lm);
  out.report = solved.report;
  if (out.report.status != LmStatus::Converged)
    out.warnings.push_back(std::string("optimizer stopped: ") + to_string(out.report.status));
  out.map = compose_global_map(out.submaps, std::move(solved.absolute));
  return out;
}

}  // namespace sl4slam
