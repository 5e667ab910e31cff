#pragma once

// Scoring a pipeline run against a synthetic scene, and a one-call driver for
// oracle sessions used by the tests, the acceptance suite and the CLI.

#include <optional>
#include <vector>

#include "sl4slam/metrics.hpp"
#include "sl4slam/pipeline.hpp"
#include "sl4slam/synthetic_oracle.hpp"

namespace sl4slam {

struct RunScore {
  AteReport ate;
  ReconReport recon;
  size_t submaps = 0;
  size_t loop_edges = 0;
};

/// ATE over keyframe camera centers, then (optionally, it is the slow part)
/// map metrics with the estimated cloud moved by the ATE alignment against the
/// points the keyframes see.
inline RunScore score_run(const Scene& scene, const PipelineResult& run, AteAlignment align = AteAlignment::Sim3,
                          bool map_metrics = true, std::optional<double> trim_percentile = std::nullopt) {
  std::vector<Vec3> est, gt;
  std::vector<int> ids;
  for (const auto& c : run.map.trajectory()) {
    est.push_back(c.center);
    gt.push_back(scene.poses[static_cast<size_t>(c.frame_id)].translation());
    ids.push_back(c.frame_id);
  }
  RunScore s;
  s.ate = ate_rmse(est, gt, align);
  if (map_metrics) {
    std::vector<Vec3> cloud;
    cloud.reserve(run.map.points.size());
    for (const auto& p : run.map.points) cloud.push_back(s.ate.alignment.apply(p));
    s.recon = recon_metrics(cloud, ground_truth(scene, ids).points, trim_percentile);
  }
  s.submaps = run.submaps.size();
  for (const auto& e : run.edges) s.loop_edges += e.loop ? 1 : 0;
  return s;
}

struct OracleSession {
  Layout layout = Layout::Room;
  int n_points = 3000;
  int n_frames = 48;
  uint64_t seed = 0;  ///< scene, stream and reconstructor all derive from it
  WarpModel warp;
};

struct SessionOutcome {
  Scene scene;
  PipelineResult run;
  RunScore score;
};

inline SessionOutcome run_oracle_session(const OracleSession& session, const PipelineConfig& cfg,
                                         AteAlignment align = AteAlignment::Sim3, bool map_metrics = true) {
  SessionOutcome out;
  out.scene = make_scene(session.seed, session.n_points, session.n_frames, session.layout);
  const auto stream = make_frame_stream(out.scene, session.seed);
  OracleReconstructor reconstructor(out.scene, session.warp, session.seed);
  out.run = run_pipeline(stream, reconstructor, cfg);
  out.score = score_run(out.scene, out.run, align, map_metrics);
  return out;
}

}  // namespace sl4slam
