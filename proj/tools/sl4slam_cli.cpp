// sl4slam: generate oracle sessions, run the backend, score and export.
//
//   sl4slam synth --out S --layout corridor_loop --warp sl4 --magnitude 0.1
//   sl4slam run --session S --out R --mode sl4 --w 32
//   sl4slam eval --session S --run R
//   sl4slam export --run R --ply map_ascii.ply --ascii
//
// A session directory holds manifest.txt (key=value), frames.txt, ground truth
// (groundtruth.tum, groundtruth.ply) and, when materialized, submaps/*.smap.
// Pipeline parameters in the manifest are defaults; run flags override them.
// eval scores ATE on keyframe camera centers from cameras.txt, which exist for
// projective cameras too; trajectory.tum only lists similarity cameras.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>

#include "sl4slam/evaluation.hpp"
#include "sl4slam/io.hpp"
#include "sl4slam/metrics.hpp"
#include "sl4slam/pipeline.hpp"
#include "sl4slam/synthetic_oracle.hpp"

namespace fs = std::filesystem;
using namespace sl4slam;

namespace {

// Pipeline flags shared by synth (written to the manifest) and run.
struct PipelineFlags {
  std::string mode = "sl4";
  int w = 32;
  int w_loop = 1;
  double tau_conf = 25.0;
  double tau_desc = 0.8;
  int tau_interval = 2;
  double tau_disparity = 25.0;
  int ransac_iters = 300;
  double ransac_thresh = 0.01;
  uint64_t seed = 0;
  bool no_loop_closure = false;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App& app) {
    opts["mode"] = app.add_option("--mode", mode, "sl4 or sim3")->check(CLI::IsMember({"sl4", "sim3"}));
    opts["w"] = app.add_option("--w", w, "keyframes per submap")->check(CLI::PositiveNumber);
    opts["w_loop"] = app.add_option("--w-loop", w_loop, "loop frames appended per submap")->check(CLI::NonNegativeNumber);
    opts["tau_conf"] = app.add_option("--tau-conf", tau_conf, "confidence cutoff, percent of the submap mean");
    opts["tau_desc"] = app.add_option("--tau-desc", tau_desc, "descriptor similarity threshold");
    opts["tau_interval"] = app.add_option("--tau-interval", tau_interval, "submaps skipped before loop search");
    opts["tau_disparity"] = app.add_option("--tau-disparity", tau_disparity, "keyframe disparity, pixels");
    opts["ransac_iters"] = app.add_option("--ransac-iters", ransac_iters, "RANSAC iteration cap")->check(CLI::PositiveNumber);
    opts["ransac_thresh"] = app.add_option("--ransac-thresh", ransac_thresh, "inlier threshold, normalized frame");
    opts["seed"] = app.add_option("--seed", seed, "RANSAC seed");
    opts["loop_closure"] = app.add_flag("--no-loop-closure", no_loop_closure, "disable loop closures");
  }

  bool given(const std::string& key) const { return opts.at(key)->count() > 0; }

  // Manifest values fill every flag not given on the command line.
  void fill_from(const std::map<std::string, std::string>& m) {
    auto take = [&](const std::string& key, auto& field) {
      const auto it = m.find(key);
      if (it == m.end() || given(key)) return;
      std::istringstream is(it->second);
      if (!(is >> field)) throw FormatError("manifest: bad value for " + key + ": " + it->second);
    };
    take("mode", mode);
    take("w", w);
    take("w_loop", w_loop);
    take("tau_conf", tau_conf);
    take("tau_desc", tau_desc);
    take("tau_interval", tau_interval);
    take("tau_disparity", tau_disparity);
    take("ransac_iters", ransac_iters);
    take("ransac_thresh", ransac_thresh);
    take("seed", seed);
    if (!given("loop_closure") && m.count("loop_closure")) no_loop_closure = m.at("loop_closure") == "0";
  }

  PipelineConfig config() const {
    PipelineConfig c;
    c.mode = parse_align_mode(mode);
    c.w = w;
    c.w_loop = w_loop;
    c.tau_conf = tau_conf;
    c.tau_desc = tau_desc;
    c.tau_interval = tau_interval;
    c.tau_disparity = tau_disparity;
    c.ransac_iters = ransac_iters;
    c.ransac_thresh = ransac_thresh;
    c.seed = seed;
    c.loop_closure = !no_loop_closure;
    return c;
  }

  io::KeyValues key_values() const {
    return {{"mode", mode},
            {"w", std::to_string(w)},
            {"w_loop", std::to_string(w_loop)},
            {"tau_conf", io::format_double(tau_conf)},
            {"tau_desc", io::format_double(tau_desc)},
            {"tau_interval", std::to_string(tau_interval)},
            {"tau_disparity", io::format_double(tau_disparity)},
            {"ransac_iters", std::to_string(ransac_iters)},
            {"ransac_thresh", io::format_double(ransac_thresh)},
            {"seed", std::to_string(seed)},
            {"loop_closure", no_loop_closure ? "0" : "1"}};
  }
};

struct SynthFlags {
  fs::path out;
  std::string layout = "room";
  int n_points = 3000;
  int n_frames = 48;
  std::string warp = "sl4";
  double magnitude = 0.2;
  double noise = 1e-4;
  double outliers = 0.05;
  double drift = 0.0;
  bool warp_first = false;
  uint64_t scene_seed = 0;
  bool materialize = false;
};

const std::string& require(const std::map<std::string, std::string>& m, const std::string& key) {
  const auto it = m.find(key);
  if (it == m.end()) throw FormatError("manifest: missing key " + key);
  return it->second;
}

template <class T>
T parse_value(const std::map<std::string, std::string>& m, const std::string& key) {
  std::istringstream is(require(m, key));
  T v;
  if (!(is >> v)) throw FormatError("manifest: bad value for " + key);
  return v;
}

OracleSession oracle_from_manifest(const std::map<std::string, std::string>& m) {
  OracleSession s;
  s.layout = parse_layout(require(m, "layout"));
  s.n_points = parse_value<int>(m, "n_points");
  s.n_frames = parse_value<int>(m, "n_frames");
  s.seed = parse_value<uint64_t>(m, "scene_seed");
  s.warp.kind = parse_warp_kind(require(m, "warp"));
  s.warp.magnitude = parse_value<double>(m, "warp_magnitude");
  s.warp.noise_sigma = parse_value<double>(m, "noise_sigma");
  s.warp.outlier_fraction = parse_value<double>(m, "outlier_fraction");
  s.warp.drift_magnitude = parse_value<double>(m, "drift_magnitude");
  s.warp.warp_first = parse_value<int>(m, "warp_first") != 0;
  return s;
}

io::TumPose tum_pose(double timestamp, const Sim3Transform& world_from_cam) {
  return {timestamp, world_from_cam.translation(), Eigen::Quaterniond(world_from_cam.rotation())};
}

int cmd_synth(const SynthFlags& f, const PipelineFlags& p) {
  OracleSession s;
  s.layout = parse_layout(f.layout);
  s.n_points = f.n_points;
  s.n_frames = f.n_frames;
  s.seed = f.scene_seed;
  s.warp = WarpModel{parse_warp_kind(f.warp), f.magnitude, f.noise, f.outliers, f.drift, f.warp_first};

  const Scene scene = make_scene(s.seed, s.n_points, s.n_frames, s.layout);
  const auto stream = make_frame_stream(scene, s.seed);
  fs::create_directories(f.out);

  io::KeyValues manifest{{"reconstructor", f.materialize ? "directory" : "oracle"},
                         {"layout", to_string(s.layout)},
                         {"n_points", std::to_string(s.n_points)},
                         {"n_frames", std::to_string(s.n_frames)},
                         {"scene_seed", std::to_string(s.seed)},
                         {"warp", to_string(s.warp.kind)},
                         {"warp_magnitude", io::format_double(s.warp.magnitude)},
                         {"noise_sigma", io::format_double(s.warp.noise_sigma)},
                         {"outlier_fraction", io::format_double(s.warp.outlier_fraction)},
                         {"drift_magnitude", io::format_double(s.warp.drift_magnitude)},
                         {"warp_first", s.warp.warp_first ? "1" : "0"}};
  for (auto& kv : p.key_values()) manifest.push_back(kv);
  io::write_key_values(f.out / "manifest.txt", manifest);
  io::write_frames(f.out / "frames.txt", stream);

  std::vector<io::TumPose> gt;
  for (size_t k = 0; k < scene.poses.size(); ++k) gt.push_back(tum_pose(static_cast<double>(k), scene.poses[k]));
  io::write_tum(f.out / "groundtruth.tum", gt);
  std::vector<int> all(scene.poses.size());
  std::iota(all.begin(), all.end(), 0);
  io::write_ply(f.out / "groundtruth.ply", io::PointCloud{ground_truth(scene, all).points, {}});

  if (f.materialize) {
    // Answer the requests this configuration will make and store them, so the
    // session no longer depends on the oracle.
    OracleReconstructor oracle(scene, s.warp, s.seed);
    io::RecordingReconstructor recorder(oracle, f.out / "submaps");
    run_pipeline(stream, recorder, p.config());
  }
  std::cout << "wrote session " << f.out.string() << " (" << stream.size() << " frames)\n";
  return 0;
}

int cmd_run(const fs::path& session, const fs::path& out, PipelineFlags& p, bool dump_graph) {
  const auto manifest = io::read_key_values(session / "manifest.txt");
  p.fill_from(manifest);
  const PipelineConfig cfg = p.config();
  const auto stream = io::read_frames(session / "frames.txt");

  std::unique_ptr<Reconstructor> reconstructor;
  std::optional<Scene> scene;
  const std::string kind = require(manifest, "reconstructor");
  if (kind == "oracle") {
    const OracleSession s = oracle_from_manifest(manifest);
    scene = make_scene(s.seed, s.n_points, s.n_frames, s.layout);
    reconstructor = std::make_unique<OracleReconstructor>(*scene, s.warp, s.seed);
  } else if (kind == "directory") {
    reconstructor = std::make_unique<io::DirectoryReconstructor>(session / "submaps");
  } else {
    throw FormatError("manifest: unknown reconstructor " + kind);
  }

  const PipelineResult result = run_pipeline(stream, *reconstructor, cfg);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  fs::create_directories(out);
  io::PointCloud cloud;
  cloud.points = result.map.points;
  for (int id : result.map.provenance) cloud.colors.push_back(io::provenance_color(id));
  io::write_ply(out / "map.ply", cloud);

  std::vector<io::TumPose> traj;
  std::vector<int> omitted;
  for (const auto& c : result.map.trajectory()) {
    if (!c.similarity) {
      omitted.push_back(c.frame_id);
      continue;
    }
    traj.push_back(tum_pose(static_cast<double>(c.frame_id), c.pose));
  }
  io::write_tum(out / "trajectory.tum", traj);
  if (!omitted.empty()) {
    std::cerr << "warning: " << omitted.size() << " frames have projective cameras and are omitted from "
              << "trajectory.tum (their centers are in cameras.txt):";
    for (size_t k = 0; k < std::min<size_t>(omitted.size(), 8); ++k) std::cerr << ' ' << omitted[k];
    std::cerr << (omitted.size() > 8 ? " ...\n" : "\n");
  }

  {
    std::ofstream os(out / "cameras.txt");
    os << "# frame_id submap_id role similarity cx cy cz P(row-major, camera-from-global)\n"
       << std::setprecision(17);
    for (const auto& c : result.map.cameras) {
      os << c.frame_id << ' ' << c.submap_id << ' ' << to_string(c.role) << ' ' << (c.similarity ? 1 : 0) << ' '
         << c.center.x() << ' ' << c.center.y() << ' ' << c.center.z();
      for (int r = 0; r < 4; ++r)
        for (int k = 0; k < 4; ++k) os << ' ' << c.camera(r, k);
      os << '\n';
    }
    if (!os) throw FormatError("failed writing cameras.txt");
  }

  size_t loops = 0;
  for (const auto& e : result.edges) loops += e.loop ? 1 : 0;
  io::KeyValues summary{{"mode", to_string(cfg.mode)},
                        {"keyframes", std::to_string(result.keyframes.size())},
                        {"submaps", std::to_string(result.submaps.size())},
                        {"edges", std::to_string(result.edges.size())},
                        {"loop_edges", std::to_string(loops)},
                        {"lm_iterations", std::to_string(result.report.iterations)},
                        {"lm_status", to_string(result.report.status)},
                        {"initial_cost", io::format_double(result.report.initial_cost)},
                        {"final_cost", io::format_double(result.report.final_cost)},
                        {"points", std::to_string(result.map.points.size())},
                        {"dropped_points", std::to_string(result.map.dropped_points)},
                        {"trajectory_frames", std::to_string(traj.size())},
                        {"omitted_frames", std::to_string(omitted.size())},
                        {"warnings", std::to_string(result.warnings.size())}};
  io::write_key_values(out / "run.txt", summary);

  if (dump_graph) {
    std::ofstream os(out / "graph.txt");
    os << std::setprecision(17);
    for (size_t k = 0; k < result.map.absolute.size(); ++k) {
      os << "submap " << k;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) os << ' ' << result.map.absolute[k](r, c);
      os << '\n';
    }
    for (const auto& e : result.edges) {
      os << (e.loop ? "loop " : "seq ") << e.i << ' ' << e.j << " frame " << e.frame_id << " inliers " << e.inliers
         << '/' << e.correspondences;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) os << ' ' << e.measured(r, c);
      os << '\n';
    }
  }
  std::cout << "run: " << result.submaps.size() << " submaps, " << result.edges.size() << " edges (" << loops
            << " loop), " << result.map.points.size() << " points -> " << out.string() << "\n";
  return 0;
}

// Keyframe camera centers (regular role) from cameras.txt, keyed by frame id.
std::vector<std::pair<int, Vec3>> read_centers(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  std::vector<std::pair<int, Vec3>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int frame_id, submap_id, similarity;
    std::string role;
    Vec3 c;
    if (!(ls >> frame_id >> submap_id >> role >> similarity >> c.x() >> c.y() >> c.z()))
      throw FormatError(path.string() + ": malformed camera line");
    if (role == to_string(FrameRole::Regular)) out.emplace_back(frame_id, c);
  }
  return out;
}

int cmd_eval(const fs::path& session, const fs::path& run, const std::string& align,
             std::optional<double> trim, bool from_tum, fs::path out) {
  const auto gt_traj = io::read_tum(session / "groundtruth.tum");
  std::map<double, Vec3> gt_by_time;
  for (const auto& p : gt_traj) gt_by_time[p.timestamp] = p.t;
  std::vector<std::pair<double, Vec3>> est_traj;
  if (from_tum) {
    for (const auto& p : io::read_tum(run / "trajectory.tum")) est_traj.emplace_back(p.timestamp, p.t);
  } else {
    for (const auto& [id, c] : read_centers(run / "cameras.txt")) est_traj.emplace_back(id, c);
  }
  std::vector<Vec3> est, gt;
  for (const auto& [t, p] : est_traj) {
    const auto it = gt_by_time.find(t);
    if (it == gt_by_time.end())
      throw LengthMismatch("no ground-truth pose for timestamp " + io::format_double(t));
    est.push_back(p);
    gt.push_back(it->second);
  }
  if (est.size() < 3) throw DegenerateConfiguration("need at least 3 matched poses to evaluate");
  const AteReport ate = ate_rmse(est, gt, parse_ate_alignment(align));

  const auto est_cloud = io::read_ply(run / "map.ply");
  const auto gt_cloud = io::read_ply(session / "groundtruth.ply");
  std::vector<Vec3> aligned;
  aligned.reserve(est_cloud.points.size());
  for (const auto& p : est_cloud.points) aligned.push_back(ate.alignment.apply(p));
  const ReconReport recon = recon_metrics(aligned, gt_cloud.points, trim);

  if (out.empty()) out = run / "metrics.txt";
  io::write_key_values(out, {{"ate_rmse", io::format_double(ate.rmse)},
                             {"ate_alignment", align},
                             {"ate_source", from_tum ? "trajectory.tum" : "cameras.txt"},
                             {"ate_frames", std::to_string(est.size())},
                             {"ate_scale", io::format_double(ate.alignment.scale())},
                             {"accuracy", io::format_double(recon.accuracy)},
                             {"completion", io::format_double(recon.completion)},
                             {"chamfer", io::format_double(recon.chamfer)},
                             {"trim_percentile", trim ? io::format_double(*trim) : "none"},
                             {"est_points", std::to_string(est_cloud.points.size())},
                             {"gt_points", std::to_string(gt_cloud.points.size())}});
  std::cout << "ate_rmse=" << io::format_double(ate.rmse) << " chamfer=" << io::format_double(recon.chamfer) << "\n";
  return 0;
}

int cmd_export(const fs::path& run, const fs::path& ply, const fs::path& tum, bool ascii) {
  if (ply.empty() && tum.empty()) throw FormatError("export needs --ply and/or --tum");
  if (!ply.empty()) io::write_ply(ply, io::read_ply(run / "map.ply"), ascii);
  if (!tum.empty()) io::write_tum(tum, io::read_tum(run / "trajectory.tum"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Submap alignment backend on SL(4) / Sim(3)"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate an oracle session directory");
  SynthFlags sf;
  PipelineFlags synth_pipeline;
  synth->add_option("--out", sf.out, "session directory")->required();
  synth->add_option("--layout", sf.layout, "room, corridor_loop or planar_floor")
      ->check(CLI::IsMember({"room", "corridor_loop", "planar_floor"}));
  synth->add_option("--n-points", sf.n_points, "scene points");
  synth->add_option("--n-frames", sf.n_frames, "stream frames");
  synth->add_option("--warp", sf.warp, "identity, sim3 or sl4")->check(CLI::IsMember({"identity", "sim3", "sl4"}));
  synth->add_option("--magnitude", sf.magnitude, "per-submap warp tangent norm bound");
  synth->add_option("--noise", sf.noise, "point noise sigma");
  synth->add_option("--outliers", sf.outliers, "outlier fraction per frame");
  synth->add_option("--drift", sf.drift, "similarity drift per submap");
  synth->add_flag("--warp-first", sf.warp_first, "warp the first submap too");
  synth->add_option("--scene-seed", sf.scene_seed, "scene, stream and oracle seed");
  synth->add_flag("--materialize", sf.materialize, "store the reconstructions the manifest config requests");
  synth_pipeline.attach(*synth);

  auto* run = app.add_subcommand("run", "run the backend on a session");
  fs::path run_session, run_out;
  bool dump_graph = false;
  PipelineFlags run_pipeline_flags;
  run->add_option("--session", run_session, "session directory")->required();
  run->add_option("--out", run_out, "output directory")->required();
  run->add_flag("--dump-graph", dump_graph, "write graph.txt with absolute transforms and edges");
  run_pipeline_flags.attach(*run);

  auto* eval = app.add_subcommand("eval", "ATE and map metrics of a run against the session ground truth");
  fs::path eval_session, eval_run, eval_out;
  std::string eval_align = "sim3";
  std::optional<double> eval_trim;
  bool eval_from_tum = false;
  eval->add_option("--session", eval_session)->required();
  eval->add_option("--run", eval_run)->required();
  eval->add_option("--align", eval_align, "se3 or sim3")->check(CLI::IsMember({"se3", "sim3"}));
  eval->add_option("--trim", eval_trim, "keep the closest percentile of distances")->check(CLI::Range(0.0, 100.0));
  eval->add_option("--out", eval_out, "metrics file (default RUN/metrics.txt)");
  eval->add_flag("--from-tum", eval_from_tum, "ATE over trajectory.tum only (similarity cameras)");

  auto* exp = app.add_subcommand("export", "re-emit a run's map and trajectory");
  fs::path exp_run, exp_ply, exp_tum;
  bool exp_ascii = false;
  exp->add_option("--run", exp_run)->required();
  exp->add_option("--ply", exp_ply);
  exp->add_option("--tum", exp_tum);
  exp->add_flag("--ascii", exp_ascii, "ASCII PLY instead of binary");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(sf, synth_pipeline);
    if (run->parsed()) return cmd_run(run_session, run_out, run_pipeline_flags, dump_graph);
    if (eval->parsed()) return cmd_eval(eval_session, eval_run, eval_align, eval_trim, eval_from_tum, eval_out);
    if (exp->parsed()) return cmd_export(exp_run, exp_ply, exp_tum, exp_ascii);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
