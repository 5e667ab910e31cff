#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include "sl4slam/io.hpp"
#include "sl4slam/kdtree.hpp"
#include "sl4slam/metrics.hpp"
#include "test_utils.hpp"

using namespace sl4slam;
namespace fs = std::filesystem;

namespace {

std::vector<Vec3> random_cloud(std::mt19937_64& rng, size_t n, double half = 1.0) {
  std::vector<Vec3> out;
  for (size_t i = 0; i < n; ++i) out.push_back(sl4slam::testing::random_point(rng, half));
  return out;
}

double brute_mean_nn(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  double sum = 0.0;
  for (const auto& p : from) {
    double best = 1e300;
    for (const auto& q : to) best = std::min(best, (p - q).norm());
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sl4slam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// ---------------------------------------------------------------- ATE

TEST(Ate, IdenticalIsZero) {
  std::mt19937_64 rng(1);
  const auto gt = random_cloud(rng, 50, 5.0);
  for (auto a : {AteAlignment::SE3, AteAlignment::Sim3}) EXPECT_LT(ate_rmse(gt, gt, a).rmse, 1e-12);
}

TEST(Ate, ScaleIsAbsorbedOnlyBySim3) {
  std::mt19937_64 rng(2);
  const auto gt = random_cloud(rng, 50, 5.0);
  std::vector<Vec3> est;
  for (const auto& p : gt) est.push_back(2.0 * p);
  const auto sim = ate_rmse(est, gt, AteAlignment::Sim3);
  EXPECT_LT(sim.rmse, 1e-12);
  EXPECT_NEAR(sim.alignment.scale(), 0.5, 1e-12);
  EXPECT_GT(ate_rmse(est, gt, AteAlignment::SE3).rmse, 0.1);
}

TEST(Ate, RigidMotionIsAbsorbed) {
  std::mt19937_64 rng(3);
  const auto gt = random_cloud(rng, 40, 3.0);
  const Sim3Transform t(1.0, sl4slam::testing::random_rotation(rng), Vec3(4.0, -2.0, 1.0));
  std::vector<Vec3> est;
  for (const auto& p : gt) est.push_back(t.apply(p));
  EXPECT_LT(ate_rmse(est, gt, AteAlignment::SE3).rmse, 1e-10);
}

TEST(Ate, IsotropicNoiseGivesSqrtThreeSigma) {
  std::mt19937_64 rng(4);
  const double sigma = 0.01;
  std::normal_distribution<double> n(0.0, sigma);
  const auto gt = random_cloud(rng, 1000, 5.0);
  std::vector<Vec3> est;
  for (const auto& p : gt) est.push_back(p + Vec3(n(rng), n(rng), n(rng)));
  const auto r = ate_rmse(est, gt, AteAlignment::SE3);
  EXPECT_NEAR(r.rmse, sigma * std::sqrt(3.0), 0.1 * sigma * std::sqrt(3.0));
  double sq = 0.0;
  for (double e : r.errors) sq += e * e;
  EXPECT_NEAR(r.rmse * r.rmse, sq / 1000.0, 1e-15);
}

TEST(Ate, LengthMismatch) {
  std::mt19937_64 rng(5);
  const auto a = random_cloud(rng, 5), b = random_cloud(rng, 6);
  EXPECT_THROW(ate_rmse(a, b, AteAlignment::Sim3), LengthMismatch);
  EXPECT_THROW(parse_ate_alignment("affine"), FormatError);
}

// ---------------------------------------------------------------- map metrics

TEST(KdTree, MatchesBruteForce) {
  std::mt19937_64 rng(6);
  const auto pts = random_cloud(rng, 700);
  const KdTree3 tree(pts);
  for (const auto& q : random_cloud(rng, 200, 1.5)) {
    double best = 1e300;
    for (const auto& p : pts) best = std::min(best, (p - q).squaredNorm());
    EXPECT_DOUBLE_EQ(tree.nearest_squared(q), best);
  }
  EXPECT_TRUE(std::isinf(KdTree3({}).nearest_squared(Vec3::Zero())));
}

TEST(Recon, IdenticalIsZero) {
  std::mt19937_64 rng(7);
  const auto gt = random_cloud(rng, 300);
  const auto r = recon_metrics(gt, gt);
  EXPECT_EQ(r.accuracy, 0.0);
  EXPECT_EQ(r.completion, 0.0);
  EXPECT_EQ(r.chamfer, 0.0);
}

TEST(Recon, HalfDeletedHurtsCompletionOnly) {
  std::mt19937_64 rng(8);
  const auto gt = random_cloud(rng, 400);
  const std::vector<Vec3> half(gt.begin(), gt.begin() + 200);
  const auto r = recon_metrics(half, gt);
  EXPECT_EQ(r.accuracy, 0.0);
  EXPECT_GT(r.completion, 0.0);
  EXPECT_DOUBLE_EQ(r.chamfer, 0.5 * r.completion);
}

TEST(Recon, UniformOffsetOnSparseGrid) {
  // Grid spacing 1, offset 0.1: every nearest neighbour is the shifted twin.
  std::vector<Vec3> gt, est;
  const Vec3 d(0.06, 0.0, 0.08);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 0; k < 8; ++k) {
        gt.emplace_back(i, j, k);
        est.push_back(gt.back() + d);
      }
  const auto r = recon_metrics(est, gt);
  EXPECT_NEAR(r.accuracy, 0.1, 1e-12);
  EXPECT_NEAR(r.completion, 0.1, 1e-12);
  EXPECT_NEAR(r.chamfer, 0.1, 1e-12);
}

TEST(Recon, MatchesBruteForceOracle) {
  std::mt19937_64 rng(9);
  const auto gt = random_cloud(rng, 900);
  auto est = random_cloud(rng, 600);
  for (auto& p : est) p += Vec3(0.05, -0.02, 0.0);
  const auto r = recon_metrics(est, gt);
  EXPECT_NEAR(r.accuracy, brute_mean_nn(est, gt), 1e-12);
  EXPECT_NEAR(r.completion, brute_mean_nn(gt, est), 1e-12);
  const auto swapped = recon_metrics(gt, est);
  EXPECT_DOUBLE_EQ(swapped.accuracy, r.completion);
  EXPECT_DOUBLE_EQ(swapped.completion, r.accuracy);
  EXPECT_DOUBLE_EQ(swapped.chamfer, r.chamfer);
}

TEST(Recon, TrimKeepsClosestPercentile) {
  std::vector<Vec3> gt, est;
  for (int i = 0; i < 10; ++i) {
    gt.emplace_back(10.0 * i, 0, 0);
    est.emplace_back(10.0 * i, 0.01 * (i + 1), 0);
  }
  // Distances 0.01..0.10; the closest half averages 0.03.
  const auto r = recon_metrics(est, gt, 50.0);
  EXPECT_NEAR(r.accuracy, 0.03, 1e-12);
  EXPECT_NEAR(r.completion, 0.03, 1e-12);
  EXPECT_NEAR(recon_metrics(est, gt).accuracy, 0.055, 1e-12);
}

TEST(Recon, EmptyCloud) {
  const std::vector<Vec3> one{Vec3::Zero()}, none;
  EXPECT_THROW(recon_metrics(none, one), EmptyCloud);
  EXPECT_THROW(recon_metrics(one, none), EmptyCloud);
}

// ---------------------------------------------------------------- files

TEST(Tum, RoundTripWithinTolerance) {
  const auto dir = scratch("tum");
  std::mt19937_64 rng(10);
  std::vector<io::TumPose> poses;
  for (int k = 0; k < 50; ++k) {
    io::TumPose p;
    p.timestamp = k;
    p.t = sl4slam::testing::random_point(rng, 10.0);
    p.q = Eigen::Quaterniond(sl4slam::testing::random_rotation(rng));
    if (k % 2) p.q.coeffs() *= -1.0;  // same rotation, negative qw half the time
    poses.push_back(p);
  }
  io::write_tum(dir / "t.tum", poses);
  const auto back = io::read_tum(dir / "t.tum");
  ASSERT_EQ(back.size(), poses.size());
  for (size_t k = 0; k < poses.size(); ++k) {
    EXPECT_EQ(back[k].timestamp, poses[k].timestamp);
    EXPECT_LT((back[k].t - poses[k].t).norm(), 1e-9);
    EXPECT_GE(back[k].q.w(), 0.0);
    EXPECT_LT((back[k].q.toRotationMatrix() - poses[k].q.toRotationMatrix()).norm(), 1e-9);
  }
  // Re-emission is byte-stable.
  io::write_tum(dir / "u.tum", back);
  std::ifstream a(dir / "t.tum"), b(dir / "u.tum");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));

  std::ofstream(dir / "bad.tum") << "0 1 2 3\n";
  EXPECT_THROW(io::read_tum(dir / "bad.tum"), FormatError);
  fs::remove_all(dir);
}

TEST(Ply, BinaryLayoutAndRoundTrip) {
  const auto dir = scratch("ply");
  std::mt19937_64 rng(11);
  io::PointCloud cloud;
  cloud.points = random_cloud(rng, 100, 3.0);
  for (int i = 0; i < 100; ++i) cloud.colors.push_back(io::provenance_color(i % 7));
  io::write_ply(dir / "c.ply", cloud);

  std::ifstream is(dir / "c.ply", std::ios::binary);
  const std::string bytes(std::istreambuf_iterator<char>(is), {});
  const std::string header =
      "ply\nformat binary_little_endian 1.0\nelement vertex 100\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(bytes.size(), header.size() + 100 * 15);
  float x0;
  std::memcpy(&x0, bytes.data() + header.size(), 4);
  EXPECT_EQ(x0, static_cast<float>(cloud.points[0].x()));

  for (bool ascii : {false, true}) {
    io::write_ply(dir / "d.ply", cloud, ascii);
    const auto back = io::read_ply(dir / "d.ply");
    ASSERT_EQ(back.points.size(), 100u);
    for (size_t i = 0; i < 100; ++i) {
      EXPECT_LT((back.points[i] - cloud.points[i]).norm(), 1e-5);
      EXPECT_EQ(back.colors[i], cloud.colors[i]);
    }
  }
  std::ofstream(dir / "bad.ply") << "not a ply\n";
  EXPECT_THROW(io::read_ply(dir / "bad.ply"), FormatError);
  fs::remove_all(dir);
}

TEST(Ply, ProvenanceColorsAreDistinct) {
  std::set<io::Rgb> seen;
  for (int i = 0; i < 16; ++i) seen.insert(io::provenance_color(i));
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(io::provenance_color(3), io::provenance_color(3));
}

TEST(KeyValues, RoundTripAndErrors) {
  const auto dir = scratch("kv");
  io::write_key_values(dir / "m.txt", {{"ate_rmse", io::format_double(0.1)}, {"mode", "sl4"}});
  const auto kv = io::read_key_values(dir / "m.txt");
  EXPECT_EQ(std::stod(kv.at("ate_rmse")), 0.1);
  EXPECT_EQ(kv.at("mode"), "sl4");
  std::ofstream(dir / "bad.txt") << "novalue\n";
  EXPECT_THROW(io::read_key_values(dir / "bad.txt"), FormatError);
  EXPECT_THROW(io::read_key_values(dir / "missing.txt"), FormatError);
  fs::remove_all(dir);
}

TEST(Frames, RoundTripExactly) {
  const auto dir = scratch("frames");
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Frame> frames;
  for (int k = 0; k < 5; ++k) {
    Frame f{k * 3, 10.0 * k + 0.123456789, Eigen::VectorXd(16)};
    for (int i = 0; i < 16; ++i) f.descriptor(i) = n(rng);
    frames.push_back(f);
  }
  io::write_frames(dir / "f.txt", frames);
  const auto back = io::read_frames(dir / "f.txt");
  ASSERT_EQ(back.size(), frames.size());
  for (size_t k = 0; k < frames.size(); ++k) {
    EXPECT_EQ(back[k].frame_id, frames[k].frame_id);
    EXPECT_EQ(back[k].disparity, frames[k].disparity);
    EXPECT_EQ(back[k].descriptor, frames[k].descriptor);
  }
  std::ofstream(dir / "bad.txt") << "1 2.0 4 0.1 0.2\n";
  EXPECT_THROW(io::read_frames(dir / "bad.txt"), FormatError);
  fs::remove_all(dir);
}

TEST(SubmapFile, RoundTripInSinglePrecision) {
  const auto dir = scratch("smap");
  std::mt19937_64 rng(13);
  Submap s;
  s.submap_id = 4;
  for (int k = 0; k < 3; ++k) {
    FrameEntry f;
    f.frame_id = 10 + k;
    f.role = static_cast<FrameRole>(k);
    f.camera = exp_sl4(sl4slam::testing::random_tangent_with_norm(rng, 0.3)).matrix();
    for (int i = 0; i < 20; ++i) {
      f.pixel_ids.push_back(3 * i);
      f.points.push_back(sl4slam::testing::random_point(rng, 2.0));
      f.confidences.push_back(0.5 + 0.01 * i);
    }
    s.frames.push_back(f);
  }
  io::write_submap(dir / "s.smap", s);
  const Submap b = io::read_submap(dir / "s.smap");
  EXPECT_EQ(b.submap_id, 4);
  ASSERT_EQ(b.frames.size(), 3u);
  for (size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(b.frames[k].frame_id, s.frames[k].frame_id);
    EXPECT_EQ(b.frames[k].role, s.frames[k].role);
    EXPECT_EQ(b.frames[k].pixel_ids, s.frames[k].pixel_ids);
    EXPECT_LT((b.frames[k].camera - s.frames[k].camera).norm(), 1e-6);
    for (size_t i = 0; i < 20; ++i) {
      EXPECT_LT((b.frames[k].points[i] - s.frames[k].points[i]).norm(), 1e-6);
      EXPECT_NEAR(b.frames[k].confidences[i], s.frames[k].confidences[i], 1e-7);
    }
  }
  // Size follows the schema: header 16 bytes, per frame 4+1+64+4 and 20 bytes per point.
  EXPECT_EQ(fs::file_size(dir / "s.smap"), 16u + 3u * (73u + 20u * 20u));

  std::ofstream(dir / "bad.smap", std::ios::binary) << "SMAQ";
  EXPECT_THROW(io::read_submap(dir / "bad.smap"), FormatError);
  fs::resize_file(dir / "s.smap", 100);
  EXPECT_THROW(io::read_submap(dir / "s.smap"), FormatError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------- CLI smoke

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(SL4SLAM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

double metric(const fs::path& file, const std::string& key) { return std::stod(io::read_key_values(file).at(key)); }

}  // namespace

TEST(Cli, CorridorRunEvalAndExport) {
  const auto dir = scratch("cli");
  const std::string s = (dir / "session").string();
  ASSERT_EQ(cli("synth --out " + s +
                " --layout corridor_loop --n-points 4000 --n-frames 96 --warp sl4 --magnitude 0.1 --drift 0.02"),
            0);
  for (const char* f : {"manifest.txt", "frames.txt", "groundtruth.tum", "groundtruth.ply"})
    EXPECT_TRUE(fs::exists(dir / "session" / f)) << f;

  const std::string lc = (dir / "lc").string(), nolc = (dir / "nolc").string();
  ASSERT_EQ(cli("run --session " + s + " --out " + lc + " --mode sl4 --w 32"), 0);
  EXPECT_TRUE(fs::exists(dir / "lc" / "map.ply"));
  EXPECT_TRUE(fs::exists(dir / "lc" / "trajectory.tum"));
  ASSERT_EQ(cli("run --session " + s + " --out " + nolc + " --mode sl4 --w 8 --no-loop-closure"), 0);
  ASSERT_EQ(cli("run --session " + s + " --out " + lc + " --mode sl4 --w 8"), 0);
  ASSERT_EQ(cli("eval --session " + s + " --run " + lc), 0);
  ASSERT_EQ(cli("eval --session " + s + " --run " + nolc), 0);
  EXPECT_GT(metric(dir / "lc" / "run.txt", "loop_edges"), 0.0);
  EXPECT_LT(metric(dir / "lc" / "metrics.txt", "ate_rmse"), metric(dir / "nolc" / "metrics.txt", "ate_rmse"));

  ASSERT_EQ(cli("export --run " + lc + " --ply " + (dir / "a.ply").string() + " --ascii"), 0);
  EXPECT_EQ(io::read_ply(dir / "a.ply").points.size(), io::read_ply(dir / "lc" / "map.ply").points.size());
  fs::remove_all(dir);
}

TEST(Cli, ManifestDefaultsAndErrors) {
  const auto dir = scratch("cli_err");
  const std::string s = (dir / "session").string();
  ASSERT_EQ(cli("synth --out " + s + " --w 8"), 0);
  const auto kv = io::read_key_values(dir / "session" / "manifest.txt");
  EXPECT_EQ(kv.at("w_loop"), "1");
  EXPECT_EQ(std::stod(kv.at("tau_disparity")), 25.0);
  EXPECT_EQ(kv.at("tau_interval"), "2");
  EXPECT_EQ(std::stod(kv.at("tau_desc")), 0.8);
  EXPECT_EQ(std::stod(kv.at("tau_conf")), 25.0);
  EXPECT_EQ(kv.at("ransac_iters"), "300");
  EXPECT_EQ(std::stod(kv.at("ransac_thresh")), 0.01);

  const std::string r = (dir / "r").string();
  ASSERT_EQ(cli("run --session " + s + " --out " + r), 0);
  EXPECT_EQ(metric(dir / "r" / "run.txt", "submaps"), 6.0);  // w = 8 from the manifest
  ASSERT_EQ(cli("run --session " + s + " --out " + r + " --w 16"), 0);
  EXPECT_EQ(metric(dir / "r" / "run.txt", "submaps"), 3.0);

  EXPECT_NE(cli("run --session " + s + " --out " + r + " --mode affine"), 0);
  EXPECT_NE(cli("run --session " + (dir / "missing").string() + " --out " + r), 0);
  EXPECT_NE(cli("bogus"), 0);
  EXPECT_NE(cli(""), 0);
  fs::remove_all(dir);
}
