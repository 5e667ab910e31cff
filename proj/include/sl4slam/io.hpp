#pragma once

// File formats: binary PLY clouds, TUM trajectories, flat key=value files,
// the frame stream, and the per-submap binary schema shared with external
// reconstructors.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/sl4.hpp"
#include "sl4slam/submap.hpp"

namespace sl4slam::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using Rgb = std::array<uint8_t, 3>;

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p, bool binary) {
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os) throw FormatError("cannot write " + p.string());
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary) {
  std::ifstream is(p, binary ? std::ios::binary : std::ios::in);
  if (!is) throw FormatError("cannot read " + p.string());
  return is;
}

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated " + what);
  return v;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Distinct, stable color per submap (golden-angle hue walk).
inline Rgb provenance_color(int submap_id) {
  const double h = std::fmod(0.61803398875 * submap_id, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  auto q = [](double v) { return static_cast<uint8_t>(std::lround(55 + 200 * v)); };
  return {q(r), q(g), q(b)};
}

// ---------------------------------------------------------------- PLY

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Rgb> colors;  ///< empty or one per point
};

inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud, bool ascii = false) {
  if (!cloud.colors.empty() && cloud.colors.size() != cloud.points.size())
    throw LengthMismatch("PLY colors and points differ in length");
  auto os = detail::open_out(path, !ascii);
  os << "ply\nformat " << (ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
     << "element vertex " << cloud.points.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const Rgb c = cloud.colors.empty() ? Rgb{200, 200, 200} : cloud.colors[i];
    if (ascii) {
      os << std::setprecision(9) << static_cast<float>(cloud.points[i].x()) << ' '
         << static_cast<float>(cloud.points[i].y()) << ' ' << static_cast<float>(cloud.points[i].z()) << ' '
         << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]) << '\n';
    } else {
      for (int k = 0; k < 3; ++k) detail::put(os, static_cast<float>(cloud.points[i](k)));
      for (uint8_t v : c) detail::put(os, v);
    }
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

/// Reads the vertex layout written by write_ply (binary or ascii).
inline PointCloud read_ply(const std::filesystem::path& path) {
  auto is = detail::open_in(path, true);
  std::string line;
  std::getline(is, line);
  if (detail::trim(line) != "ply") throw FormatError(path.string() + ": not a PLY file");
  bool ascii = false;
  size_t n = 0;
  std::vector<std::string> props;
  while (std::getline(is, line)) {
    line = detail::trim(line);
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii")
        ascii = true;
      else if (fmt != "binary_little_endian")
        throw FormatError(path.string() + ": unsupported PLY format " + fmt);
    } else if (key == "element") {
      std::string name;
      ls >> name >> n;
      if (name != "vertex") throw FormatError(path.string() + ": unexpected element " + name);
    } else if (key == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(type + " " + name);
    } else if (key == "end_header") {
      break;
    }
  }
  const std::vector<std::string> expected{"float x", "float y", "float z", "uchar red", "uchar green", "uchar blue"};
  if (props != expected) throw FormatError(path.string() + ": unsupported vertex layout");
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.colors.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Vec3 p;
    Rgb c;
    if (ascii) {
      int r, g, b;
      if (!(is >> p.x() >> p.y() >> p.z() >> r >> g >> b)) throw FormatError(path.string() + ": truncated vertices");
      c = {static_cast<uint8_t>(r), static_cast<uint8_t>(g), static_cast<uint8_t>(b)};
    } else {
      for (int k = 0; k < 3; ++k) p(k) = detail::get<float>(is, "PLY vertices");
      for (auto& v : c) v = detail::get<uint8_t>(is, "PLY vertices");
    }
    cloud.points.push_back(p);
    cloud.colors.push_back(c);
  }
  return cloud;
}

// ---------------------------------------------------------------- TUM

struct TumPose {
  double timestamp = 0.0;
  Vec3 t = Vec3::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
};

/// `timestamp tx ty tz qx qy qz qw`, qw >= 0.
inline void write_tum(const std::filesystem::path& path, const std::vector<TumPose>& poses) {
  auto os = detail::open_out(path, false);
  os << std::setprecision(17);
  for (const auto& p : poses) {
    Eigen::Quaterniond q = p.q;
    if (std::abs(q.norm() - 1.0) > 1e-12) q.normalize();  // keeps re-emission byte-stable
    if (q.w() < 0) q.coeffs() *= -1.0;
    os << p.timestamp << ' ' << p.t.x() << ' ' << p.t.y() << ' ' << p.t.z() << ' ' << q.x() << ' ' << q.y()
       << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

inline std::vector<TumPose> read_tum(const std::filesystem::path& path) {
  auto is = detail::open_in(path, false);
  std::vector<TumPose> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TumPose p;
    double qx, qy, qz, qw;
    if (!(ls >> p.timestamp >> p.t.x() >> p.t.y() >> p.t.z() >> qx >> qy >> qz >> qw))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 8 numbers");
    p.q = Eigen::Quaterniond(qw, qx, qy, qz);
    poses.push_back(p);
  }
  return poses;
}

// ---------------------------------------------------------------- key=value

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  auto os = detail::open_out(path, false);
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  if (!os) throw FormatError("failed writing " + path.string());
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  auto is = detail::open_in(path, false);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

// ---------------------------------------------------------------- frame stream

/// One frame per line: `frame_id disparity dim d_1 ... d_dim`.
inline void write_frames(const std::filesystem::path& path, const std::vector<Frame>& frames) {
  auto os = detail::open_out(path, false);
  os << std::setprecision(17);
  for (const auto& f : frames) {
    os << f.frame_id << ' ' << f.disparity << ' ' << f.descriptor.size();
    for (Eigen::Index k = 0; k < f.descriptor.size(); ++k) os << ' ' << f.descriptor(k);
    os << '\n';
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

inline std::vector<Frame> read_frames(const std::filesystem::path& path) {
  auto is = detail::open_in(path, false);
  std::vector<Frame> frames;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Frame f;
    Eigen::Index dim = 0;
    if (!(ls >> f.frame_id >> f.disparity >> dim) || dim < 0)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad frame header");
    f.descriptor.resize(dim);
    for (Eigen::Index k = 0; k < dim; ++k)
      if (!(ls >> f.descriptor(k)))
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": descriptor too short");
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---------------------------------------------------------------- submap binary

inline constexpr char kSubmapMagic[4] = {'S', 'M', 'A', 'P'};
inline constexpr uint32_t kSubmapVersion = 1;

/// Layout (little-endian): "SMAP", u32 version, i32 submap_id, u32 n_frames,
/// then per frame: i32 frame_id, u8 role, f32[16] camera (row-major),
/// u32 n, i32[n] pixel ids, f32[3n] points, f32[n] confidences.
inline void write_submap(const std::filesystem::path& path, const Submap& s) {
  validate(s);
  auto os = detail::open_out(path, true);
  os.write(kSubmapMagic, 4);
  detail::put(os, kSubmapVersion);
  detail::put(os, static_cast<int32_t>(s.submap_id));
  detail::put(os, static_cast<uint32_t>(s.frames.size()));
  for (const auto& f : s.frames) {
    detail::put(os, static_cast<int32_t>(f.frame_id));
    detail::put(os, static_cast<uint8_t>(f.role));
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) detail::put(os, static_cast<float>(f.camera(r, c)));
    detail::put(os, static_cast<uint32_t>(f.points.size()));
    for (int id : f.pixel_ids) detail::put(os, static_cast<int32_t>(id));
    for (const auto& p : f.points)
      for (int k = 0; k < 3; ++k) detail::put(os, static_cast<float>(p(k)));
    for (double c : f.confidences) detail::put(os, static_cast<float>(c));
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

inline Submap read_submap(const std::filesystem::path& path) {
  auto is = detail::open_in(path, true);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kSubmapMagic, 4) != 0)
    throw FormatError(path.string() + ": not a submap file");
  const std::string what = path.string();
  if (detail::get<uint32_t>(is, what) != kSubmapVersion) throw FormatError(what + ": unsupported version");
  Submap s;
  s.submap_id = detail::get<int32_t>(is, what);
  const uint32_t n_frames = detail::get<uint32_t>(is, what);
  for (uint32_t k = 0; k < n_frames; ++k) {
    FrameEntry f;
    f.frame_id = detail::get<int32_t>(is, what);
    const auto role = detail::get<uint8_t>(is, what);
    if (role > 2) throw FormatError(what + ": bad frame role");
    f.role = static_cast<FrameRole>(role);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) f.camera(r, c) = detail::get<float>(is, what);
    const uint32_t n = detail::get<uint32_t>(is, what);
    f.pixel_ids.resize(n);
    f.points.resize(n);
    f.confidences.resize(n);
    for (auto& id : f.pixel_ids) id = detail::get<int32_t>(is, what);
    for (auto& p : f.points)
      for (int d = 0; d < 3; ++d) p(d) = detail::get<float>(is, what);
    for (auto& c : f.confidences) c = detail::get<float>(is, what);
    s.frames.push_back(std::move(f));
  }
  validate(s);
  return s;
}

/// Serves pre-computed reconstructions from a directory holding
/// submap_0000.smap, submap_0001.smap, ... in request order. Each file must
/// list exactly the requested frames.
class DirectoryReconstructor final : public Reconstructor {
 public:
  explicit DirectoryReconstructor(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::filesystem::path file_for(const std::filesystem::path& dir, int index) {
    std::ostringstream name;
    name << "submap_" << std::setw(4) << std::setfill('0') << index << ".smap";
    return dir / name.str();
  }

  Submap reconstruct(const ReconstructionRequest& request) override {
    const auto path = file_for(dir_, next_++);
    Submap s = read_submap(path);
    if (s.frames.size() != request.frame_ids.size())
      throw FormatError(path.string() + ": frame count does not match the request");
    for (size_t k = 0; k < s.frames.size(); ++k)
      if (s.frames[k].frame_id != request.frame_ids[k])
        throw FormatError(path.string() + ": frame " + std::to_string(s.frames[k].frame_id) +
                          " where the request has " + std::to_string(request.frame_ids[k]));
    for (size_t k = 0; k < s.frames.size(); ++k) s.frames[k].role = request.roles[k];
    return s;
  }

 private:
  std::filesystem::path dir_;
  int next_ = 0;
};

/// Wraps another reconstructor and saves each answer in the directory layout
/// DirectoryReconstructor reads.
class RecordingReconstructor final : public Reconstructor {
 public:
  RecordingReconstructor(Reconstructor& inner, std::filesystem::path dir) : inner_(&inner), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  Submap reconstruct(const ReconstructionRequest& request) override {
    Submap s = inner_->reconstruct(request);
    write_submap(DirectoryReconstructor::file_for(dir_, next_++), s);
    return s;
  }

 private:
  Reconstructor* inner_;
  std::filesystem::path dir_;
  int next_ = 0;
};

}  // namespace sl4slam::io
