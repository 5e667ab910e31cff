#pragma once

// Data exchanged between a reconstructor (the feed-forward network, or the
// synthetic oracle standing in for it) and the backend.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sl4slam/errors.hpp"
#include "sl4slam/sl4.hpp"

namespace sl4slam {

/// One entry of the input stream. `disparity` is the apparent motion in
/// pixels since the previous stream frame.
struct Frame {
  int frame_id = 0;
  double disparity = 0.0;
  Eigen::VectorXd descriptor;
};

enum class FrameRole { PriorOverlap, Regular, Loop };

inline const char* to_string(FrameRole r) {
  switch (r) {
    case FrameRole::PriorOverlap: return "prior";
    case FrameRole::Regular: return "regular";
    case FrameRole::Loop: return "loop";
  }
  return "?";
}

/// Per-frame slice of a reconstruction. `camera` maps submap coordinates to
/// this frame's camera coordinates (homogeneous 4x4). `pixel_ids` name the
/// pixel each point was predicted for, so two reconstructions of the same frame
/// can be zipped without matching; they are strictly increasing.
struct FrameEntry {
  int frame_id = 0;
  FrameRole role = FrameRole::Regular;
  Mat4 camera = Mat4::Identity();
  std::vector<int> pixel_ids;
  std::vector<Vec3> points;
  std::vector<double> confidences;
};

struct Submap {
  int submap_id = 0;
  std::vector<FrameEntry> frames;

  size_t point_count() const {
    size_t n = 0;
    for (const auto& f : frames) n += f.points.size();
    return n;
  }

  /// Entry of `frame_id` with the given role, or nullptr.
  const FrameEntry* find(int frame_id, FrameRole role) const {
    for (const auto& f : frames)
      if (f.frame_id == frame_id && f.role == role) return &f;
    return nullptr;
  }
  const FrameEntry* find(int frame_id) const {
    for (const auto& f : frames)
      if (f.frame_id == frame_id) return &f;
    return nullptr;
  }
};

inline void validate(const Submap& s) {
  for (const auto& f : s.frames) {
    if (f.points.size() != f.confidences.size() || f.points.size() != f.pixel_ids.size())
      throw LengthMismatch("frame " + std::to_string(f.frame_id) +
                           ": points, confidences and pixel ids differ in length");
    for (size_t k = 1; k < f.pixel_ids.size(); ++k)
      if (f.pixel_ids[k] <= f.pixel_ids[k - 1])
        throw FormatError("frame " + std::to_string(f.frame_id) + ": pixel ids not increasing");
  }
}

/// A request is an ordered list of frames with roles; the returned submap
/// lists them in the same order, expressed in a frame of the reconstructor's
/// choosing (anchored at the first requested camera).
struct ReconstructionRequest {
  std::vector<int> frame_ids;
  std::vector<FrameRole> roles;
};

class Reconstructor {
 public:
  virtual ~Reconstructor() = default;
  virtual Submap reconstruct(const ReconstructionRequest& request) = 0;
};

}  // namespace sl4slam
