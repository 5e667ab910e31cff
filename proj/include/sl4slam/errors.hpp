#pragma once

#include <stdexcept>
#include <string>

namespace sl4slam {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SL4SLAM_DEFINE_ERROR(Name)       \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

// lie groups
SL4SLAM_DEFINE_ERROR(LogDomainError);
SL4SLAM_DEFINE_ERROR(InvalidTangent);
SL4SLAM_DEFINE_ERROR(DegenerateConfiguration);

// projective solver
SL4SLAM_DEFINE_ERROR(DegenerateSample);
SL4SLAM_DEFINE_ERROR(PointAtInfinity);
SL4SLAM_DEFINE_ERROR(InsufficientInliers);
SL4SLAM_DEFINE_ERROR(ZeroScale);

// factor graph
SL4SLAM_DEFINE_ERROR(SingularNormalEquations);
SL4SLAM_DEFINE_ERROR(MissingValue);
SL4SLAM_DEFINE_ERROR(InvalidFactor);

// pipeline
SL4SLAM_DEFINE_ERROR(EmptySubmap);
SL4SLAM_DEFINE_ERROR(NoSharedFrame);
SL4SLAM_DEFINE_ERROR(TooFewPoints);
SL4SLAM_DEFINE_ERROR(DisconnectedGraph);
SL4SLAM_DEFINE_ERROR(AlignmentFailure);

// evaluation and io
SL4SLAM_DEFINE_ERROR(LengthMismatch);
SL4SLAM_DEFINE_ERROR(EmptyCloud);
SL4SLAM_DEFINE_ERROR(FormatError);

#undef SL4SLAM_DEFINE_ERROR

}  // namespace sl4slam
