#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <string>
#include <vector>

#include "corrtrack/errors.hpp"
#include "corrtrack/tensor.hpp"

namespace corrtrack {

using WorldPoint = Eigen::Vector3d;

// Pinhole camera. Convention: right-handed, camera looks down +z, pixel
// origin at the top-left, x right / y down. `rotation` and `translation`
// map world to camera coordinates: x_cam = R * x_world + t.
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  // Throws Error if the rotation is not orthonormal with det +1 (tol 1e-9)
  // or the intrinsics are out of range.
  void validate() const;

  Eigen::Vector3d world_to_camera(const WorldPoint& p) const {
    return rotation * p + translation;
  }
  WorldPoint camera_to_world(const Eigen::Vector3d& p) const {
    return rotation.transpose() * (p - translation);
  }

  bool same_pose(const Camera& other, double tol = 1e-12) const;
};

// Per-view pointmap with confidence and validity, expressed in the
// coordinate frame of `reference_view`. Confidence is >= 1 everywhere by
// construction (1 + exp(raw) parameterization at the model head). Invalid
// pixels are excluded from every loss and normalizer.
struct PointMapBundle {
  int width = 0, height = 0;
  Tensor points;                 // H x W x 3
  Tensor confidence;             // H x W
  std::vector<uint8_t> valid;    // H*W, row-major
  std::string reference_view;

  static PointMapBundle allocate(int width, int height, std::string reference_view);
  int64_t pixel_index(int x, int y) const { return static_cast<int64_t>(y) * width + x; }
};

struct Projection {
  Eigen::Vector2d pixel;
  double depth = 0.0;
};

// Pinhole projection. Throws NonPositiveDepth when the camera-frame depth
// is <= 1e-9.
Projection project(const WorldPoint& point, const Camera& camera);

// Inverse of project composed with the camera-to-world transform.
WorldPoint unproject(const Eigen::Vector2d& pixel, double depth, const Camera& camera);

// Expresses an H x W x 3 grid of world points in `reference`'s camera frame.
// Confidence is initialized to 1; the valid mask is passed through.
PointMapBundle to_reference_frame(const Tensor& world_points,
                                  const std::vector<uint8_t>& valid,
                                  const Camera& reference,
                                  const std::string& reference_view = "view1");

// Mean Euclidean norm over valid points. Throws EmptyPointMap when no pixel
// is valid.
double norm_factor(const PointMapBundle& bundle);

enum class MatchKind : uint8_t { Static = 0, Dynamic = 1 };

// Static iff the two world positions coincide within eps.
MatchKind classify_match(const WorldPoint& i_world, const WorldPoint& j_world, double eps);

// Default tolerance for "same world point". Exact equality is unusable in
// floating point, so static/dynamic labelling uses this scene-unit slack.
constexpr double kDefaultDynamicEps = 1e-4;

// Intrinsics estimate for a camera with unknown calibration:
// fx = fy = width, principal point at the image center.
Camera estimate_intrinsics(int width, int height);

// Camera at `eye` looking at `target` (world frame), `up` approximately up.
Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double fx, double fy, double cx,
                      double cy, int width, int height);

}  // namespace corrtrack
