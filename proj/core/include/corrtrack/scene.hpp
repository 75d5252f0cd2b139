#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "corrtrack/geometry.hpp"
#include "corrtrack/rng.hpp"
#include "corrtrack/tensor.hpp"

namespace corrtrack {

enum class CameraPathKind : uint8_t { Static = 0, Pan = 1, Orbit = 2 };

struct CameraPathSpec {
  CameraPathKind kind = CameraPathKind::Pan;
  double amplitude = 0.7;  // scene units (Pan) or orbit sweep factor
};

// Everything needed to regenerate a scene bit-identically.
struct SceneSpec {
  uint64_t seed = 1;
  int num_frames = 48;
  int width = 64, height = 48;
  int num_static_points = 4000;
  int num_objects = 8;
  double min_speed = 0.008, max_speed = 0.04;  // scene units / frame
  CameraPathSpec camera_path;
  int palette_id = 0;

  void validate() const;
};

struct Surfel {
  Eigen::Vector3d position;
  Eigen::Vector3d color;
};

// Rigid cluster of surfels with a per-frame local-to-world transform.
struct RigidObject {
  std::vector<Eigen::Vector3d> local_points;
  std::vector<Eigen::Vector3d> local_colors;
  std::vector<Eigen::Matrix3d> rotation;     // per frame
  std::vector<Eigen::Vector3d> translation;  // per frame
};

// Surfel ids are assigned [0, num_static) to static surfels, then object
// points in object order.
struct Scene {
  SceneSpec spec;
  std::vector<Surfel> static_surfels;
  std::vector<RigidObject> objects;
  std::vector<Camera> cameras;  // one per frame

  int32_t num_surfels() const;
  bool is_object_surfel(int32_t id) const {
    return id >= static_cast<int32_t>(static_surfels.size());
  }
  Eigen::Vector3d surfel_world(int32_t id, int frame) const;
  Eigen::Vector3d surfel_color(int32_t id) const;
};

// Point-splat render of one frame. world_points[p] lies on pixel p's central
// ray at the winning surfel's depth, so project(world_points[p]) == p and
// depth/world/valid are mutually exact; unproject(p, depth[p]) reproduces
// world_points[p] bit-for-bit.
struct RenderedFrame {
  int width = 0, height = 0;
  Tensor image;                  // H x W x 3 in [0,1]
  Tensor depth;                  // H x W, 0 = empty
  Tensor world_points;           // H x W x 3
  std::vector<uint8_t> valid;    // H*W
  std::vector<int32_t> surfel_id;  // H*W, -1 = empty

  int64_t pixel_index(int x, int y) const { return static_cast<int64_t>(y) * width + x; }
};

struct GroundTruthTrack {
  int32_t surfel_id = -1;
  bool is_dynamic = false;
  // Per frame; has_pixel is false when the surfel is behind the camera.
  std::vector<Eigen::Vector2d> pixel;
  std::vector<uint8_t> has_pixel;
  std::vector<Eigen::Vector3d> world;
  std::vector<uint8_t> visible;  // wins the z-buffer at its splat pixel
};

struct Correspondence {
  int32_t surfel_id = -1;
  Eigen::Vector2d pixel_i;  // exact fractional projection in frame t1
  Eigen::Vector2d pixel_j;  // exact fractional projection in frame t2
  MatchKind kind = MatchKind::Static;
};

// A training pair: two rendered frames, their cameras, ground-truth
// pointmaps in the view-1 camera frame, correspondences for surfels visible
// in both frames, and per-pixel cross-view visibility labels (surfels
// visible in one frame only become negative visibility labels).
struct ScenePairSample {
  int t1 = 0, t2 = 0;
  int width = 0, height = 0;
  Camera cam1, cam2;
  Tensor image1, image2;           // H x W x 3
  Tensor gt_points1, gt_points2;   // H x W x 3, both in the view-1 frame
  std::vector<uint8_t> valid1, valid2;
  // -1 unlabelled (empty pixel), 0 not visible in the other frame, 1 visible.
  std::vector<int8_t> cross_visible1, cross_visible2;
  std::vector<Correspondence> correspondences;
};

Scene generate_scene(const SceneSpec& spec);
RenderedFrame render(const Scene& scene, int frame_index);
std::vector<RenderedFrame> render_all(const Scene& scene);

std::vector<GroundTruthTrack> ground_truth_tracks(const Scene& scene,
                                                  const std::vector<RenderedFrame>& frames,
                                                  double eps = kDefaultDynamicEps);

ScenePairSample ground_truth_pair(const Scene& scene, const RenderedFrame& frame1,
                                  const RenderedFrame& frame2, int t1, int t2,
                                  double eps = kDefaultDynamicEps);

}  // namespace corrtrack
