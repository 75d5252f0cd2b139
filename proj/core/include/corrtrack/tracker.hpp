#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <vector>

#include "corrtrack/geometry.hpp"
#include "corrtrack/model.hpp"
#include "corrtrack/scene.hpp"
#include "corrtrack/tensor.hpp"

namespace corrtrack {

enum class SamplingMode : uint8_t { Bilinear = 0, Nearest = 1 };

struct TrackQuery {
  int id = -1;             // aligns predictions with ground truth tracks
  int frame = 0;           // t_q
  Eigen::Vector2d pixel;   // fractional allowed
};

struct TrajectoryPoint {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double visible_prob = 0.0;
  bool has_point3d = false;
  Eigen::Vector3d point3d = Eigen::Vector3d::Zero();
  bool valid = false;  // false before the query's first appearance ("first" mode)
};

struct Trajectory {
  TrackQuery query;
  std::vector<TrajectoryPoint> points;  // one per frame
};

// Bilinear blend of the four surrounding unit descriptors, re-normalized;
// Nearest picks the closest pixel's descriptor. Throws OutOfBounds.
Eigen::VectorXd sample_descriptor(const Tensor& descriptors, const Eigen::Vector2d& pixel,
                                  SamplingMode mode);

// Raw bilinear (or nearest) sample of an H x W or H x W x C grid.
Eigen::VectorXd sample_grid(const Tensor& grid, const Eigen::Vector2d& pixel, SamplingMode mode);

// Bilinear image resize (H x W x C -> new_height x new_width x C), used when
// inference runs at a resolution other than the render resolution.
Tensor resize_image(const Tensor& image, int new_width, int new_height);

struct CorrespondResult {
  Eigen::Vector2i pixel = Eigen::Vector2i::Zero();
  double score = 0.0;
};

// For each query descriptor, the target pixel with maximum cosine
// similarity over the whole H x W grid; ties break to the lowest row-major
// index. Zero-norm descriptors count as similarity 0.
std::vector<CorrespondResult> correspond(const std::vector<Eigen::VectorXd>& query_descriptors,
                                         const Tensor& target_descriptors);

// Everything the tracking loop needs for one (query frame, target frame)
// pair. The oracle backend keeps descriptors sparse (one-hot per surfel id),
// which matches dense one-hot cosine argmax exactly and is the testing seam
// that separates tracking logic from model quality.
struct PairData {
  bool sparse = false;
  Tensor desc_q, desc_t;                         // dense path
  const std::vector<int32_t>* ids_q = nullptr;   // sparse path (surfel ids, -1 empty)
  const std::vector<int32_t>* ids_t = nullptr;
  Tensor vis_logits_q;       // H x W, query branch
  Tensor pointmap_t_in_q;    // H x W x 3, target view in the query camera frame
  Tensor pointmap_q_in_q;    // H x W x 3
};

class TrackerBackend {
 public:
  virtual ~TrackerBackend() = default;
  virtual int width() const = 0;
  virtual int height() const = 0;
  virtual int num_frames() const = 0;
  virtual PairData pair(int query_frame, int target_frame) const = 0;
};

class ModelTrackerBackend : public TrackerBackend {
 public:
  ModelTrackerBackend(const ModelParams& params, std::vector<Tensor> frames);
  int width() const override { return width_; }
  int height() const override { return height_; }
  int num_frames() const override { return static_cast<int>(frames_.size()); }
  PairData pair(int query_frame, int target_frame) const override;

 private:
  const ModelParams& params_;
  std::vector<Tensor> frames_;
  int width_ = 0, height_ = 0;
};

class OracleTrackerBackend : public TrackerBackend {
 public:
  OracleTrackerBackend(const Scene& scene, const std::vector<RenderedFrame>& frames);
  int width() const override { return scene_.spec.width; }
  int height() const override { return scene_.spec.height; }
  int num_frames() const override { return scene_.spec.num_frames; }
  PairData pair(int query_frame, int target_frame) const override;

 private:
  const Scene& scene_;
  const std::vector<RenderedFrame>& frames_;
  std::vector<std::vector<int64_t>> surfel_pixel_;  // per frame: id -> pixel
};

enum class TrackMode : uint8_t { Mode2d = 0, Mode3dPointmap = 1, Mode3dLifted = 2 };
enum class IntrinsicsSource : uint8_t { GroundTruth = 0, Estimated = 1 };

// Pairwise tracking in "first" query mode: every frame t != t_q is matched
// independently against the query frame, all queries of a frame at once;
// entries before t_q are invalid. No smoothing or outlier handling.
std::vector<Trajectory> track2d(const TrackerBackend& backend,
                                const std::vector<TrackQuery>& queries, SamplingMode sampling,
                                int workers = 1);

// track2d plus the target pointmap (expressed in the query camera frame)
// sampled at the corresponded pixel.
std::vector<Trajectory> track3d_pointmap(const TrackerBackend& backend,
                                         const std::vector<TrackQuery>& queries,
                                         SamplingMode sampling, int workers = 1);

// Lifts an existing 2D result with a depth map source and camera intrinsics
// (ground-truth or the fx = fy = W estimate), then transforms into the query
// camera frame with the ground-truth relative pose. Entries whose depth is
// missing (0) get no 3D point.
std::vector<Trajectory> track3d_lifted(std::vector<Trajectory> tracks2d,
                                       const std::vector<const Tensor*>& depth_maps,
                                       const std::vector<Camera>& cameras,
                                       IntrinsicsSource intrinsics);

// Single-point lift; throws MissingDepth when the depth map is empty at the
// pixel.
Eigen::Vector3d lift_point(const Eigen::Vector2d& pixel, const Tensor& depth_map,
                           const Camera& camera, IntrinsicsSource intrinsics);

}  // namespace corrtrack
