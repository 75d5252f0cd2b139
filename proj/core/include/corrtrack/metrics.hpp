#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "corrtrack/geometry.hpp"
#include "corrtrack/scene.hpp"
#include "corrtrack/tracker.hpp"

namespace corrtrack {

struct EvalConfig {
  std::vector<double> delta_thresholds{1, 2, 4, 8, 16};  // pixels at eval resolution
  int eval_width = 256, eval_height = 256;               // TAP-Vid style canonical frame
  std::vector<double> apd_thresholds{0.1, 0.3, 0.5, 1.0};  // scene units
  double dynamic_split_fraction = 0.1;  // of the image diagonal
  double vis_threshold = 0.5;
  bool per_video_oa = false;            // pooled over pairs by default
  bool apd_ratio_of_medians = false;    // default: median of per-point norm ratios

  void validate() const;
};

struct EvalCounts {
  int64_t tracks = 0;
  int64_t frames = 0;
  int64_t visible_points = 0;
};

struct EvalReport {
  std::vector<double> per_threshold;  // percentages
  double delta_avg = 0.0;
  std::optional<double> occlusion_accuracy;
  std::optional<double> apd;
  EvalCounts counts;
};

// A prediction/ground-truth pair, matched by query id == surfel id.
struct AlignedTrack {
  const Trajectory* pred;
  const GroundTruthTrack* gt;
};

// Throws QueryMismatch when a prediction's query id has no ground truth.
std::vector<AlignedTrack> align_tracks(const std::vector<Trajectory>& preds,
                                       const std::vector<GroundTruthTrack>& gts);

struct DeltaResult {
  std::vector<double> per_threshold;  // percentages
  double average = 0.0;               // mean over thresholds
  int64_t counted = 0;                // (track, frame) pairs with GT visible & valid
};

// delta_avg: per threshold, the percentage of GT-visible, valid entries whose
// pixel error (after rescaling both sides to the eval resolution) is within
// the threshold. Throws EmptyEval when nothing is counted.
DeltaResult delta_avg(const std::vector<AlignedTrack>& tracks, int pred_width, int pred_height,
                      int gt_width, int gt_height, const EvalConfig& cfg);

// Percentage of valid (track, frame) entries whose thresholded predicted
// visibility equals the ground truth, pooled over all entries.
double occlusion_accuracy(const std::vector<AlignedTrack>& tracks, const EvalConfig& cfg);

struct Apd3dEntry {
  Eigen::Vector3d pred;
  Eigen::Vector3d gt;
};

// Average points under distance: global median scaling (median of per-point
// ||gt||/||pred|| norm ratios, or ratio of medians behind the config flag),
// then the mean over thresholds of the within-distance percentage.
double apd(const std::vector<Apd3dEntry>& entries, const EvalConfig& cfg);

// Indices of tracks whose maximum pairwise pixel displacement over visible
// frames reaches dynamic_split_fraction x image diagonal, only in videos
// with no camera motion (all cameras identical); otherwise empty.
std::vector<size_t> dynamic_split(const std::vector<GroundTruthTrack>& gts,
                                  const std::vector<Camera>& cameras, const EvalConfig& cfg);

// Tracks whose ground truth world position never moves (label-based split).
std::vector<size_t> static_split(const std::vector<GroundTruthTrack>& gts);

// Full report over aligned tracks; 3D entries (prediction and ground truth
// in the query camera frame) are evaluated when the predictions carry 3D
// points. `cameras` supplies the query-frame transforms for the ground
// truth side. `with_delta` is off for predictions that carry only 3D
// coordinates (a 3D trajectory CSV has no pixels to score).
EvalReport evaluate_tracks(const std::vector<AlignedTrack>& tracks,
                           const std::vector<Camera>& cameras, int pred_width, int pred_height,
                           int gt_width, int gt_height, const EvalConfig& cfg,
                           bool with_delta = true);

// delta_avg restricted to entries whose separation |t - t_q| lies in
// [min_sep, max_sep] (inclusive); used for track-length stratification.
DeltaResult delta_avg_by_separation(const std::vector<AlignedTrack>& tracks, int pred_width,
                                    int pred_height, int gt_width, int gt_height,
                                    const EvalConfig& cfg, int min_sep, int max_sep);

}  // namespace corrtrack
