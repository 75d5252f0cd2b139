#include "corrtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "corrtrack/errors.hpp"

namespace corrtrack {

void EvalConfig::validate() const {
  auto ascending_positive = [](const std::vector<double>& v) {
    if (v.empty()) return false;
    double prev = 0.0;
    for (double x : v) {
      if (!(x > prev)) return false;
      prev = x;
    }
    return true;
  };
  if (!ascending_positive(delta_thresholds)) throw Error("delta thresholds must be positive ascending");
  if (!ascending_positive(apd_thresholds)) throw Error("apd thresholds must be positive ascending");
  if (eval_width <= 0 || eval_height <= 0) throw Error("eval resolution must be positive");
}

std::vector<AlignedTrack> align_tracks(const std::vector<Trajectory>& preds,
                                       const std::vector<GroundTruthTrack>& gts) {
  std::map<int32_t, const GroundTruthTrack*> by_id;
  for (const auto& g : gts) by_id[g.surfel_id] = &g;
  std::vector<AlignedTrack> out;
  out.reserve(preds.size());
  for (const auto& p : preds) {
    auto it = by_id.find(p.query.id);
    if (it == by_id.end()) {
      throw QueryMismatch("prediction query id " + std::to_string(p.query.id) +
                          " has no ground truth track");
    }
    out.push_back({&p, it->second});
  }
  return out;
}

DeltaResult delta_avg_by_separation(const std::vector<AlignedTrack>& tracks, int pred_width,
                                    int pred_height, int gt_width, int gt_height,
                                    const EvalConfig& cfg, int min_sep, int max_sep) {
  cfg.validate();
  const double psx = static_cast<double>(cfg.eval_width) / pred_width;
  const double psy = static_cast<double>(cfg.eval_height) / pred_height;
  const double gsx = static_cast<double>(cfg.eval_width) / gt_width;
  const double gsy = static_cast<double>(cfg.eval_height) / gt_height;

  std::vector<int64_t> hits(cfg.delta_thresholds.size(), 0);
  int64_t counted = 0;
  for (const auto& tr : tracks) {
    const size_t T = tr.pred->points.size();
    for (size_t t = 0; t < T; ++t) {
      const TrajectoryPoint& pt = tr.pred->points[t];
      if (!pt.valid || !tr.gt->visible[t]) continue;
      const int sep = std::abs(static_cast<int>(t) - tr.pred->query.frame);
      if (sep < min_sep || sep > max_sep) continue;
      const double ex = pt.pixel.x() * psx - tr.gt->pixel[t].x() * gsx;
      const double ey = pt.pixel.y() * psy - tr.gt->pixel[t].y() * gsy;
      const double err = std::sqrt(ex * ex + ey * ey);
      for (size_t k = 0; k < cfg.delta_thresholds.size(); ++k) {
        if (err <= cfg.delta_thresholds[k]) ++hits[k];
      }
      ++counted;
    }
  }
  if (counted == 0) throw EmptyEval("delta_avg with no visible valid entry");
  DeltaResult out;
  out.counted = counted;
  out.per_threshold.resize(hits.size());
  for (size_t k = 0; k < hits.size(); ++k) {
    out.per_threshold[k] = 100.0 * static_cast<double>(hits[k]) / static_cast<double>(counted);
    out.average += out.per_threshold[k];
  }
  out.average /= static_cast<double>(hits.size());
  return out;
}

DeltaResult delta_avg(const std::vector<AlignedTrack>& tracks, int pred_width, int pred_height,
                      int gt_width, int gt_height, const EvalConfig& cfg) {
  return delta_avg_by_separation(tracks, pred_width, pred_height, gt_width, gt_height, cfg, 0,
                                 std::numeric_limits<int>::max());
}

double occlusion_accuracy(const std::vector<AlignedTrack>& tracks, const EvalConfig& cfg) {
  cfg.validate();
  int64_t correct = 0, counted = 0;
  for (const auto& tr : tracks) {
    for (size_t t = 0; t < tr.pred->points.size(); ++t) {
      const TrajectoryPoint& pt = tr.pred->points[t];
      if (!pt.valid) continue;
      const bool pred_vis = pt.visible_prob >= cfg.vis_threshold;
      const bool gt_vis = tr.gt->visible[t] != 0;
      correct += pred_vis == gt_vis ? 1 : 0;
      ++counted;
    }
  }
  if (counted == 0) throw EmptyEval("occlusion accuracy with no valid entry");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(counted);
}

namespace {

double median(std::vector<double> v) {
  const size_t n = v.size();
  std::sort(v.begin(), v.end());
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double apd(const std::vector<Apd3dEntry>& entries, const EvalConfig& cfg) {
  cfg.validate();
  if (entries.empty()) throw EmptyEval("apd with no entries");
  std::vector<double> pred_norms, gt_norms, ratios;
  pred_norms.reserve(entries.size());
  gt_norms.reserve(entries.size());
  for (const auto& e : entries) {
    const double pn = e.pred.norm();
    if (pn <= 0.0) throw ZeroNormPrediction("apd prediction with zero norm");
    pred_norms.push_back(pn);
    gt_norms.push_back(e.gt.norm());
    ratios.push_back(e.gt.norm() / pn);
  }
  const double scale = cfg.apd_ratio_of_medians ? median(gt_norms) / median(pred_norms)
                                                : median(ratios);
  double acc = 0.0;
  for (double tau : cfg.apd_thresholds) {
    int64_t hits = 0;
    for (const auto& e : entries) {
      if ((scale * e.pred - e.gt).norm() <= tau) ++hits;
    }
    acc += 100.0 * static_cast<double>(hits) / static_cast<double>(entries.size());
  }
  return acc / static_cast<double>(cfg.apd_thresholds.size());
}

std::vector<size_t> dynamic_split(const std::vector<GroundTruthTrack>& gts,
                                  const std::vector<Camera>& cameras, const EvalConfig& cfg) {
  cfg.validate();
  if (cameras.empty()) return {};
  for (const auto& cam : cameras) {
    if (!cam.same_pose(cameras[0])) return {};  // moving camera: excluded entirely
  }
  const double diag = std::sqrt(static_cast<double>(cameras[0].width) * cameras[0].width +
                                static_cast<double>(cameras[0].height) * cameras[0].height);
  const double min_disp = cfg.dynamic_split_fraction * diag;

  std::vector<size_t> out;
  for (size_t i = 0; i < gts.size(); ++i) {
    const GroundTruthTrack& g = gts[i];
    double max_disp = 0.0;
    for (size_t a = 0; a < g.pixel.size(); ++a) {
      if (!g.visible[a]) continue;
      for (size_t b = a + 1; b < g.pixel.size(); ++b) {
        if (!g.visible[b]) continue;
        max_disp = std::max(max_disp, (g.pixel[a] - g.pixel[b]).norm());
      }
    }
    if (max_disp >= min_disp) out.push_back(i);
  }
  return out;
}

std::vector<size_t> static_split(const std::vector<GroundTruthTrack>& gts) {
  std::vector<size_t> out;
  for (size_t i = 0; i < gts.size(); ++i) {
    if (!gts[i].is_dynamic) out.push_back(i);
  }
  return out;
}

EvalReport evaluate_tracks(const std::vector<AlignedTrack>& tracks,
                           const std::vector<Camera>& cameras, int pred_width, int pred_height,
                           int gt_width, int gt_height, const EvalConfig& cfg, bool with_delta) {
  EvalReport report;
  report.counts.tracks = static_cast<int64_t>(tracks.size());
  if (with_delta) {
    const DeltaResult d = delta_avg(tracks, pred_width, pred_height, gt_width, gt_height, cfg);
    report.per_threshold = d.per_threshold;
    report.delta_avg = d.average;
    report.counts.visible_points = d.counted;
  } else {
    for (const auto& tr : tracks) {
      for (size_t t = 0; t < tr.pred->points.size(); ++t) {
        if (tr.pred->points[t].valid && tr.gt->visible[t]) ++report.counts.visible_points;
      }
    }
  }
  for (const auto& tr : tracks) {
    for (const auto& pt : tr.pred->points) report.counts.frames += pt.valid ? 1 : 0;
  }
  report.occlusion_accuracy = occlusion_accuracy(tracks, cfg);

  // 3D: evaluated when every counted prediction entry carries a 3D point.
  std::vector<Apd3dEntry> entries;
  bool any3d = false, missing3d = false;
  for (const auto& tr : tracks) {
    const Camera& cam_q = cameras[static_cast<size_t>(tr.pred->query.frame)];
    for (size_t t = 0; t < tr.pred->points.size(); ++t) {
      const TrajectoryPoint& pt = tr.pred->points[t];
      if (!pt.valid || !tr.gt->visible[t]) continue;
      if (!pt.has_point3d) {
        missing3d = true;
        continue;
      }
      any3d = true;
      entries.push_back({pt.point3d, cam_q.world_to_camera(tr.gt->world[t])});
    }
  }
  if (any3d) {
    // Entries with a missing predicted depth stay in the denominator as
    // misses rather than aborting the whole evaluation.
    double value = apd(entries, cfg);
    if (missing3d) {
      int64_t total = 0;
      for (const auto& tr : tracks) {
        for (size_t t = 0; t < tr.pred->points.size(); ++t) {
          if (tr.pred->points[t].valid && tr.gt->visible[t]) ++total;
        }
      }
      value *= static_cast<double>(entries.size()) / static_cast<double>(total);
    }
    report.apd = value;
  }
  return report;
}

}  // namespace corrtrack
