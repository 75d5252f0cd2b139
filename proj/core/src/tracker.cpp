#include "corrtrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>

#include "corrtrack/errors.hpp"

namespace corrtrack {

namespace {

struct Taps {
  int64_t idx[4];
  double w[4];
  int count = 0;
};

Taps bilinear_taps_checked(const Eigen::Vector2d& pixel, int W, int H) {
  double px = pixel.x(), py = pixel.y();
  // Valid domain is the image footprint; between the border pixel center and
  // the footprint edge the sample clamps to the edge pixel.
  if (!(px >= -0.5 && py >= -0.5 && px <= W - 0.5 && py <= H - 0.5)) {
    throw OutOfBounds("pixel outside image bounds");
  }
  px = std::clamp(px, 0.0, W - 1.0);
  py = std::clamp(py, 0.0, H - 1.0);
  const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(px)), W - 1);
  const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(py)), H - 1);
  const int64_t x1 = std::min<int64_t>(x0 + 1, W - 1);
  const int64_t y1 = std::min<int64_t>(y0 + 1, H - 1);
  const double fx = px - static_cast<double>(x0);
  const double fy = py - static_cast<double>(y0);
  Taps t;
  t.idx[0] = y0 * W + x0; t.w[0] = (1 - fx) * (1 - fy);
  t.idx[1] = y0 * W + x1; t.w[1] = fx * (1 - fy);
  t.idx[2] = y1 * W + x0; t.w[2] = (1 - fx) * fy;
  t.idx[3] = y1 * W + x1; t.w[3] = fx * fy;
  t.count = 4;
  return t;
}

int64_t nearest_index(const Eigen::Vector2d& pixel, int W, int H) {
  if (!(pixel.x() >= -0.5 && pixel.y() >= -0.5 && pixel.x() <= W - 0.5 && pixel.y() <= H - 0.5)) {
    throw OutOfBounds("pixel outside image bounds");
  }
  const int64_t x = std::clamp<int64_t>(std::lround(pixel.x()), 0, W - 1);
  const int64_t y = std::clamp<int64_t>(std::lround(pixel.y()), 0, H - 1);
  return y * W + x;
}

}  // namespace

Eigen::VectorXd sample_grid(const Tensor& grid, const Eigen::Vector2d& pixel, SamplingMode mode) {
  const bool has_channels = grid.rank() == 3;
  const int H = static_cast<int>(grid.dim(0));
  const int W = static_cast<int>(grid.dim(1));
  const int64_t C = has_channels ? grid.dim(2) : 1;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(C);
  if (mode == SamplingMode::Nearest) {
    const int64_t pi = nearest_index(pixel, W, H);
    for (int64_t c = 0; c < C; ++c) out[c] = grid[pi * C + c];
    return out;
  }
  const Taps taps = bilinear_taps_checked(pixel, W, H);
  for (int k = 0; k < taps.count; ++k) {
    if (taps.w[k] == 0.0) continue;
    for (int64_t c = 0; c < C; ++c) out[c] += taps.w[k] * grid[taps.idx[k] * C + c];
  }
  return out;
}

Eigen::VectorXd sample_descriptor(const Tensor& descriptors, const Eigen::Vector2d& pixel,
                                  SamplingMode mode) {
  Eigen::VectorXd d = sample_grid(descriptors, pixel, mode);
  const double n = d.norm();
  if (n > 0.0) d /= n;
  return d;
}

Tensor resize_image(const Tensor& image, int new_width, int new_height) {
  if (image.rank() != 3) throw ShapeMismatch("resize_image input must be HWC");
  const int H = static_cast<int>(image.dim(0));
  const int W = static_cast<int>(image.dim(1));
  const int64_t C = image.dim(2);
  if (new_width < 1 || new_height < 1) throw Error("resize target must be positive");
  Tensor out({new_height, new_width, C});
  for (int y = 0; y < new_height; ++y) {
    // Align pixel centers of the two grids.
    const double sy = new_height > 1
                          ? static_cast<double>(y) * (H - 1) / (new_height - 1)
                          : 0.0;
    for (int x = 0; x < new_width; ++x) {
      const double sx = new_width > 1
                            ? static_cast<double>(x) * (W - 1) / (new_width - 1)
                            : 0.0;
      const Eigen::VectorXd v =
          sample_grid(image, Eigen::Vector2d(sx, sy), SamplingMode::Bilinear);
      for (int64_t c = 0; c < C; ++c) out.at(y, x, c) = v[c];
    }
  }
  return out;
}

std::vector<CorrespondResult> correspond(const std::vector<Eigen::VectorXd>& query_descriptors,
                                         const Tensor& target_descriptors) {
  const int H = static_cast<int>(target_descriptors.dim(0));
  const int W = static_cast<int>(target_descriptors.dim(1));
  const int64_t d = target_descriptors.dim(2);
  const int64_t n_pix = static_cast<int64_t>(H) * W;

  // Per-pixel inverse norms so the argmax is the cosine argmax even if the
  // stored descriptors are rescaled.
  std::vector<double> inv_norm(static_cast<size_t>(n_pix), 0.0);
  for (int64_t p = 0; p < n_pix; ++p) {
    double s = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      const double v = target_descriptors[p * d + c];
      s += v * v;
    }
    if (s > 0.0) inv_norm[static_cast<size_t>(p)] = 1.0 / std::sqrt(s);
  }

  std::vector<CorrespondResult> out(query_descriptors.size());
  for (size_t qi = 0; qi < query_descriptors.size(); ++qi) {
    Eigen::VectorXd q = query_descriptors[qi];
    if (static_cast<int64_t>(q.size()) != d) throw ShapeMismatch("descriptor dims differ");
    const double qn = q.norm();
    if (qn > 0.0) q /= qn;
    double best = -2.0;
    int64_t best_p = 0;
    for (int64_t p = 0; p < n_pix; ++p) {
      double s = 0.0;
      const double* tp = target_descriptors.data() + p * d;
      for (int64_t c = 0; c < d; ++c) s += q[c] * tp[c];
      s *= inv_norm[static_cast<size_t>(p)];
      if (s > best) {  // strict: ties keep the lowest row-major index
        best = s;
        best_p = p;
      }
    }
    out[qi].pixel = Eigen::Vector2i(static_cast<int>(best_p % W), static_cast<int>(best_p / W));
    out[qi].score = best;
  }
  return out;
}

ModelTrackerBackend::ModelTrackerBackend(const ModelParams& params, std::vector<Tensor> frames)
    : params_(params), frames_(std::move(frames)) {
  if (frames_.empty()) throw Error("tracker needs at least one frame");
  height_ = static_cast<int>(frames_[0].dim(0));
  width_ = static_cast<int>(frames_[0].dim(1));
}

PairData ModelTrackerBackend::pair(int query_frame, int target_frame) const {
  const ForwardOutputs out = forward(params_, frames_[static_cast<size_t>(query_frame)],
                                     frames_[static_cast<size_t>(target_frame)]);
  PairData d;
  d.desc_q = out.view1.descriptors;
  d.desc_t = out.view2.descriptors;
  d.vis_logits_q = out.view1.vis_logits;
  d.pointmap_t_in_q = out.view2.pointmap;
  d.pointmap_q_in_q = out.view1.pointmap;
  return d;
}

OracleTrackerBackend::OracleTrackerBackend(const Scene& scene,
                                           const std::vector<RenderedFrame>& frames)
    : scene_(scene), frames_(frames) {
  const int32_t n = scene.num_surfels();
  surfel_pixel_.resize(frames.size());
  for (size_t t = 0; t < frames.size(); ++t) {
    surfel_pixel_[t].assign(static_cast<size_t>(n), -1);
    for (size_t pi = 0; pi < frames[t].surfel_id.size(); ++pi) {
      const int32_t id = frames[t].surfel_id[pi];
      if (id >= 0) surfel_pixel_[t][static_cast<size_t>(id)] = static_cast<int64_t>(pi);
    }
  }
}

PairData OracleTrackerBackend::pair(int query_frame, int target_frame) const {
  const RenderedFrame& fq = frames_[static_cast<size_t>(query_frame)];
  const RenderedFrame& ft = frames_[static_cast<size_t>(target_frame)];
  const Camera& cam_q = scene_.cameras[static_cast<size_t>(query_frame)];
  const int W = scene_.spec.width, H = scene_.spec.height;

  PairData d;
  d.sparse = true;
  d.ids_q = &fq.surfel_id;
  d.ids_t = &ft.surfel_id;

  // Ground-truth pointmaps in the query camera frame.
  auto remap = [&](const RenderedFrame& f) {
    Tensor out({H, W, 3});
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        if (!f.valid[static_cast<size_t>(y) * W + x]) continue;
        const Eigen::Vector3d p(f.world_points.at(y, x, 0), f.world_points.at(y, x, 1),
                                f.world_points.at(y, x, 2));
        const Eigen::Vector3d q = cam_q.world_to_camera(p);
        out.at(y, x, 0) = q[0];
        out.at(y, x, 1) = q[1];
        out.at(y, x, 2) = q[2];
      }
    }
    return out;
  };
  d.pointmap_t_in_q = remap(ft);
  d.pointmap_q_in_q = remap(fq);

  // Oracle visibility logits: +20 when the pixel's surfel is visible in the
  // target frame, -20 when not (empty pixels count as not visible).
  d.vis_logits_q = Tensor({H, W});
  const std::vector<int64_t>& s2p_t = surfel_pixel_[static_cast<size_t>(target_frame)];
  for (int64_t pi = 0; pi < static_cast<int64_t>(fq.surfel_id.size()); ++pi) {
    const int32_t id = fq.surfel_id[static_cast<size_t>(pi)];
    const bool vis = id >= 0 && s2p_t[static_cast<size_t>(id)] >= 0;
    d.vis_logits_q[pi] = vis ? 20.0 : -20.0;
  }
  return d;
}

namespace {

// Sparse equivalent of one-hot descriptors + bilinear sampling + cosine
// argmax: the query's blended one-hot has weight w_id per neighboring
// surfel; similarity at a target pixel is w_{id(p)} / ||w||, so the argmax
// is the present id with the largest weight, at its (unique) target pixel.
// Ties and the no-match case fall back to the lowest row-major pixel,
// matching the dense tie-break.
CorrespondResult sparse_correspond_one(const Eigen::Vector2d& query_pixel,
                                       const std::vector<int32_t>& ids_q,
                                       const std::vector<int64_t>& s2p_t, int W, int H,
                                       SamplingMode mode) {
  std::map<int32_t, double> weights;  // ordered: deterministic iteration
  if (mode == SamplingMode::Nearest) {
    const int64_t pi = nearest_index(query_pixel, W, H);
    const int32_t id = ids_q[static_cast<size_t>(pi)];
    if (id >= 0) weights[id] = 1.0;
  } else {
    const Taps taps = bilinear_taps_checked(query_pixel, W, H);
    for (int k = 0; k < taps.count; ++k) {
      if (taps.w[k] == 0.0) continue;
      const int32_t id = ids_q[static_cast<size_t>(taps.idx[k])];
      if (id >= 0) weights[id] += taps.w[k];
    }
  }
  double norm_sq = 0.0;
  for (const auto& [id, w] : weights) norm_sq += w * w;
  const double inv_norm = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;

  CorrespondResult best;  // defaults to pixel (0,0), score 0
  best.score = 0.0;
  int64_t best_pi = 0;
  bool found = false;
  for (const auto& [id, w] : weights) {
    // Ids absent from the target frame (including ids beyond its table) have
    // no matching pixel.
    if (static_cast<size_t>(id) >= s2p_t.size()) continue;
    const int64_t pi = s2p_t[static_cast<size_t>(id)];
    if (pi < 0) continue;
    const double score = w * inv_norm;
    if (!found || score > best.score || (score == best.score && pi < best_pi)) {
      best.score = score;
      best_pi = pi;
      found = true;
    }
  }
  if (found) {
    best.pixel = Eigen::Vector2i(static_cast<int>(best_pi % W), static_cast<int>(best_pi / W));
  }
  return best;
}

std::vector<int64_t> build_s2p(const std::vector<int32_t>& ids, int64_t num_pixels) {
  int32_t max_id = -1;
  for (int32_t id : ids) max_id = std::max(max_id, id);
  std::vector<int64_t> s2p(static_cast<size_t>(max_id + 1), -1);
  for (int64_t pi = 0; pi < num_pixels; ++pi) {
    const int32_t id = ids[static_cast<size_t>(pi)];
    if (id >= 0) s2p[static_cast<size_t>(id)] = pi;
  }
  return s2p;
}

std::vector<Trajectory> track_impl(const TrackerBackend& backend,
                                   const std::vector<TrackQuery>& queries, SamplingMode sampling,
                                   bool want_pointmap3d, int workers) {
  const int T = backend.num_frames();
  const int W = backend.width(), H = backend.height();
  std::vector<Trajectory> out(queries.size());
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    out[qi].query = queries[qi];
    out[qi].points.resize(static_cast<size_t>(T));
    if (queries[qi].frame < 0 || queries[qi].frame >= T) throw Error("query frame out of range");
  }

  auto process_frame = [&](int t) {
    // Group queries by query frame; each (t_q, t) pair is answered with one
    // backend evaluation, all of its queries at once.
    std::map<int, std::vector<size_t>> by_qframe;
    for (size_t qi = 0; qi < queries.size(); ++qi) {
      if (t < queries[qi].frame) continue;  // "first" mode: earlier frames stay invalid
      by_qframe[queries[qi].frame].push_back(qi);
    }
    for (const auto& [tq, idxs] : by_qframe) {
      if (t == tq) {
        PairData data;
        if (want_pointmap3d) data = backend.pair(tq, tq);
        for (size_t qi : idxs) {
          TrajectoryPoint& pt = out[qi].points[static_cast<size_t>(t)];
          pt.pixel = queries[qi].pixel;  // identity pair: no model in the loop
          pt.visible_prob = 1.0;
          pt.valid = true;
          if (want_pointmap3d) {
            const Eigen::VectorXd p = sample_grid(data.pointmap_q_in_q, queries[qi].pixel, sampling);
            pt.point3d = Eigen::Vector3d(p[0], p[1], p[2]);
            pt.has_point3d = true;
          }
        }
        continue;
      }
      const PairData data = backend.pair(tq, t);
      std::vector<CorrespondResult> corr(idxs.size());
      if (data.sparse) {
        const std::vector<int64_t> s2p = build_s2p(*data.ids_t, static_cast<int64_t>(W) * H);
        for (size_t k = 0; k < idxs.size(); ++k) {
          corr[k] = sparse_correspond_one(queries[idxs[k]].pixel, *data.ids_q, s2p, W, H, sampling);
        }
      } else {
        std::vector<Eigen::VectorXd> qdesc(idxs.size());
        for (size_t k = 0; k < idxs.size(); ++k) {
          qdesc[k] = sample_descriptor(data.desc_q, queries[idxs[k]].pixel, sampling);
        }
        corr = correspond(qdesc, data.desc_t);
      }
      for (size_t k = 0; k < idxs.size(); ++k) {
        const size_t qi = idxs[k];
        TrajectoryPoint& pt = out[qi].points[static_cast<size_t>(t)];
        pt.pixel = corr[k].pixel.cast<double>();
        const Eigen::VectorXd logit = sample_grid(data.vis_logits_q, queries[qi].pixel, sampling);
        pt.visible_prob = 1.0 / (1.0 + std::exp(-logit[0]));
        pt.valid = true;
        if (want_pointmap3d) {
          const Eigen::VectorXd p =
              sample_grid(data.pointmap_t_in_q, pt.pixel, SamplingMode::Bilinear);
          pt.point3d = Eigen::Vector3d(p[0], p[1], p[2]);
          pt.has_point3d = true;
        }
      }
    }
  };

  const int n_workers = std::max(1, std::min(workers, T));
  if (n_workers == 1) {
    for (int t = 0; t < T; ++t) process_frame(t);
  } else {
    std::vector<std::future<void>> futures;
    for (int w = 0; w < n_workers; ++w) {
      futures.push_back(std::async(std::launch::async, [&, w]() {
        for (int t = w; t < T; t += n_workers) process_frame(t);
      }));
    }
    for (auto& f : futures) f.get();
  }
  return out;
}

}  // namespace

std::vector<Trajectory> track2d(const TrackerBackend& backend,
                                const std::vector<TrackQuery>& queries, SamplingMode sampling,
                                int workers) {
  return track_impl(backend, queries, sampling, /*want_pointmap3d=*/false, workers);
}

std::vector<Trajectory> track3d_pointmap(const TrackerBackend& backend,
                                         const std::vector<TrackQuery>& queries,
                                         SamplingMode sampling, int workers) {
  return track_impl(backend, queries, sampling, /*want_pointmap3d=*/true, workers);
}

Eigen::Vector3d lift_point(const Eigen::Vector2d& pixel, const Tensor& depth_map,
                           const Camera& camera, IntrinsicsSource intrinsics) {
  const int W = static_cast<int>(depth_map.dim(1));
  const int H = static_cast<int>(depth_map.dim(0));
  const int64_t pi = nearest_index(pixel, W, H);
  const double depth = depth_map[pi];
  if (depth <= 0.0) throw MissingDepth("no depth at the corresponded pixel");
  Camera cam = camera;
  if (intrinsics == IntrinsicsSource::Estimated) {
    const Camera est = estimate_intrinsics(W, H);
    cam.fx = est.fx;
    cam.fy = est.fy;
    cam.cx = est.cx;
    cam.cy = est.cy;
  }
  return unproject(pixel, depth, cam);  // world frame
}

std::vector<Trajectory> track3d_lifted(std::vector<Trajectory> tracks2d,
                                       const std::vector<const Tensor*>& depth_maps,
                                       const std::vector<Camera>& cameras,
                                       IntrinsicsSource intrinsics) {
  for (auto& tr : tracks2d) {
    const Camera& cam_q = cameras[static_cast<size_t>(tr.query.frame)];
    for (size_t t = 0; t < tr.points.size(); ++t) {
      TrajectoryPoint& pt = tr.points[t];
      pt.has_point3d = false;
      if (!pt.valid) continue;
      const Tensor& depth = *depth_maps[t];
      const int W = static_cast<int>(depth.dim(1));
      const int H = static_cast<int>(depth.dim(0));
      const int64_t pi = nearest_index(pt.pixel, W, H);
      if (depth[pi] <= 0.0) continue;  // missing depth: no 3D point
      const Eigen::Vector3d world = lift_point(pt.pixel, depth, cameras[t], intrinsics);
      pt.point3d = cam_q.world_to_camera(world);
      pt.has_point3d = true;
    }
  }
  return tracks2d;
}

}  // namespace corrtrack
