#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "corrtrack/metrics.hpp"
#include "corrtrack/rng.hpp"
#include "corrtrack/tracker.hpp"

using namespace corrtrack;

namespace {

Tensor unit_descriptors(int w, int h, int d, uint64_t seed) {
  Rng rng(seed);
  Tensor t({h, w, d});
  for (int64_t p = 0; p < static_cast<int64_t>(w) * h; ++p) {
    double norm_sq = 1e-30;
    for (int64_t c = 0; c < d; ++c) {
      t[p * d + c] = rng.normal();
      norm_sq += t[p * d + c] * t[p * d + c];
    }
    for (int64_t c = 0; c < d; ++c) t[p * d + c] /= std::sqrt(norm_sq);
  }
  return t;
}

SceneSpec tracker_spec(uint64_t seed, CameraPathKind kind = CameraPathKind::Pan) {
  SceneSpec spec;
  spec.seed = seed;
  spec.num_frames = 14;
  spec.width = 32;
  spec.height = 24;
  spec.num_static_points = 900;
  spec.num_objects = 2;
  spec.min_speed = 0.015;
  spec.max_speed = 0.04;
  spec.camera_path.kind = kind;
  spec.camera_path.amplitude = 0.5;
  return spec;
}

std::vector<TrackQuery> queries_from_tracks(const std::vector<GroundTruthTrack>& tracks,
                                            int count, uint64_t seed) {
  std::vector<size_t> eligible;
  for (size_t i = 0; i < tracks.size(); ++i) {
    int vis = 0;
    for (uint8_t v : tracks[i].visible) vis += v;
    if (vis >= 6) eligible.push_back(i);
  }
  Rng rng(seed);
  std::vector<TrackQuery> queries;
  const auto sel = sample_without_replacement(eligible.size(),
                                              static_cast<uint64_t>(count), rng);
  for (uint64_t i : sel) {
    const GroundTruthTrack& tr = tracks[eligible[static_cast<size_t>(i)]];
    for (size_t t = 0; t < tr.visible.size(); ++t) {
      if (!tr.visible[t]) continue;
      TrackQuery q;
      q.id = tr.surfel_id;
      q.frame = static_cast<int>(t);
      q.pixel = Eigen::Vector2d(std::lround(tr.pixel[t].x()), std::lround(tr.pixel[t].y()));
      queries.push_back(q);
      break;
    }
  }
  return queries;
}

}  // namespace

TEST_CASE("sample_descriptor at integer pixels equals the stored descriptor") {
  const Tensor desc = unit_descriptors(6, 5, 4, 1);
  const Eigen::VectorXd d = sample_descriptor(desc, Eigen::Vector2d(3, 2), SamplingMode::Bilinear);
  for (int64_t c = 0; c < 4; ++c) {
    CHECK(d[c] == doctest::Approx(desc[(2 * 6 + 3) * 4 + c]).epsilon(1e-9));
  }
  const Eigen::VectorXd n = sample_descriptor(desc, Eigen::Vector2d(3.4, 1.6),
                                              SamplingMode::Nearest);
  for (int64_t c = 0; c < 4; ++c) {
    CHECK(n[c] == doctest::Approx(desc[(2 * 6 + 3) * 4 + c]).epsilon(1e-12));
  }
}

TEST_CASE("sample_descriptor midpoint blends and re-normalizes") {
  Tensor desc({1, 2, 3});
  desc.at(0, 0, 0) = 1.0;  // e1
  desc.at(0, 1, 1) = 1.0;  // e2
  const Eigen::VectorXd d = sample_descriptor(desc, Eigen::Vector2d(0.5, 0), SamplingMode::Bilinear);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(d[0] == doctest::Approx(s).epsilon(1e-9));
  CHECK(d[1] == doctest::Approx(s).epsilon(1e-9));
  CHECK(d[2] == doctest::Approx(0.0));
  CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sample_descriptor matches a 4-term weighted-sum oracle at random points") {
  const Tensor desc = unit_descriptors(7, 6, 5, 2);
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const double px = rng.uniform(0, 6.0);
    const double py = rng.uniform(0, 5.0);
    const int x0 = std::min(static_cast<int>(px), 6);
    const int y0 = std::min(static_cast<int>(py), 5);
    const int x1 = std::min(x0 + 1, 6);
    const int y1 = std::min(y0 + 1, 5);
    const double fx = px - x0, fy = py - y0;
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(5);
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int idx[4] = {y0 * 7 + x0, y0 * 7 + x1, y1 * 7 + x0, y1 * 7 + x1};
    for (int k = 0; k < 4; ++k) {
      for (int c = 0; c < 5; ++c) expect[c] += w[k] * desc[idx[k] * 5 + c];
    }
    expect.normalize();
    const Eigen::VectorXd got =
        sample_descriptor(desc, Eigen::Vector2d(px, py), SamplingMode::Bilinear);
    CHECK((got - expect).norm() < 1e-9);
  }
  CHECK_THROWS_AS(sample_descriptor(desc, Eigen::Vector2d(7.2, 0), SamplingMode::Bilinear),
                  OutOfBounds);
}

TEST_CASE("correspond maps identical unique descriptor grids to the identity") {
  const Tensor desc = unit_descriptors(9, 7, 8, 5);
  std::vector<Eigen::VectorXd> queries;
  for (int64_t p = 0; p < 9 * 7; ++p) {
    Eigen::VectorXd q(8);
    for (int64_t c = 0; c < 8; ++c) q[c] = desc[p * 8 + c];
    queries.push_back(q);
  }
  const auto res = correspond(queries, desc);
  for (int64_t p = 0; p < 9 * 7; ++p) {
    CHECK(res[static_cast<size_t>(p)].pixel.x() == p % 9);
    CHECK(res[static_cast<size_t>(p)].pixel.y() == p / 9);
    CHECK(res[static_cast<size_t>(p)].score == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("correspond finds an orthogonal one-hot target") {
  Tensor desc({8, 8, 8});
  // Fill with a base direction everywhere, a distinct orthogonal one at (5,7).
  for (int64_t p = 0; p < 64; ++p) desc[p * 8 + 0] = 1.0;
  const int64_t target = 7 * 8 + 5;
  desc[target * 8 + 0] = 0.0;
  desc[target * 8 + 3] = 1.0;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(8);
  q[3] = 1.0;
  const auto res = correspond({q}, desc);
  CHECK(res[0].pixel.x() == 5);
  CHECK(res[0].pixel.y() == 7);
}

TEST_CASE("correspond breaks ties at the lowest row-major index") {
  Tensor desc({4, 4, 2});
  for (int64_t p = 0; p < 16; ++p) desc[p * 2 + 0] = 1.0;  // all identical
  Eigen::VectorXd q(2);
  q << 1.0, 0.0;
  const auto res = correspond({q}, desc);
  CHECK(res[0].pixel.x() == 0);
  CHECK(res[0].pixel.y() == 0);
}

TEST_CASE("correspond is invariant to positive per-pixel rescaling") {
  Tensor desc = unit_descriptors(8, 6, 5, 9);
  std::vector<Eigen::VectorXd> queries;
  Rng rng(10);
  for (int i = 0; i < 12; ++i) {
    Eigen::VectorXd q(5);
    for (int c = 0; c < 5; ++c) q[c] = rng.normal();
    queries.push_back(q);
  }
  const auto base = correspond(queries, desc);
  Tensor scaled = desc;
  for (int64_t p = 0; p < 48; ++p) {
    const double s = rng.uniform(0.1, 5.0);
    for (int64_t c = 0; c < 5; ++c) scaled[p * 5 + c] *= s;
  }
  const auto res = correspond(queries, scaled);
  for (size_t i = 0; i < queries.size(); ++i) {
    CHECK(res[i].pixel == base[i].pixel);
  }
}

TEST_CASE("oracle track2d recovers ground-truth tracks within half a pixel") {
  const Scene scene = generate_scene(tracker_spec(71));
  const std::vector<RenderedFrame> frames = render_all(scene);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const OracleTrackerBackend backend(scene, frames);
  const std::vector<TrackQuery> queries = queries_from_tracks(tracks, 25, 4);
  REQUIRE(!queries.empty());
  const std::vector<Trajectory> result = track2d(backend, queries, SamplingMode::Bilinear);

  for (const auto& tr : result) {
    const GroundTruthTrack* gt = nullptr;
    for (const auto& g : tracks) {
      if (g.surfel_id == tr.query.id) gt = &g;
    }
    REQUIRE(gt != nullptr);
    for (size_t t = 0; t < tr.points.size(); ++t) {
      if (static_cast<int>(t) < tr.query.frame) {
        CHECK_FALSE(tr.points[t].valid);  // first mode
        continue;
      }
      CHECK(tr.points[t].valid);
      if (!gt->visible[t]) continue;
      const double err = (tr.points[t].pixel - gt->pixel[t]).norm();
      CHECK(err <= 0.5 * std::sqrt(2.0) + 1e-9);
      CHECK(tr.points[t].visible_prob > 0.5);
    }
  }
}

TEST_CASE("track entries at the query frame are exact and bypass the model") {
  const Scene scene = generate_scene(tracker_spec(72));
  const std::vector<RenderedFrame> frames = render_all(scene);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const OracleTrackerBackend backend(scene, frames);
  std::vector<TrackQuery> queries = queries_from_tracks(tracks, 5, 5);
  // Fractional query pixel: the identity-pair entry must echo it exactly.
  queries[0].pixel += Eigen::Vector2d(0.25, -0.25);
  const auto result = track2d(backend, queries, SamplingMode::Bilinear);
  for (size_t i = 0; i < queries.size(); ++i) {
    const auto& pt = result[i].points[static_cast<size_t>(queries[i].frame)];
    CHECK(pt.pixel == queries[i].pixel);
    CHECK(pt.visible_prob == 1.0);
  }
}

TEST_CASE("sparse oracle correspondence equals dense one-hot correspondence") {
  // Materialize true one-hot descriptors at a small resolution and check the
  // sparse oracle path returns identical argmax pixels.
  SceneSpec spec = tracker_spec(73);
  spec.width = 16;
  spec.height = 12;
  spec.num_static_points = 250;
  const Scene scene = generate_scene(spec);
  const std::vector<RenderedFrame> frames = render_all(scene);
  const OracleTrackerBackend backend(scene, frames);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const std::vector<TrackQuery> queries = queries_from_tracks(tracks, 10, 6);

  const int tq = queries[0].frame;
  for (int t = 0; t < spec.num_frames; t += 3) {
    if (t == tq) continue;
    // Dense one-hot maps indexed by surfel id.
    const int32_t n = scene.num_surfels();
    const RenderedFrame& fq = frames[static_cast<size_t>(tq)];
    const RenderedFrame& ft = frames[static_cast<size_t>(t)];
    Tensor dq({12, 16, static_cast<int64_t>(n)});
    Tensor dt({12, 16, static_cast<int64_t>(n)});
    for (int64_t p = 0; p < 16 * 12; ++p) {
      if (fq.surfel_id[static_cast<size_t>(p)] >= 0) {
        dq[p * n + fq.surfel_id[static_cast<size_t>(p)]] = 1.0;
      }
      if (ft.surfel_id[static_cast<size_t>(p)] >= 0) {
        dt[p * n + ft.surfel_id[static_cast<size_t>(p)]] = 1.0;
      }
    }
    std::vector<Eigen::VectorXd> qdesc;
    std::vector<size_t> used;
    for (size_t qi = 0; qi < queries.size(); ++qi) {
      if (queries[qi].frame != tq) continue;
      qdesc.push_back(sample_descriptor(dq, queries[qi].pixel, SamplingMode::Bilinear));
      used.push_back(qi);
    }
    const auto dense = correspond(qdesc, dt);

    const auto result = track2d(backend, queries, SamplingMode::Bilinear);
    for (size_t k = 0; k < used.size(); ++k) {
      const auto& pt = result[used[k]].points[static_cast<size_t>(t)];
      CHECK(pt.pixel.x() == dense[k].pixel.x());
      CHECK(pt.pixel.y() == dense[k].pixel.y());
    }
  }
}

TEST_CASE("track3d_pointmap at the query frame returns the own-frame pointmap") {
  const Scene scene = generate_scene(tracker_spec(74));
  const std::vector<RenderedFrame> frames = render_all(scene);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const OracleTrackerBackend backend(scene, frames);
  const std::vector<TrackQuery> queries = queries_from_tracks(tracks, 8, 7);
  const auto result = track3d_pointmap(backend, queries, SamplingMode::Bilinear);
  for (const auto& tr : result) {
    const auto& pt = tr.points[static_cast<size_t>(tr.query.frame)];
    REQUIRE(pt.has_point3d);
    // Integer query pixel: X^{1,1} at that pixel, in the query camera frame.
    const Camera& cam = scene.cameras[static_cast<size_t>(tr.query.frame)];
    const RenderedFrame& f = frames[static_cast<size_t>(tr.query.frame)];
    const int x = static_cast<int>(tr.query.pixel.x());
    const int y = static_cast<int>(tr.query.pixel.y());
    const Eigen::Vector3d expect = cam.world_to_camera(
        Eigen::Vector3d(f.world_points.at(y, x, 0), f.world_points.at(y, x, 1),
                        f.world_points.at(y, x, 2)));
    CHECK((pt.point3d - expect).norm() < 1e-9);
  }
}

TEST_CASE("oracle 3D pointmap tracks match the surfel position on on-ray geometry") {
  // Surfels placed exactly on pixel-center rays: the rendered pointmap holds
  // the exact surfel positions, so oracle 3D tracking returns them.
  Scene scene;
  scene.spec.num_frames = 2;
  scene.spec.width = 16;
  scene.spec.height = 12;
  scene.spec.num_objects = 0;
  const Camera cam = estimate_intrinsics(16, 12);
  scene.cameras = {cam, cam};
  Rng rng(8);
  for (int i = 0; i < 40; ++i) {
    const int x = static_cast<int>(rng.index(16));
    const int y = static_cast<int>(rng.index(12));
    const double depth = rng.uniform(2.0, 6.0);
    Surfel s;
    s.position = unproject(Eigen::Vector2d(x, y), depth, cam);
    s.color = Eigen::Vector3d(0.5, 0.5, 0.5);
    scene.static_surfels.push_back(s);
  }
  scene.spec.num_static_points = 40;
  const std::vector<RenderedFrame> frames = render_all(scene);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const OracleTrackerBackend backend(scene, frames);
  std::vector<TrackQuery> queries;
  for (const auto& tr : tracks) {
    if (!tr.visible[0]) continue;
    TrackQuery q;
    q.id = tr.surfel_id;
    q.frame = 0;
    q.pixel = tr.pixel[0];
    queries.push_back(q);
  }
  REQUIRE(!queries.empty());
  const auto result = track3d_pointmap(backend, queries, SamplingMode::Bilinear);
  for (const auto& tr : result) {
    for (size_t t = 0; t < 2; ++t) {
      if (!tracks[static_cast<size_t>(tr.query.id)].visible[t]) continue;
      const Eigen::Vector3d expect =
          cam.world_to_camera(tracks[static_cast<size_t>(tr.query.id)].world[t]);
      CHECK((tr.points[t].point3d - expect).norm() < 1e-6);
    }
  }
}

TEST_CASE("lifted 3D equals pointmap 3D with ground-truth depth and intrinsics") {
  const Scene scene = generate_scene(tracker_spec(75, CameraPathKind::Orbit));
  const std::vector<RenderedFrame> frames = render_all(scene);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const OracleTrackerBackend backend(scene, frames);
  const std::vector<TrackQuery> queries = queries_from_tracks(tracks, 15, 9);
  const auto via_pointmap = track3d_pointmap(backend, queries, SamplingMode::Bilinear);
  auto base2d = track2d(backend, queries, SamplingMode::Bilinear);
  std::vector<const Tensor*> depths;
  for (const auto& f : frames) depths.push_back(&f.depth);
  const auto lifted =
      track3d_lifted(std::move(base2d), depths, scene.cameras, IntrinsicsSource::GroundTruth);

  for (size_t i = 0; i < via_pointmap.size(); ++i) {
    for (size_t t = 0; t < via_pointmap[i].points.size(); ++t) {
      const auto& a = via_pointmap[i].points[t];
      const auto& b = lifted[i].points[t];
      if (!a.valid || !a.has_point3d || !b.has_point3d) continue;
      CHECK((a.point3d - b.point3d).norm() < 1e-6);
    }
  }
}

TEST_CASE("lift_point raises MissingDepth on empty pixels") {
  Tensor depth({4, 4});
  const Camera cam = estimate_intrinsics(4, 4);
  CHECK_THROWS_AS(lift_point(Eigen::Vector2d(1, 1), depth, cam, IntrinsicsSource::GroundTruth),
                  MissingDepth);
}

TEST_CASE("estimated intrinsics introduce a scale error that median scaling removes") {
  // Camera with true fx != W, surfels along +z: the fx = W estimate rescales
  // x/y but pure-depth geometry keeps ratios, so APD with median scaling is
  // unaffected for a uniformly scaled cloud.
  Camera cam = estimate_intrinsics(16, 12);
  cam.fx = cam.fy = 24.0;  // true focal differs from the W = 16 estimate
  Tensor depth({12, 16});
  depth.fill(4.0);
  const Eigen::Vector2d px(10, 7);
  const Eigen::Vector3d gt_point = unproject(px, 4.0, cam);
  const Eigen::Vector3d est_point = lift_point(px, depth, cam, IntrinsicsSource::Estimated);
  CHECK((est_point - gt_point).norm() > 1e-3);  // systematic error present
  CHECK(est_point.z() == doctest::Approx(gt_point.z()));

  std::vector<Apd3dEntry> entries;
  for (int i = 0; i < 8; ++i) {
    // A cloud where estimated lifting is exactly a scale of the truth:
    // points on the optical axis direction scaled by depth.
    const double d = 2.0 + 0.5 * i;
    const Eigen::Vector2d p(8.0, 6.0);  // principal point: pure z geometry
    entries.push_back({unproject(p, d, estimate_intrinsics(16, 12)) * 1.0,
                       unproject(p, d, cam)});
  }
  EvalConfig cfg;
  CHECK(apd(entries, cfg) == doctest::Approx(100.0));
}

TEST_CASE("trajectory outputs are scheduling-invariant across worker counts") {
  const Scene scene = generate_scene(tracker_spec(76));
  const std::vector<RenderedFrame> frames = render_all(scene);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const OracleTrackerBackend backend(scene, frames);
  const std::vector<TrackQuery> queries = queries_from_tracks(tracks, 10, 11);
  const auto a = track2d(backend, queries, SamplingMode::Bilinear, 1);
  const auto b = track2d(backend, queries, SamplingMode::Bilinear, 3);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t t = 0; t < a[i].points.size(); ++t) {
      CHECK(a[i].points[t].pixel == b[i].points[t].pixel);
      CHECK(a[i].points[t].visible_prob == b[i].points[t].visible_prob);
      CHECK(a[i].points[t].valid == b[i].points[t].valid);
    }
  }
}

TEST_CASE("two identical frames keep the trajectory at the query pixel") {
  // Static scene, static camera: frame 2 duplicates frame 1 exactly.
  SceneSpec spec = tracker_spec(81, CameraPathKind::Static);
  spec.num_frames = 2;
  spec.num_objects = 0;
  const Scene scene = generate_scene(spec);
  const std::vector<RenderedFrame> frames = render_all(scene);
  REQUIRE(frames[0].surfel_id == frames[1].surfel_id);
  const std::vector<GroundTruthTrack> tracks = ground_truth_tracks(scene, frames);
  const OracleTrackerBackend backend(scene, frames);
  std::vector<TrackQuery> queries;
  for (const auto& tr : tracks) {
    if (!tr.visible[0]) continue;
    TrackQuery q;
    q.id = tr.surfel_id;
    q.frame = 0;
    q.pixel = Eigen::Vector2d(std::lround(tr.pixel[0].x()), std::lround(tr.pixel[0].y()));
    queries.push_back(q);
    if (queries.size() == 12) break;
  }
  const auto result = track2d(backend, queries, SamplingMode::Bilinear);
  for (size_t i = 0; i < result.size(); ++i) {
    CHECK(result[i].points[0].pixel == queries[i].pixel);
    CHECK(result[i].points[1].pixel == queries[i].pixel);
  }
}
