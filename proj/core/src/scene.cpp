#include "corrtrack/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "corrtrack/errors.hpp"

namespace corrtrack {

namespace {

// Saturated palette; cells and surfels draw from it with jitter so nearby
// pixels carry distinguishable appearance.
const Eigen::Vector3d kPalette[] = {
    {0.90, 0.15, 0.15}, {0.15, 0.75, 0.20}, {0.15, 0.35, 0.90}, {0.95, 0.80, 0.10},
    {0.80, 0.20, 0.85}, {0.10, 0.80, 0.80}, {0.95, 0.50, 0.10}, {0.55, 0.35, 0.15},
    {0.75, 0.85, 0.30}, {0.35, 0.15, 0.75},
};
constexpr int kPaletteSize = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));

uint64_t cell_hash(int64_t a, int64_t b, int64_t c, uint64_t salt) {
  uint64_t h = salt;
  h = mix_seed(h, static_cast<uint64_t>(a + (1 << 20)));
  h = mix_seed(h, static_cast<uint64_t>(b + (1 << 20)));
  h = mix_seed(h, static_cast<uint64_t>(c + (1 << 20)));
  return h;
}

Eigen::Vector3d clamp_color(Eigen::Vector3d c) {
  for (int i = 0; i < 3; ++i) c[i] = std::clamp(c[i], 0.0, 1.0);
  return c;
}

// Cell-quantized palette color plus per-surfel jitter.
Eigen::Vector3d textured_color(const Eigen::Vector3d& p, int palette_id, Rng& rng) {
  const double cell = 0.22;
  const uint64_t h = cell_hash(static_cast<int64_t>(std::floor(p.x() / cell)),
                               static_cast<int64_t>(std::floor(p.y() / cell)),
                               static_cast<int64_t>(std::floor(p.z() / cell)),
                               0x5eedcafe + static_cast<uint64_t>(palette_id));
  Eigen::Vector3d c = kPalette[h % kPaletteSize];
  for (int i = 0; i < 3; ++i) c[i] += rng.uniform(-0.06, 0.06);
  return clamp_color(c);
}

Camera base_camera(const SceneSpec& spec) {
  Camera cam = estimate_intrinsics(spec.width, spec.height);
  return cam;
}

}  // namespace

void SceneSpec::validate() const {
  if (num_frames < 2) throw Error("SceneSpec: num_frames must be >= 2");
  if (width < 8 || height < 8) throw Error("SceneSpec: resolution must be >= 8x8");
  if (min_speed < 0 || max_speed < min_speed) throw Error("SceneSpec: bad speed range");
  if (num_static_points < 0 || num_objects < 0) throw Error("SceneSpec: negative counts");
}

int32_t Scene::num_surfels() const {
  size_t n = static_surfels.size();
  for (const auto& o : objects) n += o.local_points.size();
  return static_cast<int32_t>(n);
}

Eigen::Vector3d Scene::surfel_world(int32_t id, int frame) const {
  if (id < static_cast<int32_t>(static_surfels.size())) {
    return static_surfels[static_cast<size_t>(id)].position;
  }
  size_t rest = static_cast<size_t>(id) - static_surfels.size();
  for (const auto& o : objects) {
    if (rest < o.local_points.size()) {
      return o.rotation[static_cast<size_t>(frame)] * o.local_points[rest] +
             o.translation[static_cast<size_t>(frame)];
    }
    rest -= o.local_points.size();
  }
  throw Error("surfel id out of range");
}

Eigen::Vector3d Scene::surfel_color(int32_t id) const {
  if (id < static_cast<int32_t>(static_surfels.size())) {
    return static_surfels[static_cast<size_t>(id)].color;
  }
  size_t rest = static_cast<size_t>(id) - static_surfels.size();
  for (const auto& o : objects) {
    if (rest < o.local_colors.size()) return o.local_colors[rest];
    rest -= o.local_points.size();
  }
  throw Error("surfel id out of range");
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Scene scene;
  scene.spec = spec;
  Rng rng(mix_seed(spec.seed, 0x5ce9e));

  const Camera base = base_camera(spec);
  const double wall_z = 12.0;
  const double orbit_target_z = 4.5;
  // Frustum half-extents at wall depth, padded just enough that the chosen
  // camera path keeps the wall covering the view.
  double pad_x = 0.3, pad_y = 0.3;
  switch (spec.camera_path.kind) {
    case CameraPathKind::Static:
      break;
    case CameraPathKind::Pan:
      pad_x += spec.camera_path.amplitude;
      pad_y += 0.25 * spec.camera_path.amplitude;
      break;
    case CameraPathKind::Orbit:
      pad_x += (wall_z - orbit_target_z) * std::tan(0.30 * spec.camera_path.amplitude);
      break;
  }
  const double half_w = 0.5 * wall_z * spec.width / base.fx + pad_x;
  const double half_h = 0.5 * wall_z * spec.height / base.fy + pad_y;

  // 80% of static surfels form a textured backdrop wall; a stratified grid
  // with jitter covers pixels far better than uniform sampling at the same
  // point budget. The rest scatter at mid depth for parallax.
  const int n_wall = spec.num_static_points * 19 / 20;
  const double aspect = half_w / half_h;
  const int grid_y = std::max(1, static_cast<int>(std::floor(std::sqrt(n_wall / aspect))));
  const int grid_x = std::max(1, (n_wall + grid_y - 1) / grid_y);
  const double pitch_x = 2.0 * half_w / grid_x;
  const double pitch_y = 2.0 * half_h / grid_y;
  for (int i = 0; i < spec.num_static_points; ++i) {
    Eigen::Vector3d p;
    if (i < n_wall) {
      const int gx = i % grid_x;
      const int gy = i / grid_x;
      p = Eigen::Vector3d(-half_w + (gx + 0.5 + rng.uniform(-0.25, 0.25)) * pitch_x,
                          -half_h + (gy % grid_y + 0.5 + rng.uniform(-0.25, 0.25)) * pitch_y,
                          wall_z + rng.uniform(-0.05, 0.05));
    } else {
      const double z = rng.uniform(3.4, 7.0);
      p = Eigen::Vector3d(rng.uniform(-0.42 * z, 0.42 * z),
                          rng.uniform(-0.42 * z * spec.height / spec.width,
                                      0.42 * z * spec.height / spec.width),
                          z);
    }
    Surfel s;
    s.position = p;
    s.color = textured_color(p, spec.palette_id, rng);
    scene.static_surfels.push_back(s);
  }

  // Rigid objects: dense point balls with a saturated base color, a color
  // gradient along a random axis, and per-point jitter.
  for (int oi = 0; oi < spec.num_objects; ++oi) {
    RigidObject obj;
    const double radius = rng.uniform(0.28, 0.48);
    // Point count scales with resolution so the splat density (points per
    // covered pixel) stays roughly constant across render sizes.
    const int n_points = std::max(
        60, static_cast<int>(std::lround(108.0 * spec.width / 48.0 * spec.height / 36.0)));
    Eigen::Vector3d base_color = kPalette[(oi * 3 + 1 + spec.palette_id) % kPaletteSize];
    Eigen::Vector3d grad_dir(rng.normal(), rng.normal(), rng.normal());
    grad_dir.normalize();
    for (int i = 0; i < n_points; ++i) {
      Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
      d.normalize();
      const double r = radius * std::cbrt(rng.uniform());
      const Eigen::Vector3d local = d * r;
      obj.local_points.push_back(local);
      Eigen::Vector3d c = base_color + grad_dir.dot(local) / radius * Eigen::Vector3d(0.25, 0.25, 0.25);
      for (int k = 0; k < 3; ++k) c[k] += rng.uniform(-0.12, 0.12);
      obj.local_colors.push_back(clamp_color(c));
    }

    // Piecewise-linear translation (billiard reflection keeps objects in the
    // content box) plus a constant-rate rotation about a random axis.
    Eigen::Vector3d center(rng.uniform(-1.6, 1.6), rng.uniform(-1.0, 1.0), rng.uniform(3.4, 4.6));
    const double speed = rng.uniform(spec.min_speed, spec.max_speed);
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    const double rot_rate = speed * 0.6;  // rad per frame, zero when speed is zero

    const int seg_len = std::max(1, spec.num_frames / 3);
    Eigen::Vector3d vel(0, 0, 0);
    Eigen::Vector3d pos = center;
    for (int f = 0; f < spec.num_frames; ++f) {
      if (f % seg_len == 0) {
        Eigen::Vector3d dir(rng.normal(), rng.normal(), 0.35 * rng.normal());
        if (dir.norm() < 1e-12) dir = Eigen::Vector3d(1, 0, 0);
        dir.normalize();
        vel = dir * speed;
      }
      obj.rotation.push_back(Eigen::AngleAxisd(rot_rate * f, axis).toRotationMatrix());
      obj.translation.push_back(pos);
      pos += vel;
      const Eigen::Vector3d lo(-1.9, -1.2, 3.0), hi(1.9, 1.2, 5.0);
      for (int k = 0; k < 3; ++k) {
        if (pos[k] < lo[k]) { pos[k] = 2 * lo[k] - pos[k]; vel[k] = -vel[k]; }
        if (pos[k] > hi[k]) { pos[k] = 2 * hi[k] - pos[k]; vel[k] = -vel[k]; }
      }
    }
    scene.objects.push_back(std::move(obj));
  }

  // Camera trajectory.
  const Eigen::Vector3d target(0, 0, orbit_target_z);
  for (int f = 0; f < spec.num_frames; ++f) {
    const double s = spec.num_frames > 1
                         ? 2.0 * f / static_cast<double>(spec.num_frames - 1) - 1.0
                         : 0.0;
    Camera cam = base;
    switch (spec.camera_path.kind) {
      case CameraPathKind::Static:
        break;
      case CameraPathKind::Pan: {
        // Pure translation; rotation stays identity.
        cam.translation = -Eigen::Vector3d(spec.camera_path.amplitude * s,
                                           0.25 * spec.camera_path.amplitude * s * s, 0.0);
        break;
      }
      case CameraPathKind::Orbit: {
        const double theta = 0.30 * spec.camera_path.amplitude * s;
        const double r0 = target.z();
        const Eigen::Vector3d eye = target + Eigen::Vector3d(r0 * std::sin(theta), 0.0,
                                                             -r0 * std::cos(theta));
        cam = look_at_camera(eye, target, Eigen::Vector3d(0, -1, 0), base.fx, base.fy,
                             base.cx, base.cy, base.width, base.height);
        break;
      }
    }
    scene.cameras.push_back(cam);
  }
  return scene;
}

RenderedFrame render(const Scene& scene, int frame_index) {
  if (frame_index < 0 || frame_index >= scene.spec.num_frames) {
    throw Error("render: frame index out of range");
  }
  const Camera& cam = scene.cameras[static_cast<size_t>(frame_index)];
  const int W = scene.spec.width, H = scene.spec.height;

  RenderedFrame out;
  out.width = W;
  out.height = H;
  out.image = Tensor({H, W, 3});
  out.depth = Tensor({H, W});
  out.world_points = Tensor({H, W, 3});
  out.valid.assign(static_cast<size_t>(W) * H, 0);
  out.surfel_id.assign(static_cast<size_t>(W) * H, -1);

  // z-buffer splat: each surfel lands on its nearest pixel; the smallest
  // depth wins, ties broken by the lower surfel id.
  const int32_t n = scene.num_surfels();
  for (int32_t id = 0; id < n; ++id) {
    const Eigen::Vector3d pw = scene.surfel_world(id, frame_index);
    const Eigen::Vector3d pc = cam.world_to_camera(pw);
    if (pc.z() <= 1e-9) continue;
    const double u = cam.fx * pc.x() / pc.z() + cam.cx;
    const double v = cam.fy * pc.y() / pc.z() + cam.cy;
    const int64_t px = std::lround(u);
    const int64_t py = std::lround(v);
    if (px < 0 || px >= W || py < 0 || py >= H) continue;
    const int64_t pi = py * W + px;
    const double z = pc.z();
    const double cur = out.depth[pi];
    if (!out.valid[static_cast<size_t>(pi)] || z < cur ||
        (z == cur && id < out.surfel_id[static_cast<size_t>(pi)])) {
      out.valid[static_cast<size_t>(pi)] = 1;
      out.depth[pi] = z;
      out.surfel_id[static_cast<size_t>(pi)] = id;
    }
  }

  // Fill pass: color from the winning surfel; the stored world point is the
  // pixel-center ray at the winning depth (see RenderedFrame docs).
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int64_t pi = static_cast<int64_t>(y) * W + x;
      if (!out.valid[static_cast<size_t>(pi)]) continue;
      const int32_t id = out.surfel_id[static_cast<size_t>(pi)];
      const Eigen::Vector3d c = scene.surfel_color(id);
      out.image.at(y, x, 0) = c[0];
      out.image.at(y, x, 1) = c[1];
      out.image.at(y, x, 2) = c[2];
      const WorldPoint wp = unproject(Eigen::Vector2d(x, y), out.depth[pi], cam);
      out.world_points.at(y, x, 0) = wp[0];
      out.world_points.at(y, x, 1) = wp[1];
      out.world_points.at(y, x, 2) = wp[2];
    }
  }
  return out;
}

std::vector<RenderedFrame> render_all(const Scene& scene) {
  std::vector<RenderedFrame> frames;
  frames.reserve(static_cast<size_t>(scene.spec.num_frames));
  for (int f = 0; f < scene.spec.num_frames; ++f) frames.push_back(render(scene, f));
  return frames;
}

namespace {

// surfel -> winning pixel map for one rendered frame (-1 when not visible).
std::vector<int64_t> surfel_to_pixel(const RenderedFrame& f, int32_t num_surfels) {
  std::vector<int64_t> map(static_cast<size_t>(num_surfels), -1);
  for (int64_t pi = 0; pi < static_cast<int64_t>(f.surfel_id.size()); ++pi) {
    const int32_t id = f.surfel_id[static_cast<size_t>(pi)];
    if (id >= 0) map[static_cast<size_t>(id)] = pi;
  }
  return map;
}

}  // namespace

std::vector<GroundTruthTrack> ground_truth_tracks(const Scene& scene,
                                                  const std::vector<RenderedFrame>& frames,
                                                  double eps) {
  const int T = scene.spec.num_frames;
  if (static_cast<int>(frames.size()) != T) throw Error("ground_truth_tracks: frame count mismatch");
  const int32_t n = scene.num_surfels();

  std::vector<std::vector<int64_t>> s2p(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) s2p[static_cast<size_t>(t)] = surfel_to_pixel(frames[static_cast<size_t>(t)], n);

  std::vector<GroundTruthTrack> tracks(static_cast<size_t>(n));
  for (int32_t id = 0; id < n; ++id) {
    GroundTruthTrack& tr = tracks[static_cast<size_t>(id)];
    tr.surfel_id = id;
    tr.pixel.resize(static_cast<size_t>(T), Eigen::Vector2d::Zero());
    tr.has_pixel.assign(static_cast<size_t>(T), 0);
    tr.world.resize(static_cast<size_t>(T));
    tr.visible.assign(static_cast<size_t>(T), 0);
    for (int t = 0; t < T; ++t) {
      const Camera& cam = scene.cameras[static_cast<size_t>(t)];
      const Eigen::Vector3d pw = scene.surfel_world(id, t);
      tr.world[static_cast<size_t>(t)] = pw;
      const Eigen::Vector3d pc = cam.world_to_camera(pw);
      if (pc.z() <= 1e-9) continue;
      const double u = cam.fx * pc.x() / pc.z() + cam.cx;
      const double v = cam.fy * pc.y() / pc.z() + cam.cy;
      tr.pixel[static_cast<size_t>(t)] = Eigen::Vector2d(u, v);
      tr.has_pixel[static_cast<size_t>(t)] = 1;
      const int64_t px = std::lround(u), py = std::lround(v);
      if (px < 0 || px >= scene.spec.width || py < 0 || py >= scene.spec.height) continue;
      const int64_t pi = py * scene.spec.width + px;
      tr.visible[static_cast<size_t>(t)] =
          frames[static_cast<size_t>(t)].surfel_id[static_cast<size_t>(pi)] == id ? 1 : 0;
    }
    if (scene.is_object_surfel(id)) {
      // Dynamic iff the world position differs by more than eps across any
      // frame pair.
      bool dyn = false;
      for (int a = 0; a < T && !dyn; ++a) {
        for (int b = a + 1; b < T; ++b) {
          if ((tr.world[static_cast<size_t>(a)] - tr.world[static_cast<size_t>(b)]).norm() > eps) {
            dyn = true;
            break;
          }
        }
      }
      tr.is_dynamic = dyn;
    }
  }
  return tracks;
}

ScenePairSample ground_truth_pair(const Scene& scene, const RenderedFrame& frame1,
                                  const RenderedFrame& frame2, int t1, int t2, double eps) {
  if (t1 == t2) throw Error("ground_truth_pair: t1 must differ from t2");
  if (t1 < 0 || t2 < 0 || t1 >= scene.spec.num_frames || t2 >= scene.spec.num_frames) {
    throw Error("ground_truth_pair: frame index out of range");
  }
  const int32_t n = scene.num_surfels();
  const std::vector<int64_t> map1 = surfel_to_pixel(frame1, n);
  const std::vector<int64_t> map2 = surfel_to_pixel(frame2, n);

  ScenePairSample s;
  s.t1 = t1;
  s.t2 = t2;
  s.width = scene.spec.width;
  s.height = scene.spec.height;
  s.cam1 = scene.cameras[static_cast<size_t>(t1)];
  s.cam2 = scene.cameras[static_cast<size_t>(t2)];
  s.image1 = frame1.image;
  s.image2 = frame2.image;
  s.valid1 = frame1.valid;
  s.valid2 = frame2.valid;
  s.gt_points1 = to_reference_frame(frame1.world_points, frame1.valid, s.cam1, "view1").points;
  s.gt_points2 = to_reference_frame(frame2.world_points, frame2.valid, s.cam1, "view1").points;

  s.cross_visible1.assign(frame1.valid.size(), -1);
  s.cross_visible2.assign(frame2.valid.size(), -1);
  for (size_t pi = 0; pi < frame1.surfel_id.size(); ++pi) {
    const int32_t id = frame1.surfel_id[pi];
    if (id >= 0) s.cross_visible1[pi] = map2[static_cast<size_t>(id)] >= 0 ? 1 : 0;
  }
  for (size_t pi = 0; pi < frame2.surfel_id.size(); ++pi) {
    const int32_t id = frame2.surfel_id[pi];
    if (id >= 0) s.cross_visible2[pi] = map1[static_cast<size_t>(id)] >= 0 ? 1 : 0;
  }

  // Correspondences: surfels visible in both frames, at their exact
  // fractional projections, labelled via their two world positions.
  for (int32_t id = 0; id < n; ++id) {
    if (map1[static_cast<size_t>(id)] < 0 || map2[static_cast<size_t>(id)] < 0) continue;
    const Eigen::Vector3d w1 = scene.surfel_world(id, t1);
    const Eigen::Vector3d w2 = scene.surfel_world(id, t2);
    const Projection p1 = project(w1, s.cam1);
    const Projection p2 = project(w2, s.cam2);
    Correspondence c;
    c.surfel_id = id;
    c.pixel_i = p1.pixel;
    c.pixel_j = p2.pixel;
    c.kind = classify_match(w1, w2, eps);
    s.correspondences.push_back(c);
  }
  return s;
}

}  // namespace corrtrack
