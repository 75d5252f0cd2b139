#include "corrtrack/geometry.hpp"

#include <cmath>

namespace corrtrack {

void Camera::validate() const {
  const Eigen::Matrix3d rtr = rotation.transpose() * rotation;
  if ((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw Error("camera rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error("camera rotation determinant is not +1");
  }
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error("image size must be positive");
  if (!(cx >= 0.0 && cx < width)) throw Error("cx outside [0, width)");
  if (!(cy >= 0.0 && cy < height)) throw Error("cy outside [0, height)");
}

bool Camera::same_pose(const Camera& other, double tol) const {
  return (rotation - other.rotation).cwiseAbs().maxCoeff() <= tol &&
         (translation - other.translation).cwiseAbs().maxCoeff() <= tol;
}

PointMapBundle PointMapBundle::allocate(int width, int height, std::string reference_view) {
  PointMapBundle b;
  b.width = width;
  b.height = height;
  b.points = Tensor({height, width, 3});
  b.confidence = Tensor::full({height, width}, 1.0);
  b.valid.assign(static_cast<size_t>(width) * height, 0);
  b.reference_view = std::move(reference_view);
  return b;
}

Projection project(const WorldPoint& point, const Camera& camera) {
  const Eigen::Vector3d pc = camera.world_to_camera(point);
  if (pc.z() <= 1e-9) throw NonPositiveDepth("point has non-positive depth in camera frame");
  Projection out;
  out.pixel = Eigen::Vector2d(camera.fx * pc.x() / pc.z() + camera.cx,
                              camera.fy * pc.y() / pc.z() + camera.cy);
  out.depth = pc.z();
  return out;
}

WorldPoint unproject(const Eigen::Vector2d& pixel, double depth, const Camera& camera) {
  if (depth <= 1e-9) throw NonPositiveDepth("unproject requires positive depth");
  const Eigen::Vector3d pc((pixel.x() - camera.cx) / camera.fx * depth,
                           (pixel.y() - camera.cy) / camera.fy * depth,
                           depth);
  return camera.camera_to_world(pc);
}

PointMapBundle to_reference_frame(const Tensor& world_points,
                                  const std::vector<uint8_t>& valid,
                                  const Camera& reference,
                                  const std::string& reference_view) {
  if (world_points.rank() != 3 || world_points.dim(2) != 3) {
    throw ShapeMismatch("world_points must be H x W x 3");
  }
  const int height = static_cast<int>(world_points.dim(0));
  const int width = static_cast<int>(world_points.dim(1));
  if (valid.size() != static_cast<size_t>(width) * height) {
    throw ShapeMismatch("valid mask size does not match world_points");
  }
  PointMapBundle out = PointMapBundle::allocate(width, height, reference_view);
  out.valid = valid;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!valid[static_cast<size_t>(y) * width + x]) continue;
      const WorldPoint p(world_points.at(y, x, 0), world_points.at(y, x, 1),
                         world_points.at(y, x, 2));
      const Eigen::Vector3d q = reference.world_to_camera(p);
      out.points.at(y, x, 0) = q.x();
      out.points.at(y, x, 1) = q.y();
      out.points.at(y, x, 2) = q.z();
    }
  }
  return out;
}

double norm_factor(const PointMapBundle& bundle) {
  double sum = 0.0;
  int64_t count = 0;
  for (int y = 0; y < bundle.height; ++y) {
    for (int x = 0; x < bundle.width; ++x) {
      if (!bundle.valid[static_cast<size_t>(y) * bundle.width + x]) continue;
      const double px = bundle.points.at(y, x, 0);
      const double py = bundle.points.at(y, x, 1);
      const double pz = bundle.points.at(y, x, 2);
      sum += std::sqrt(px * px + py * py + pz * pz);
      ++count;
    }
  }
  if (count == 0) throw EmptyPointMap("norm_factor over a pointmap with no valid pixel");
  return sum / static_cast<double>(count);
}

MatchKind classify_match(const WorldPoint& i_world, const WorldPoint& j_world, double eps) {
  return (i_world - j_world).norm() <= eps ? MatchKind::Static : MatchKind::Dynamic;
}

Camera estimate_intrinsics(int width, int height) {
  if (width <= 0 || height <= 0) throw Error("estimate_intrinsics needs positive size");
  Camera cam;
  cam.fx = cam.fy = static_cast<double>(width);
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double fx, double fy, double cx,
                      double cy, int width, int height) {
  const Eigen::Vector3d fwd = (target - eye).normalized();   // camera +z
  Eigen::Vector3d right = fwd.cross(up).normalized();        // camera +x
  // With y-down convention the image "up" direction is -y.
  const Eigen::Vector3d down = fwd.cross(right).normalized();  // camera +y
  right = down.cross(fwd).normalized();

  Camera cam;
  Eigen::Matrix3d cam_to_world;
  cam_to_world.col(0) = right;
  cam_to_world.col(1) = down;
  cam_to_world.col(2) = fwd;
  cam.rotation = cam_to_world.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace corrtrack
