#include "corrtrack/dataset.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "corrtrack/bt.hpp"
#include "corrtrack/errors.hpp"

namespace corrtrack {

namespace {

using nlohmann::json;

json camera_to_json(const Camera& cam) {
  json j;
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[static_cast<size_t>(r * 3 + c)] = cam.rotation(r, c);
  j["rotation"] = rot;
  j["translation"] = std::vector<double>{cam.translation.x(), cam.translation.y(),
                                         cam.translation.z()};
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  return j;
}

Camera camera_from_json(const json& j) {
  Camera cam;
  const auto rot = j.at("rotation").get<std::vector<double>>();
  if (rot.size() != 9) throw FormatError("camera rotation must have 9 entries");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[static_cast<size_t>(r * 3 + c)];
  const auto tr = j.at("translation").get<std::vector<double>>();
  if (tr.size() != 3) throw FormatError("camera translation must have 3 entries");
  cam.translation = Eigen::Vector3d(tr[0], tr[1], tr[2]);
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  return cam;
}

std::string camera_path_kind_name(CameraPathKind kind) {
  switch (kind) {
    case CameraPathKind::Static: return "static";
    case CameraPathKind::Pan: return "pan";
    case CameraPathKind::Orbit: return "orbit";
  }
  throw Error("unknown camera path kind");
}

CameraPathKind camera_path_kind_from(const std::string& name) {
  if (name == "static") return CameraPathKind::Static;
  if (name == "pan") return CameraPathKind::Pan;
  if (name == "orbit") return CameraPathKind::Orbit;
  throw FormatError("unknown camera path kind: " + name);
}

json spec_to_json(const SceneSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["num_frames"] = spec.num_frames;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["num_static_points"] = spec.num_static_points;
  j["num_objects"] = spec.num_objects;
  j["min_speed"] = spec.min_speed;
  j["max_speed"] = spec.max_speed;
  j["camera_path"] = {{"kind", camera_path_kind_name(spec.camera_path.kind)},
                      {"amplitude", spec.camera_path.amplitude}};
  j["palette_id"] = spec.palette_id;
  return j;
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec spec;
  spec.seed = j.at("seed").get<uint64_t>();
  spec.num_frames = j.at("num_frames").get<int>();
  spec.width = j.at("width").get<int>();
  spec.height = j.at("height").get<int>();
  spec.num_static_points = j.at("num_static_points").get<int>();
  spec.num_objects = j.at("num_objects").get<int>();
  spec.min_speed = j.at("min_speed").get<double>();
  spec.max_speed = j.at("max_speed").get<double>();
  spec.camera_path.kind = camera_path_kind_from(j.at("camera_path").at("kind").get<std::string>());
  spec.camera_path.amplitude = j.at("camera_path").at("amplitude").get<double>();
  spec.palette_id = j.at("palette_id").get<int>();
  return spec;
}

std::filesystem::path frame_file(const std::filesystem::path& dir, int t, const char* kind) {
  return dir / ("frame_" + std::to_string(t) + "." + kind + ".bt");
}

}  // namespace

std::string scene_dir_name(uint64_t seed) { return "scene_" + std::to_string(seed); }

void save_scene(const std::filesystem::path& dir, const Scene& scene,
                const std::vector<RenderedFrame>& frames) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());

  json manifest;
  manifest["format"] = "corrtrack-scene";
  manifest["version"] = 1;
  manifest["num_frames"] = scene.spec.num_frames;
  manifest["spec"] = spec_to_json(scene.spec);
  json cams = json::array();
  for (const auto& cam : scene.cameras) cams.push_back(camera_to_json(cam));
  manifest["cameras"] = cams;
  {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
  }

  for (int t = 0; t < scene.spec.num_frames; ++t) {
    const RenderedFrame& fr = frames[static_cast<size_t>(t)];
    bt::write_file(frame_file(dir, t, "img"), bt::from_tensor(fr.image, bt::Dtype::f32));
    bt::write_file(frame_file(dir, t, "depth"), bt::from_tensor(fr.depth, bt::Dtype::f64));
    bt::write_file(frame_file(dir, t, "world"), bt::from_tensor(fr.world_points, bt::Dtype::f64));
    bt::write_file(frame_file(dir, t, "ids"),
                   bt::from_i32(fr.surfel_id, {fr.height, fr.width}));
  }
}

LoadedScene load_scene(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot open manifest in " + dir.string());
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("bad manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "corrtrack-scene" || manifest.value("version", 0) != 1) {
    throw FormatError("unsupported scene manifest in " + dir.string());
  }

  LoadedScene out;
  out.scene = generate_scene(spec_from_json(manifest.at("spec")));
  const auto& cams = manifest.at("cameras");
  if (cams.size() != out.scene.cameras.size()) {
    throw FormatError("camera count mismatch in " + dir.string());
  }
  for (size_t t = 0; t < cams.size(); ++t) {
    const Camera echoed = camera_from_json(cams[t]);
    if (!echoed.same_pose(out.scene.cameras[t], 0.0) ||
        echoed.fx != out.scene.cameras[t].fx || echoed.fy != out.scene.cameras[t].fy ||
        echoed.cx != out.scene.cameras[t].cx || echoed.cy != out.scene.cameras[t].cy) {
      throw FormatError("manifest cameras do not match the regenerated scene in " + dir.string());
    }
  }

  const int T = out.scene.spec.num_frames;
  const int W = out.scene.spec.width, H = out.scene.spec.height;
  out.frames.resize(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    RenderedFrame& fr = out.frames[static_cast<size_t>(t)];
    fr.width = W;
    fr.height = H;
    fr.image = bt::to_tensor(bt::read_file(frame_file(dir, t, "img")));
    fr.depth = bt::to_tensor(bt::read_file(frame_file(dir, t, "depth")));
    fr.world_points = bt::to_tensor(bt::read_file(frame_file(dir, t, "world")));
    fr.surfel_id = bt::to_i32(bt::read_file(frame_file(dir, t, "ids")));
    if (fr.image.rank() != 3 || fr.image.dim(0) != H || fr.image.dim(1) != W) {
      throw FormatError("frame tensor shape mismatch in " + dir.string());
    }
    fr.valid.resize(fr.surfel_id.size());
    for (size_t i = 0; i < fr.surfel_id.size(); ++i) fr.valid[i] = fr.surfel_id[i] >= 0 ? 1 : 0;
  }
  return out;
}

std::vector<std::filesystem::path> list_scene_dirs(const std::filesystem::path& dataset_dir) {
  if (!std::filesystem::is_directory(dataset_dir)) {
    throw IoError("dataset directory does not exist: " + dataset_dir.string());
  }
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(dataset_dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::vector<LoadedScene> load_dataset(const std::filesystem::path& dataset_dir) {
  std::vector<LoadedScene> scenes;
  for (const auto& dir : list_scene_dirs(dataset_dir)) scenes.push_back(load_scene(dir));
  if (scenes.empty()) throw IoError("no scenes found in " + dataset_dir.string());
  return scenes;
}

}  // namespace corrtrack
