#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "corrtrack/scene.hpp"

namespace corrtrack {

// On-disk layout, one directory per scene:
//   scene_<seed>/manifest.json                 spec echo + per-frame cameras
//   scene_<seed>/frame_<t>.img.bt              f32 H x W x 3
//   scene_<seed>/frame_<t>.depth.bt            f64 H x W (0 = empty)
//   scene_<seed>/frame_<t>.world.bt            f64 H x W x 3
//   scene_<seed>/frame_<t>.ids.bt              i32 H x W (-1 = empty)
// The valid mask is ids >= 0.
struct LoadedScene {
  Scene scene;
  std::vector<RenderedFrame> frames;
};

std::string scene_dir_name(uint64_t seed);

void save_scene(const std::filesystem::path& dir, const Scene& scene,
                const std::vector<RenderedFrame>& frames);

// Regenerates the Scene from the manifest's spec echo (generation is
// deterministic) and verifies the echoed cameras match exactly; frame
// tensors come from the .bt files.
LoadedScene load_scene(const std::filesystem::path& dir);

// Sorted scene directories under a dataset root.
std::vector<std::filesystem::path> list_scene_dirs(const std::filesystem::path& dataset_dir);

std::vector<LoadedScene> load_dataset(const std::filesystem::path& dataset_dir);

}  // namespace corrtrack
