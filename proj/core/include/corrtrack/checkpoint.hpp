#pragma once

#include <filesystem>

#include "corrtrack/model.hpp"

namespace corrtrack {

// Versioned named-tensor container with the architecture config embedded:
//   magic "CTCK", version u16, u64 header length, JSON header
//   (arch + ordered tensor directory), then f64 little-endian payloads.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);

ModelParams load_checkpoint(const std::filesystem::path& path);

// Loading with a mismatched architecture is a hard error (ArchMismatch),
// never a silent reshape.
ModelParams load_checkpoint_checked(const std::filesystem::path& path, const ArchConfig& expected);

}  // namespace corrtrack
