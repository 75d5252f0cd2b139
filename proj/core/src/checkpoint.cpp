#include "corrtrack/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "corrtrack/errors.hpp"

namespace corrtrack {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'C', 'T', 'C', 'K'};
constexpr uint16_t kVersion = 1;

json arch_to_json(const ArchConfig& a) {
  json j;
  j["channels"] = a.channels;
  j["descriptor_dim"] = a.descriptor_dim;
  j["decoder_rounds"] = a.decoder_rounds;
  j["head_hidden"] = a.head_hidden;
  j["ctx_tiles_x"] = a.ctx_tiles_x;
  j["ctx_tiles_y"] = a.ctx_tiles_y;
  j["frozen_encoder"] = a.frozen_encoder;
  return j;
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.channels = j.at("channels").get<int>();
  a.descriptor_dim = j.at("descriptor_dim").get<int>();
  a.decoder_rounds = j.at("decoder_rounds").get<int>();
  a.head_hidden = j.at("head_hidden").get<int>();
  a.ctx_tiles_x = j.at("ctx_tiles_x").get<int>();
  a.ctx_tiles_y = j.at("ctx_tiles_y").get<int>();
  a.frozen_encoder = j.at("frozen_encoder").get<bool>();
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  json header;
  header["arch"] = arch_to_json(params.arch);
  json dir = json::array();
  for (const auto& [name, tensor] : params.tensors) {
    dir.push_back({{"name", name}, {"shape", tensor.shape()}});
  }
  header["tensors"] = dir;
  const std::string header_str = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint: " + path.string());
  f.write(kMagic, 4);
  const uint16_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), 2);
  const uint64_t hlen = header_str.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, tensor] : params.tensors) {
    f.write(reinterpret_cast<const char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.size() * 8));
  }
  if (!f) throw IoError("checkpoint write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic: " + path.string());
  }
  uint16_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 2);
  if (version != kVersion) throw FormatError("unsupported checkpoint version");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header_str(hlen, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw FormatError("truncated checkpoint header: " + path.string());

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }

  ModelParams params;
  params.arch = arch_from_json(header.at("arch"));
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!f) throw FormatError("truncated checkpoint payload: " + path.string());
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

ModelParams load_checkpoint_checked(const std::filesystem::path& path,
                                    const ArchConfig& expected) {
  ModelParams params = load_checkpoint(path);
  if (!params.arch.compatible(expected)) {
    throw ArchMismatch("checkpoint architecture does not match the configured one");
  }
  return params;
}

}  // namespace corrtrack
