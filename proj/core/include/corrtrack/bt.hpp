#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "corrtrack/tensor.hpp"

namespace corrtrack::bt {

// Binary tensor container (".bt"). Layout, all little-endian:
//   magic   "BTEN" (4 bytes)
//   version u16 (currently 1)
//   dtype   u8  (0=f32, 1=f64, 2=i32, 3=u8)
//   rank    u8
//   dims    rank x u64
//   payload row-major, element size x product(dims) bytes
enum class Dtype : uint8_t { f32 = 0, f64 = 1, i32 = 2, u8 = 3 };

constexpr uint16_t kVersion = 1;

size_t dtype_size(Dtype d);

struct BtTensor {
  Dtype dtype = Dtype::f64;
  std::vector<int64_t> dims;
  std::vector<uint8_t> payload;  // raw little-endian element bytes

  int64_t numel() const;
};

void write_file(const std::filesystem::path& path, const BtTensor& t);
BtTensor read_file(const std::filesystem::path& path);

// Conversions between the in-memory double Tensor and typed payloads.
BtTensor from_tensor(const Tensor& t, Dtype dtype);
Tensor to_tensor(const BtTensor& t);

std::vector<int32_t> to_i32(const BtTensor& t);
BtTensor from_i32(const std::vector<int32_t>& v, std::vector<int64_t> dims);

}  // namespace corrtrack::bt
