#include "corrtrack/bt.hpp"

#include <cstring>
#include <fstream>
#include <string>

#include "corrtrack/errors.hpp"

namespace corrtrack::bt {

namespace {

constexpr char kMagic[4] = {'B', 'T', 'E', 'N'};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

// Host is assumed little-endian for payload memcpy; encode/decode of the
// header is explicit either way.
template <typename T>
void append_scalar_le(std::vector<uint8_t>& out, T v) {
  uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T read_scalar_le(const uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
    case Dtype::i32: return 4;
    case Dtype::u8: return 1;
  }
  throw FormatError("unknown dtype code");
}

int64_t BtTensor::numel() const {
  int64_t n = 1;
  for (int64_t d : dims) n *= d;
  return n;
}

void write_file(const std::filesystem::path& path, const BtTensor& t) {
  if (t.dims.size() > 255) throw FormatError("bt rank exceeds 255");
  const size_t expect = static_cast<size_t>(t.numel()) * dtype_size(t.dtype);
  if (t.payload.size() != expect) throw FormatError("bt payload size does not match dims");

  std::vector<uint8_t> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  put_u16(header, kVersion);
  header.push_back(static_cast<uint8_t>(t.dtype));
  header.push_back(static_cast<uint8_t>(t.dims.size()));
  for (int64_t d : t.dims) put_u64(header, static_cast<uint64_t>(d));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(t.payload.data()), static_cast<std::streamsize>(t.payload.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

BtTensor read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 8) throw FormatError("bt file truncated: " + path.string());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad bt magic: " + path.string());
  const uint16_t version = get_u16(bytes.data() + 4);
  if (version != kVersion) throw FormatError("unsupported bt version " + std::to_string(version));
  const uint8_t dtype_code = bytes[6];
  if (dtype_code > 3) throw FormatError("unknown bt dtype code " + std::to_string(dtype_code));
  const uint8_t rank = bytes[7];

  size_t off = 8;
  if (bytes.size() < off + 8u * rank) throw FormatError("bt file truncated: " + path.string());
  BtTensor t;
  t.dtype = static_cast<Dtype>(dtype_code);
  t.dims.resize(rank);
  for (int i = 0; i < rank; ++i) {
    t.dims[static_cast<size_t>(i)] = static_cast<int64_t>(get_u64(bytes.data() + off));
    off += 8;
  }
  const size_t expect = static_cast<size_t>(t.numel()) * dtype_size(t.dtype);
  if (bytes.size() - off != expect) throw FormatError("bt payload length mismatch: " + path.string());
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return t;
}

BtTensor from_tensor(const Tensor& t, Dtype dtype) {
  BtTensor out;
  out.dtype = dtype;
  out.dims = t.shape();
  out.payload.reserve(static_cast<size_t>(t.size()) * dtype_size(dtype));
  for (int64_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    switch (dtype) {
      case Dtype::f32: append_scalar_le(out.payload, static_cast<float>(v)); break;
      case Dtype::f64: append_scalar_le(out.payload, v); break;
      case Dtype::i32: append_scalar_le(out.payload, static_cast<int32_t>(v)); break;
      case Dtype::u8: out.payload.push_back(static_cast<uint8_t>(v)); break;
    }
  }
  return out;
}

Tensor to_tensor(const BtTensor& t) {
  Tensor out(t.dims);
  const uint8_t* p = t.payload.data();
  for (int64_t i = 0; i < out.size(); ++i) {
    switch (t.dtype) {
      case Dtype::f32: out[i] = read_scalar_le<float>(p + 4 * i); break;
      case Dtype::f64: out[i] = read_scalar_le<double>(p + 8 * i); break;
      case Dtype::i32: out[i] = read_scalar_le<int32_t>(p + 4 * i); break;
      case Dtype::u8: out[i] = p[i]; break;
    }
  }
  return out;
}

std::vector<int32_t> to_i32(const BtTensor& t) {
  if (t.dtype != Dtype::i32) throw FormatError("expected i32 bt tensor");
  std::vector<int32_t> out(static_cast<size_t>(t.numel()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = read_scalar_le<int32_t>(t.payload.data() + 4 * i);
  return out;
}

BtTensor from_i32(const std::vector<int32_t>& v, std::vector<int64_t> dims) {
  BtTensor out;
  out.dtype = Dtype::i32;
  out.dims = std::move(dims);
  if (static_cast<size_t>(out.numel()) != v.size()) throw FormatError("i32 dims mismatch");
  out.payload.reserve(v.size() * 4);
  for (int32_t x : v) append_scalar_le(out.payload, x);
  return out;
}

}  // namespace corrtrack::bt
