#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "corrtrack/bt.hpp"
#include "corrtrack/rng.hpp"

using namespace corrtrack;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "corrtrack_bt_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("bt round-trip is lossless for every dtype") {
  Rng rng(42);
  const auto dir = temp_dir();
  for (const bt::Dtype dtype :
       {bt::Dtype::f32, bt::Dtype::f64, bt::Dtype::i32, bt::Dtype::u8}) {
    Tensor t({3, 4, 2});
    for (int64_t i = 0; i < t.size(); ++i) {
      t[i] = dtype == bt::Dtype::u8 ? std::floor(rng.uniform(0, 255))
             : dtype == bt::Dtype::i32 ? std::floor(rng.uniform(-1000, 1000))
                                       : rng.uniform(-10, 10);
    }
    const bt::BtTensor encoded = bt::from_tensor(t, dtype);
    const auto path = dir / "roundtrip.bt";
    bt::write_file(path, encoded);
    const bt::BtTensor decoded = bt::read_file(path);
    CHECK(decoded.dtype == dtype);
    CHECK(decoded.dims == encoded.dims);
    CHECK(decoded.payload == encoded.payload);  // bit-exact payload

    // Value round-trip: f64/i32/u8 exact; f32 idempotent after the first
    // narrowing (write(load(x)) == load(x) bitwise).
    const Tensor back = bt::to_tensor(decoded);
    const bt::BtTensor encoded2 = bt::from_tensor(back, dtype);
    CHECK(encoded2.payload == encoded.payload);
  }
}

TEST_CASE("bt rejects corrupt magic") {
  const auto dir = temp_dir();
  const auto path = dir / "bad_magic.bt";
  Tensor t({2, 2});
  bt::write_file(path, bt::from_tensor(t, bt::Dtype::f32));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(bt::read_file(path), FormatError);
}

TEST_CASE("bt rejects unknown version and dtype") {
  const auto dir = temp_dir();
  const auto path = dir / "bad_version.bt";
  Tensor t({2, 2});
  bt::write_file(path, bt::from_tensor(t, bt::Dtype::f32));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v[2] = {9, 0};
    f.write(v, 2);
  }
  CHECK_THROWS_AS(bt::read_file(path), FormatError);

  bt::write_file(path, bt::from_tensor(t, bt::Dtype::f32));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(6);
    const char d = 7;
    f.write(&d, 1);
  }
  CHECK_THROWS_AS(bt::read_file(path), FormatError);
}

TEST_CASE("bt rejects truncated payload") {
  const auto dir = temp_dir();
  const auto path = dir / "trunc.bt";
  Tensor t({4, 4});
  bt::write_file(path, bt::from_tensor(t, bt::Dtype::f64));
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 8);
  CHECK_THROWS_AS(bt::read_file(path), FormatError);
}

TEST_CASE("bt i32 helpers") {
  const auto dir = temp_dir();
  const std::vector<int32_t> ids = {-1, 0, 7, 123456, -99};
  const auto path = dir / "ids.bt";
  bt::write_file(path, bt::from_i32(ids, {5}));
  const auto back = bt::to_i32(bt::read_file(path));
  CHECK(back == ids);
}
