#include <gtest/gtest.h>

#include <cstring>
#include <functional>
#include <vector>

#include "mmdr/mmeb.hpp"
#include "mmdr/rng.hpp"
#include "mmdr/wire.hpp"
#include "mmdr/zio.hpp"

using namespace mmdr;

namespace {

Errc catch_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::invalid_argument;
}

TEST(Wire, RoundTripAllTypes) {
  wire::Writer w;
  w.u8(0xAB);
  w.u16(0xBEEF);
  w.u32(0xDEADBEEF);
  w.u64(0x0123456789ABCDEFull);
  w.f64(-1234.5678);
  w.str("hello");
  w.blob({1, 2, 3});

  wire::Reader r(w.data());
  EXPECT_EQ(r.u8(), 0xAB);
  EXPECT_EQ(r.u16(), 0xBEEF);
  EXPECT_EQ(r.u32(), 0xDEADBEEFu);
  EXPECT_EQ(r.u64(), 0x0123456789ABCDEFull);
  EXPECT_EQ(r.f64(), -1234.5678);
  EXPECT_EQ(r.str(), "hello");
  EXPECT_EQ(r.blob(), (std::vector<std::uint8_t>{1, 2, 3}));
  r.expect_end("wire test");
}

TEST(Wire, LittleEndianLayout) {
  wire::Writer w;
  w.u16(0x0102);
  w.u32(0x03040506);
  const auto& b = w.data();
  EXPECT_EQ(b[0], 0x02);
  EXPECT_EQ(b[1], 0x01);
  EXPECT_EQ(b[2], 0x06);
  EXPECT_EQ(b[5], 0x03);
}

TEST(Wire, TruncationAndTrailingDetected) {
  wire::Writer w;
  w.u32(7);
  EXPECT_EQ(catch_code([&] {
              wire::Reader r(w.data());
              r.u64();
            }),
            Errc::bad_format);
  EXPECT_EQ(catch_code([&] {
              wire::Reader r(w.data());
              r.u16();
              r.expect_end("partial");
            }),
            Errc::bad_format);
}

TEST(Gzip, RoundTripAndFrameMagic) {
  Rng rng(11);
  std::vector<std::uint8_t> data(10000);
  for (auto& v : data) v = std::uint8_t(rng.next_below(7));  // compressible
  std::vector<std::uint8_t> frame = gzip_compress(data, 6);
  ASSERT_GE(frame.size(), 2u);
  EXPECT_EQ(frame[0], 0x1F);  // gzip header magic
  EXPECT_EQ(frame[1], 0x8B);
  EXPECT_LT(frame.size(), data.size());
  EXPECT_EQ(gzip_decompress(frame), data);

  std::vector<std::uint8_t> empty_frame = gzip_compress(std::vector<std::uint8_t>{}, 6);
  EXPECT_TRUE(gzip_decompress(empty_frame).empty());
}

TEST(Gzip, LevelsTradeSizeForSpeed) {
  Rng rng(12);
  std::vector<std::uint8_t> data(50000);
  for (auto& v : data) v = std::uint8_t(rng.next_below(11));
  auto fast = gzip_compress(data, 1);
  auto best = gzip_compress(data, 9);
  EXPECT_LE(best.size(), fast.size());
  EXPECT_EQ(gzip_decompress(fast), data);
  EXPECT_EQ(gzip_decompress(best), data);
  EXPECT_EQ(catch_code([&] { gzip_compress(data, 17); }), Errc::invalid_argument);
}

TEST(Gzip, CorruptionDetected) {
  std::vector<std::uint8_t> data(1000, 42);
  std::vector<std::uint8_t> frame = gzip_compress(data, 6);
  // CRC trailer damage must not pass silently.
  frame[frame.size() - 1] ^= 0xFF;
  EXPECT_EQ(catch_code([&] { gzip_decompress(frame); }), Errc::bad_format);
  std::vector<std::uint8_t> truncated(frame.begin(), frame.begin() + std::ptrdiff_t(frame.size() / 2));
  EXPECT_EQ(catch_code([&] { gzip_decompress(truncated); }), Errc::bad_format);
}

MmebTensor sample_tensor(std::uint8_t dtype) {
  MmebTensor t;
  t.dtype = dtype;
  t.dims = {3, 4};
  t.row_ids = {100, 200, 300};
  Rng rng(13);
  t.values.resize(12);
  for (auto& v : t.values) v = float(rng.uniform(-2.0, 2.0));
  if (dtype == 1)
    for (auto& v : t.values) v = bf16_roundtrip(v);  // representable values
  return t;
}

TEST(Mmeb, F32RoundTripBitExact) {
  MmebTensor t = sample_tensor(0);
  MmebTensor back = mmeb_decode(mmeb_encode(t));
  EXPECT_EQ(back.dtype, 0);
  EXPECT_EQ(back.dims, t.dims);
  EXPECT_EQ(back.row_ids, t.row_ids);
  ASSERT_EQ(back.values.size(), t.values.size());
  for (std::size_t i = 0; i < t.values.size(); ++i)
    EXPECT_EQ(f32_bits(back.values[i]), f32_bits(t.values[i]));
}

TEST(Mmeb, Bf16RoundTripBitExact) {
  MmebTensor t = sample_tensor(1);
  MmebTensor back = mmeb_decode(mmeb_encode(t));
  for (std::size_t i = 0; i < t.values.size(); ++i)
    EXPECT_EQ(f32_bits(back.values[i]), f32_bits(t.values[i]));
}

TEST(Mmeb, FileRoundTrip) {
  MmebTensor t = sample_tensor(1);
  const std::string path = ::testing::TempDir() + "/tensor.mmeb";
  write_mmeb(t, path);
  MmebTensor back = read_mmeb(path);
  EXPECT_EQ(back.row_ids, t.row_ids);
  EXPECT_EQ(back.values, t.values);
}

TEST(Mmeb, HeaderLayoutFrozen) {
  MmebTensor t;
  t.dtype = 1;
  t.dims = {1, 2};
  t.row_ids = {9};
  t.values = {1.0f, -2.0f};
  std::vector<std::uint8_t> bytes = mmeb_encode(t);
  // magic, version u16, dtype u8, rank u32, dims 2x u64, ids 1x u64,
  // payload 2x u16.
  ASSERT_EQ(bytes.size(), 4u + 2 + 1 + 4 + 16 + 8 + 4);
  EXPECT_EQ(std::memcmp(bytes.data(), "MMEB", 4), 0);
  EXPECT_EQ(bytes[4], 1);  // version lo
  EXPECT_EQ(bytes[5], 0);  // version hi
  EXPECT_EQ(bytes[6], 1);  // dtype
  EXPECT_EQ(bytes[7], 2);  // rank lo byte
  // bf16(1.0) = 0x3F80, bf16(-2.0) = 0xC000, little-endian.
  EXPECT_EQ(bytes[bytes.size() - 4], 0x80);
  EXPECT_EQ(bytes[bytes.size() - 3], 0x3F);
  EXPECT_EQ(bytes[bytes.size() - 2], 0x00);
  EXPECT_EQ(bytes[bytes.size() - 1], 0xC0);
}

TEST(Mmeb, MalformedInputsRejected) {
  MmebTensor t = sample_tensor(1);
  std::vector<std::uint8_t> bytes = mmeb_encode(t);

  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(catch_code([&] { mmeb_decode(bad_magic); }), Errc::bad_format);

  std::vector<std::uint8_t> bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_EQ(catch_code([&] { mmeb_decode(bad_version); }), Errc::bad_format);

  std::vector<std::uint8_t> bad_dtype = bytes;
  bad_dtype[6] = 7;
  EXPECT_EQ(catch_code([&] { mmeb_decode(bad_dtype); }), Errc::bad_format);

  std::vector<std::uint8_t> trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(catch_code([&] { mmeb_decode(trailing); }), Errc::bad_format);

  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
  EXPECT_EQ(catch_code([&] { mmeb_decode(truncated); }), Errc::bad_format);

  MmebTensor wrong_ids = t;
  wrong_ids.row_ids.pop_back();
  EXPECT_EQ(catch_code([&] { mmeb_encode(wrong_ids); }), Errc::bad_format);

  MmebTensor wrong_payload = t;
  wrong_payload.values.pop_back();
  EXPECT_EQ(catch_code([&] { mmeb_encode(wrong_payload); }), Errc::bad_format);
}

TEST(Mmeb, AsMatrixRequiresRank2) {
  MmebTensor t = sample_tensor(0);
  Matrix<float> m = mmeb_as_matrix(t);
  EXPECT_EQ(m.rows(), 3u);
  EXPECT_EQ(m.cols(), 4u);
  EXPECT_EQ(m(1, 2), t.values[6]);

  MmebTensor r1;
  r1.dtype = 0;
  r1.dims = {4};
  r1.row_ids = {0, 1, 2, 3};
  r1.values = {0, 1, 2, 3};
  EXPECT_EQ(catch_code([&] { mmeb_as_matrix(r1); }), Errc::bad_format);
}

}  // namespace
