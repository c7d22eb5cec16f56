#pragma once

// Embedding exchange files: magic "MMEB", version u16, dtype u8 (0 = f32,
// 1 = bf16), rank u32, dims u64[rank], row ids u64[dims[0]], then the raw
// little-endian payload. One tensor per file.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mmdr/bf16.hpp"
#include "mmdr/error.hpp"
#include "mmdr/matrix.hpp"
#include "mmdr/wire.hpp"

namespace mmdr {

struct MmebTensor {
  std::uint8_t dtype = 1;  // 0 = f32, 1 = bf16
  std::vector<std::uint64_t> dims;
  std::vector<std::uint64_t> row_ids;  // one per leading-dimension slice
  std::vector<float> values;           // row-major; bf16 payloads decode losslessly

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::uint64_t d : dims) {
      require(d == 0 || n <= SIZE_MAX / d, Errc::bad_format, "tensor element count overflows");
      n *= std::size_t(d);
    }
    return n;
  }

  void validate() const {
    require(dtype <= 1, Errc::bad_format, "unknown dtype tag");
    require(!dims.empty() && dims.size() <= 8, Errc::bad_format, "rank must lie in [1, 8]");
    require(row_ids.size() == dims[0], Errc::bad_format, "row id count must equal dims[0]");
    require(values.size() == element_count(), Errc::bad_format, "payload size mismatch");
  }
};

inline std::vector<std::uint8_t> mmeb_encode(const MmebTensor& t) {
  t.validate();
  wire::Writer w;
  w.bytes("MMEB", 4);
  w.u16(1);  // version
  w.u8(t.dtype);
  w.u32(std::uint32_t(t.dims.size()));
  for (std::uint64_t d : t.dims) w.u64(d);
  for (std::uint64_t id : t.row_ids) w.u64(id);
  if (t.dtype == 0) {
    for (float v : t.values) w.u32(f32_bits(v));
  } else {
    for (float v : t.values) w.u16(f32_to_bf16(v));
  }
  return w.take();
}

inline MmebTensor mmeb_decode(const std::uint8_t* data, std::size_t size) {
  wire::Reader r(data, size);
  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, "MMEB", 4) == 0, Errc::bad_format, "not an MMEB file");
  std::uint16_t version = r.u16();
  require(version == 1, Errc::bad_format, "unsupported MMEB version " + std::to_string(version));
  MmebTensor t;
  t.dtype = r.u8();
  require(t.dtype <= 1, Errc::bad_format, "unknown dtype tag");
  std::uint32_t rank = r.u32();
  require(rank >= 1 && rank <= 8, Errc::bad_format, "rank must lie in [1, 8]");
  t.dims.resize(rank);
  for (auto& d : t.dims) d = r.u64();
  t.row_ids.resize(t.dims[0]);
  for (auto& id : t.row_ids) id = r.u64();
  std::size_t n = t.element_count();
  t.values.resize(n);
  if (t.dtype == 0) {
    for (auto& v : t.values) v = bits_f32(r.u32());
  } else {
    for (auto& v : t.values) v = bf16_to_f32(r.u16());
  }
  r.expect_end("MMEB payload");
  return t;
}

inline MmebTensor mmeb_decode(const std::vector<std::uint8_t>& bytes) {
  return mmeb_decode(bytes.data(), bytes.size());
}

inline void write_mmeb(const MmebTensor& t, const std::string& path) {
  std::vector<std::uint8_t> bytes = mmeb_encode(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(bool(f), Errc::io_error, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(f), Errc::io_error, "write failed: " + path);
}

inline MmebTensor read_mmeb(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), Errc::io_error, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return mmeb_decode(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

// Rank-2 view as a dense matrix (copies).
inline Matrix<float> mmeb_as_matrix(const MmebTensor& t) {
  require(t.dims.size() == 2, Errc::bad_format, "expected a rank-2 tensor");
  Matrix<float> m(std::size_t(t.dims[0]), std::size_t(t.dims[1]));
  std::copy(t.values.begin(), t.values.end(), m.storage().begin());
  return m;
}

}  // namespace mmdr
