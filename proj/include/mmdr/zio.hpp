#pragma once

// Gzip frame compression via zlib (windowBits 31 so frames carry gzip
// headers and CRCs, making record corruption detectable on inflate).

#include <zlib.h>

#include <cstdint>
#include <string>
#include <vector>

#include "mmdr/error.hpp"

namespace mmdr {

inline std::vector<std::uint8_t> gzip_compress(const std::uint8_t* data, std::size_t size,
                                               int level = 6) {
  require(level >= 0 && level <= 9, Errc::invalid_argument, "gzip level must lie in [0, 9]");
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, 31, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    fail(Errc::io_error, "deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, uLong(size)));
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = uInt(size);
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) fail(Errc::io_error, "deflate failed: " + std::to_string(rc));
  out.resize(out.size() - zs.avail_out);
  return out;
}

inline std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& data,
                                               int level = 6) {
  return gzip_compress(data.data(), data.size(), level);
}

inline std::vector<std::uint8_t> gzip_decompress(const std::uint8_t* data, std::size_t size) {
  z_stream zs{};
  if (inflateInit2(&zs, 31) != Z_OK) fail(Errc::io_error, "inflateInit2 failed");
  std::vector<std::uint8_t> out;
  out.resize(size * 4 + 64);
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = uInt(size);
  std::size_t written = 0;
  int rc;
  for (;;) {
    zs.next_out = out.data() + written;
    zs.avail_out = uInt(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    written = out.size() - zs.avail_out;
    if (rc == Z_STREAM_END) break;
    if (rc == Z_OK || rc == Z_BUF_ERROR) {
      if (zs.avail_out == 0) {
        out.resize(out.size() * 2);
        continue;
      }
      if (rc == Z_BUF_ERROR) {
        inflateEnd(&zs);
        fail(Errc::bad_format, "truncated gzip frame");
      }
      continue;
    }
    inflateEnd(&zs);
    fail(Errc::bad_format, "corrupt gzip frame: " + std::to_string(rc));
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

inline std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& data) {
  return gzip_decompress(data.data(), data.size());
}

}  // namespace mmdr
