#pragma once

// Little-endian byte packing for the binary file formats. All multi-byte
// integers in mmdr files are little-endian regardless of host order.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "mmdr/error.hpp"

namespace mmdr::wire {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    buf_.push_back(std::uint8_t(v & 0xFF));
    buf_.push_back(std::uint8_t(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  // u32 length prefix + raw bytes.
  void str(const std::string& s) {
    require(s.size() <= 0xFFFFFFFFull, Errc::invalid_argument, "string too long to serialize");
    u32(std::uint32_t(s.size()));
    bytes(s.data(), s.size());
  }
  void blob(const std::vector<std::uint8_t>& b) {
    require(b.size() <= 0xFFFFFFFFull, Errc::invalid_argument, "blob too long to serialize");
    u32(std::uint32_t(b.size()));
    bytes(b.data(), b.size());
  }

  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  explicit Reader(const std::vector<std::uint8_t>& b) : Reader(b.data(), b.size()) {}

  std::uint8_t u8() {
    need(1);
    return p_[off_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(p_[off_]) | std::uint16_t(p_[off_ + 1]) << 8;
    off_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p_[off_ + i]) << (8 * i);
    off_ += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + off_), len);
    off_ += len;
    return s;
  }
  std::vector<std::uint8_t> blob() {
    std::uint32_t len = u32();
    need(len);
    std::vector<std::uint8_t> b(p_ + off_, p_ + off_ + len);
    off_ += len;
    return b;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p_ + off_, n);
    off_ += n;
  }

  std::size_t remaining() const { return n_ - off_; }
  std::size_t offset() const { return off_; }
  void expect_end(const char* what) const {
    require(off_ == n_, Errc::bad_format, std::string("trailing bytes after ") + what);
  }

 private:
  void need(std::size_t n) const {
    require(n_ - off_ >= n, Errc::bad_format, "truncated buffer");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

}  // namespace mmdr::wire
