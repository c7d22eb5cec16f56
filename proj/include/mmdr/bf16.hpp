#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

namespace mmdr {

// bfloat16 kept as raw 16-bit payloads; the codec below is the only place
// that interprets them.

enum class Bf16Rounding { nearest_even, truncate };

inline std::uint32_t f32_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  return u;
}

inline float bits_f32(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

// Round-to-nearest-even in the top 16 bits. NaN payloads are preserved by
// skipping the rounding add, which could otherwise carry a signaling NaN
// into an infinity.
inline std::uint16_t f32_to_bf16(float f, Bf16Rounding mode = Bf16Rounding::nearest_even) {
  std::uint32_t bits = f32_bits(f);
  if ((bits & 0x7F800000u) == 0x7F800000u) {
    // Inf or NaN: truncation keeps the class (top mantissa bit of a quiet
    // NaN lives in the kept half).
    return static_cast<std::uint16_t>(bits >> 16);
  }
  if (mode == Bf16Rounding::truncate) return static_cast<std::uint16_t>(bits >> 16);
  std::uint32_t rounded = bits + 0x7FFFu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>(rounded >> 16);
}

inline float bf16_to_f32(std::uint16_t h) {
  return bits_f32(static_cast<std::uint32_t>(h) << 16);
}

inline float bf16_roundtrip(float f, Bf16Rounding mode = Bf16Rounding::nearest_even) {
  return bf16_to_f32(f32_to_bf16(f, mode));
}

// Flat bf16 payload buffer, the storage type for embeddings at rest.
class Bf16Buffer {
 public:
  Bf16Buffer() = default;
  explicit Bf16Buffer(std::size_t n) : bits_(n, 0) {}

  static Bf16Buffer encode(const float* src, std::size_t n,
                           Bf16Rounding mode = Bf16Rounding::nearest_even) {
    Bf16Buffer out(n);
    for (std::size_t i = 0; i < n; ++i) out.bits_[i] = f32_to_bf16(src[i], mode);
    return out;
  }

  static Bf16Buffer encode(const std::vector<float>& src,
                           Bf16Rounding mode = Bf16Rounding::nearest_even) {
    return encode(src.data(), src.size(), mode);
  }

  std::vector<float> decode() const {
    std::vector<float> out(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) out[i] = bf16_to_f32(bits_[i]);
    return out;
  }

  std::size_t size() const { return bits_.size(); }
  std::uint16_t* data() { return bits_.data(); }
  const std::uint16_t* data() const { return bits_.data(); }
  std::vector<std::uint16_t>& bits() { return bits_; }
  const std::vector<std::uint16_t>& bits() const { return bits_; }

  bool operator==(const Bf16Buffer& o) const { return bits_ == o.bits_; }

 private:
  std::vector<std::uint16_t> bits_;
};

}  // namespace mmdr
