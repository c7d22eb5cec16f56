#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmdr/error.hpp"
#include "mmdr/image.hpp"
#include "mmdr/rng.hpp"

namespace mmdr {

// The replayable op set. Only ops with exact integer semantics are allowed;
// anything needing interpolation beyond the initial resize stays out so the
// stored parameters reproduce augmented images byte for byte.
enum class AugOp : std::uint8_t {
  brightness = 0,   // magnitude: signed percent, [-100, 100]
  contrast = 1,     // magnitude: signed percent around pivot 128, [-100, 100]
  posterize = 2,    // magnitude: bits kept, [1, 8]
  solarize = 3,     // magnitude: threshold, [0, 255]
  invert = 4,       // magnitude unused (0)
  translate_x = 5,  // magnitude: signed pixel shift, zero fill
  translate_y = 6,
};

inline const char* aug_op_name(AugOp op) {
  switch (op) {
    case AugOp::brightness: return "brightness";
    case AugOp::contrast: return "contrast";
    case AugOp::posterize: return "posterize";
    case AugOp::solarize: return "solarize";
    case AugOp::invert: return "invert";
    case AugOp::translate_x: return "translate-x";
    case AugOp::translate_y: return "translate-y";
  }
  return "unknown";
}

struct AugStep {
  AugOp op = AugOp::invert;
  std::int16_t magnitude = 0;

  bool operator==(const AugStep&) const = default;
};

// Everything needed to reproduce one augmented view. The seed is recorded
// for provenance and is never consumed at replay time.
struct AugmentationParams {
  std::uint16_t crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
  std::uint16_t out_w = 0, out_h = 0;
  bool hflip = false;
  std::vector<AugStep> ops;
  std::uint64_t seed = 0;

  bool operator==(const AugmentationParams&) const = default;
};

// Sampling policy: random-resized-crop bounds plus a reduced RandAugment
// (op count and a 0..10 magnitude knob).
struct AugmentPolicy {
  double scale_lo = 0.08, scale_hi = 1.0;
  double ratio_lo = 0.75, ratio_hi = 4.0 / 3.0;
  int randaug_ops = 2;
  int randaug_magnitude = 9;
  std::uint16_t out_w = 32, out_h = 32;

  void validate() const {
    require(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi <= 1.0, Errc::invalid_policy,
            "crop scale bounds must satisfy 0 < lo <= hi <= 1");
    require(ratio_lo > 0.0 && ratio_lo <= ratio_hi, Errc::invalid_policy,
            "aspect ratio bounds must satisfy 0 < lo <= hi");
    require(randaug_ops >= 0 && randaug_ops <= 16, Errc::invalid_policy,
            "op count must lie in [0, 16]");
    require(randaug_magnitude >= 0 && randaug_magnitude <= 10, Errc::invalid_policy,
            "magnitude knob must lie in [0, 10]");
    require(out_w > 0 && out_h > 0, Errc::invalid_policy, "output size must be positive");
  }
};

namespace detail {

// Round-half-to-even division of non-negative num by positive den.
inline std::int64_t div_round_even(std::int64_t num, std::int64_t den) {
  std::int64_t q = num / den;
  std::int64_t r = num - q * den;
  std::int64_t twice = 2 * r;
  if (twice > den || (twice == den && (q & 1))) ++q;
  return q;
}

// Truncating division rounded half away from zero, exact for the contrast op.
inline std::int32_t div_round_half_away(std::int32_t num, std::int32_t den) {
  return num >= 0 ? (num + den / 2) / den : -((-num + den / 2) / den);
}

inline std::uint8_t clamp_u8(std::int32_t v) {
  return std::uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
}

}  // namespace detail

// Deterministic crop/flip/op sampling from a seed. Draw order is frozen:
// crop attempts, then flip, then each op (kind, then magnitude details).
inline AugmentationParams sample_augmentation(std::uint64_t rng_seed, const AugmentPolicy& policy,
                                              std::uint16_t src_w, std::uint16_t src_h) {
  policy.validate();
  require(src_w > 0 && src_h > 0, Errc::invalid_policy, "source image is empty");
  Rng rng(rng_seed);
  AugmentationParams p;
  p.seed = rng_seed;
  p.out_w = policy.out_w;
  p.out_h = policy.out_h;

  const double area = double(src_w) * double(src_h);
  const double lo_area = policy.scale_lo * area;
  const double hi_area = policy.scale_hi * area;
  bool placed = false;
  for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
    double target = rng.uniform(lo_area, hi_area);
    double log_ratio = rng.uniform(std::log(policy.ratio_lo), std::log(policy.ratio_hi));
    double ratio = std::exp(log_ratio);
    auto w = std::int64_t(std::llround(std::sqrt(target * ratio)));
    auto h = std::int64_t(std::llround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > src_w || h > src_h) continue;
    double got = double(w) * double(h);
    if (got < lo_area || got > hi_area) continue;  // rounding pushed it outside
    p.crop_w = std::uint16_t(w);
    p.crop_h = std::uint16_t(h);
    p.crop_x = std::uint16_t(rng.next_below(std::uint64_t(src_w - w + 1)));
    p.crop_y = std::uint16_t(rng.next_below(std::uint64_t(src_h - h + 1)));
    placed = true;
  }
  if (!placed) {
    // Center fallback: clip the full frame to the ratio bounds, then shrink
    // if the area cap still bites (the returned crop must honor the policy).
    std::int64_t w = src_w, h = src_h;
    double in_ratio = double(src_w) / double(src_h);
    if (in_ratio > policy.ratio_hi) {
      w = std::max<std::int64_t>(1, std::llround(double(src_h) * policy.ratio_hi));
    } else if (in_ratio < policy.ratio_lo) {
      h = std::max<std::int64_t>(1, std::llround(double(src_w) / policy.ratio_lo));
    }
    if (double(w) * double(h) > hi_area) {
      double s = std::sqrt(hi_area / (double(w) * double(h)));
      w = std::max<std::int64_t>(1, std::int64_t(double(w) * s));
      h = std::max<std::int64_t>(1, std::int64_t(double(h) * s));
    }
    // Greedy repair upward if the shrink undershot the floor.
    while (double(w) * double(h) < lo_area && (w < src_w || h < src_h)) {
      if (w <= h && w < src_w && double(w + 1) * double(h) <= hi_area)
        ++w;
      else if (h < src_h && double(w) * double(h + 1) <= hi_area)
        ++h;
      else if (w < src_w && double(w + 1) * double(h) <= hi_area)
        ++w;
      else
        break;
    }
    double got = double(w) * double(h);
    require(got >= lo_area && got <= hi_area, Errc::invalid_policy,
            "no crop satisfies the area bounds for a " + std::to_string(src_w) + "x" +
                std::to_string(src_h) + " source");
    p.crop_w = std::uint16_t(w);
    p.crop_h = std::uint16_t(h);
    p.crop_x = std::uint16_t((src_w - w) / 2);
    p.crop_y = std::uint16_t((src_h - h) / 2);
  }

  p.hflip = rng.next_below(2) == 1;

  const int m = policy.randaug_magnitude;
  for (int i = 0; i < policy.randaug_ops; ++i) {
    AugStep step;
    step.op = AugOp(rng.next_below(7));
    switch (step.op) {
      case AugOp::brightness:
      case AugOp::contrast: {
        int sign = rng.next_below(2) == 1 ? 1 : -1;
        step.magnitude = std::int16_t(sign * 9 * m);  // up to +/-90 percent
        break;
      }
      case AugOp::posterize:
        step.magnitude = std::int16_t(8 - (m * 4) / 10);  // 8 bits down to 4
        break;
      case AugOp::solarize:
        step.magnitude = std::int16_t(255 - (m * 255) / 10);
        break;
      case AugOp::invert:
        step.magnitude = 0;
        break;
      case AugOp::translate_x: {
        int sign = rng.next_below(2) == 1 ? 1 : -1;
        step.magnitude = std::int16_t(sign * int((m * 3 * int(policy.out_w)) / 100));
        break;
      }
      case AugOp::translate_y: {
        int sign = rng.next_below(2) == 1 ? 1 : -1;
        step.magnitude = std::int16_t(sign * int((m * 3 * int(policy.out_h)) / 100));
        break;
      }
    }
    p.ops.push_back(step);
  }
  return p;
}

namespace detail {

// Bilinear resize in exact 64-bit rational arithmetic: half-pixel centers,
// edge clamp, round-half-to-even to u8. Source coordinate of output column
// dx is ((2dx+1)*src_w - out_w) / (2*out_w); everything stays an integer
// over that denominator, so results are identical on every platform.
inline RasterImage resize_bilinear(const RasterImage& src, std::uint16_t out_w,
                                   std::uint16_t out_h) {
  RasterImage dst(out_w, out_h);
  const std::int64_t den_x = 2 * std::int64_t(out_w);
  const std::int64_t den_y = 2 * std::int64_t(out_h);
  const std::int64_t max_x = std::int64_t(src.width - 1) * den_x;
  const std::int64_t max_y = std::int64_t(src.height - 1) * den_y;
  const std::int64_t big_den = den_x * den_y;

  std::vector<std::int64_t> x0(out_w), x1(out_w), fx(out_w);
  for (std::int64_t dx = 0; dx < out_w; ++dx) {
    std::int64_t num = (2 * dx + 1) * std::int64_t(src.width) - std::int64_t(out_w);
    if (num < 0) num = 0;
    if (num > max_x) num = max_x;
    x0[std::size_t(dx)] = num / den_x;
    fx[std::size_t(dx)] = num - x0[std::size_t(dx)] * den_x;
    x1[std::size_t(dx)] = std::min<std::int64_t>(x0[std::size_t(dx)] + 1, src.width - 1);
  }
  for (std::int64_t dy = 0; dy < out_h; ++dy) {
    std::int64_t num = (2 * dy + 1) * std::int64_t(src.height) - std::int64_t(out_h);
    if (num < 0) num = 0;
    if (num > max_y) num = max_y;
    const std::int64_t y0 = num / den_y;
    const std::int64_t fy = num - y0 * den_y;
    const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, src.height - 1);
    for (std::int64_t dx = 0; dx < out_w; ++dx) {
      const std::uint8_t* p00 = src.at(std::size_t(x0[std::size_t(dx)]), std::size_t(y0));
      const std::uint8_t* p10 = src.at(std::size_t(x1[std::size_t(dx)]), std::size_t(y0));
      const std::uint8_t* p01 = src.at(std::size_t(x0[std::size_t(dx)]), std::size_t(y1));
      const std::uint8_t* p11 = src.at(std::size_t(x1[std::size_t(dx)]), std::size_t(y1));
      const std::int64_t wx1 = fx[std::size_t(dx)], wx0 = den_x - wx1;
      const std::int64_t wy1 = fy, wy0 = den_y - wy1;
      std::uint8_t* out = dst.at(std::size_t(dx), std::size_t(dy));
      for (int ch = 0; ch < 3; ++ch) {
        std::int64_t acc = std::int64_t(p00[ch]) * wx0 * wy0 + std::int64_t(p10[ch]) * wx1 * wy0 +
                           std::int64_t(p01[ch]) * wx0 * wy1 + std::int64_t(p11[ch]) * wx1 * wy1;
        out[ch] = std::uint8_t(div_round_even(acc, big_den));
      }
    }
  }
  return dst;
}

inline void apply_step(RasterImage& img, const AugStep& step) {
  const std::int32_t m = step.magnitude;
  switch (step.op) {
    case AugOp::brightness: {
      require(m >= -100 && m <= 100, Errc::invalid_argument,
              "brightness percent out of [-100, 100]");
      for (auto& v : img.pixels) v = clamp_u8((std::int32_t(v) * (100 + m) + 50) / 100);
      break;
    }
    case AugOp::contrast: {
      require(m >= -100 && m <= 100, Errc::invalid_argument,
              "contrast percent out of [-100, 100]");
      for (auto& v : img.pixels) {
        std::int32_t t = (std::int32_t(v) - 128) * (100 + m);
        v = clamp_u8(128 + div_round_half_away(t, 100));
      }
      break;
    }
    case AugOp::posterize: {
      require(m >= 1 && m <= 8, Errc::invalid_argument, "posterize bits out of [1, 8]");
      const std::uint8_t mask = std::uint8_t(0xFF << (8 - m));
      for (auto& v : img.pixels) v = std::uint8_t(v & mask);
      break;
    }
    case AugOp::solarize: {
      require(m >= 0 && m <= 255, Errc::invalid_argument, "solarize threshold out of [0, 255]");
      for (auto& v : img.pixels)
        if (v >= m) v = std::uint8_t(255 - v);
      break;
    }
    case AugOp::invert: {
      for (auto& v : img.pixels) v = std::uint8_t(255 - v);
      break;
    }
    case AugOp::translate_x: {
      require(std::abs(m) <= img.width, Errc::invalid_argument, "x shift exceeds width");
      RasterImage shifted(img.width, img.height);
      for (std::int32_t y = 0; y < img.height; ++y)
        for (std::int32_t x = 0; x < img.width; ++x) {
          std::int32_t sx = x - m;
          if (sx < 0 || sx >= img.width) continue;
          const std::uint8_t* s = img.at(std::size_t(sx), std::size_t(y));
          std::uint8_t* d = shifted.at(std::size_t(x), std::size_t(y));
          d[0] = s[0];
          d[1] = s[1];
          d[2] = s[2];
        }
      img = std::move(shifted);
      break;
    }
    case AugOp::translate_y: {
      require(std::abs(m) <= img.height, Errc::invalid_argument, "y shift exceeds height");
      RasterImage shifted(img.width, img.height);
      for (std::int32_t y = 0; y < img.height; ++y) {
        std::int32_t sy = y - m;
        if (sy < 0 || sy >= img.height) continue;
        for (std::int32_t x = 0; x < img.width; ++x) {
          const std::uint8_t* s = img.at(std::size_t(x), std::size_t(sy));
          std::uint8_t* d = shifted.at(std::size_t(x), std::size_t(y));
          d[0] = s[0];
          d[1] = s[1];
          d[2] = s[2];
        }
      }
      img = std::move(shifted);
      break;
    }
    default:
      fail(Errc::invalid_argument, "unknown op id " + std::to_string(int(step.op)));
  }
}

}  // namespace detail

// Pure replay: crop, bilinear resize, horizontal flip, then the stored ops
// in order. Byte-identical across runs and platforms by construction.
inline RasterImage apply_augmentation(const RasterImage& img, const AugmentationParams& p) {
  img.validate();
  require(p.out_w > 0 && p.out_h > 0, Errc::invalid_argument, "output size must be positive");
  require(p.crop_w >= 1 && p.crop_h >= 1 &&
              std::uint32_t(p.crop_x) + p.crop_w <= img.width &&
              std::uint32_t(p.crop_y) + p.crop_h <= img.height,
          Errc::crop_out_of_bounds,
          "crop (" + std::to_string(p.crop_x) + "," + std::to_string(p.crop_y) + "," +
              std::to_string(p.crop_w) + "," + std::to_string(p.crop_h) + ") outside " +
              std::to_string(img.width) + "x" + std::to_string(img.height));

  RasterImage crop(p.crop_w, p.crop_h);
  for (std::size_t y = 0; y < p.crop_h; ++y) {
    const std::uint8_t* src = img.at(p.crop_x, p.crop_y + y);
    std::uint8_t* dst = crop.at(0, y);
    std::copy(src, src + std::size_t(p.crop_w) * 3, dst);
  }

  RasterImage out = (crop.width == p.out_w && crop.height == p.out_h)
                        ? crop
                        : detail::resize_bilinear(crop, p.out_w, p.out_h);

  if (p.hflip) {
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < std::size_t(out.width) / 2; ++x) {
        std::uint8_t* a = out.at(x, y);
        std::uint8_t* b = out.at(out.width - 1 - x, y);
        std::swap(a[0], b[0]);
        std::swap(a[1], b[1]);
        std::swap(a[2], b[2]);
      }
  }

  for (const AugStep& step : p.ops) detail::apply_step(out, step);
  return out;
}

// ---------------------------------------------------------------------------
// Binary codec, little-endian, the layout embedded in reinforced records:
// u16 crop x/y/w/h, u16 out w/h, u8 hflip, u8 op count, per op (u8 id,
// i16 magnitude), u64 seed.

namespace detail {
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xFF));
  out.push_back(std::uint8_t(v >> 8));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}
struct ByteReader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t off = 0;
  std::uint8_t u8() {
    require(off + 1 <= n, Errc::bad_format, "augmentation params truncated");
    return p[off++];
  }
  std::uint16_t u16() {
    require(off + 2 <= n, Errc::bad_format, "augmentation params truncated");
    std::uint16_t v = std::uint16_t(p[off]) | std::uint16_t(p[off + 1]) << 8;
    off += 2;
    return v;
  }
  std::uint64_t u64() {
    require(off + 8 <= n, Errc::bad_format, "augmentation params truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[off + std::size_t(i)]) << (8 * i);
    off += 8;
    return v;
  }
};
}  // namespace detail

inline std::vector<std::uint8_t> serialize_params(const AugmentationParams& p) {
  require(p.ops.size() <= 255, Errc::invalid_argument, "too many ops to serialize");
  std::vector<std::uint8_t> out;
  out.reserve(18 + 3 * p.ops.size());
  detail::put_u16(out, p.crop_x);
  detail::put_u16(out, p.crop_y);
  detail::put_u16(out, p.crop_w);
  detail::put_u16(out, p.crop_h);
  detail::put_u16(out, p.out_w);
  detail::put_u16(out, p.out_h);
  out.push_back(p.hflip ? 1 : 0);
  out.push_back(std::uint8_t(p.ops.size()));
  for (const AugStep& s : p.ops) {
    out.push_back(std::uint8_t(s.op));
    detail::put_u16(out, std::uint16_t(s.magnitude));
  }
  detail::put_u64(out, p.seed);
  return out;
}

inline AugmentationParams parse_params(const std::uint8_t* data, std::size_t size) {
  detail::ByteReader r{data, size};
  AugmentationParams p;
  p.crop_x = r.u16();
  p.crop_y = r.u16();
  p.crop_w = r.u16();
  p.crop_h = r.u16();
  p.out_w = r.u16();
  p.out_h = r.u16();
  std::uint8_t flip = r.u8();
  require(flip <= 1, Errc::bad_format, "bad hflip byte");
  p.hflip = flip == 1;
  std::uint8_t count = r.u8();
  for (std::uint8_t i = 0; i < count; ++i) {
    AugStep s;
    std::uint8_t op = r.u8();
    require(op <= 6, Errc::bad_format, "unknown op id " + std::to_string(op));
    s.op = AugOp(op);
    s.magnitude = std::int16_t(r.u16());
    p.ops.push_back(s);
  }
  p.seed = r.u64();
  require(r.off == size, Errc::bad_format, "trailing bytes after augmentation params");
  return p;
}

inline AugmentationParams parse_params(const std::vector<std::uint8_t>& bytes) {
  return parse_params(bytes.data(), bytes.size());
}

}  // namespace mmdr
