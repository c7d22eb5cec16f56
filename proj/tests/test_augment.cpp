#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "mmdr/augment.hpp"
#include "mmdr/image.hpp"
#include "mmdr/png_io.hpp"
#include "mmdr/rng.hpp"

using namespace mmdr;

namespace {

// The 8x8 gradient probe image used for the golden buffers: per pixel,
// R = 30x + 3y, G = 30y + 3x, B = 15(x + y).
RasterImage gradient8() {
  RasterImage img(8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      std::uint8_t* p = img.at(x, y);
      p[0] = std::uint8_t(30 * x + 3 * y);
      p[1] = std::uint8_t(30 * y + 3 * x);
      p[2] = std::uint8_t(15 * (x + y));
    }
  return img;
}

RasterImage random_image(Rng& rng, std::uint16_t w, std::uint16_t h) {
  RasterImage img(w, h);
  for (auto& v : img.pixels) v = std::uint8_t(rng.next_below(256));
  return img;
}

AugmentationParams identity_params(const RasterImage& img) {
  AugmentationParams p;
  p.crop_w = img.width;
  p.crop_h = img.height;
  p.out_w = img.width;
  p.out_h = img.height;
  return p;
}

TEST(Augment, IdentityParamsAreByteIdentity) {
  Rng rng(1);
  RasterImage img = random_image(rng, 13, 9);
  EXPECT_EQ(apply_augmentation(img, identity_params(img)), img);
}

TEST(Augment, GoldenCropWithIdentityResize) {
  // Frozen from an exact-rational scalar oracle: crop (2,2,4,4) -> 4x4.
  const std::vector<std::uint8_t> golden = {
      66, 66,  60,  96,  69,  75,  126, 72,  90,  156, 75,  105, 69,  96,  75,  99,
      99, 90,  129, 102, 105, 159, 105, 120, 72,  126, 90,  102, 129, 105, 132, 132,
      120, 162, 135, 135, 75,  156, 105, 105, 159, 120, 135, 162, 135, 165, 165, 150};
  AugmentationParams p;
  p.crop_x = 2;
  p.crop_y = 2;
  p.crop_w = 4;
  p.crop_h = 4;
  p.out_w = 4;
  p.out_h = 4;
  EXPECT_EQ(apply_augmentation(gradient8(), p).pixels, golden);
}

TEST(Augment, GoldenBilinearDownscale) {
  // Frozen from the same oracle: crop (2,1,5,6) resized to 4x3 exercises
  // true interpolation weights on both axes.
  const std::vector<std::uint8_t> golden = {
      68,  51,  54,  106, 55,  73,  143, 59,  92,  181, 63,  111, 74,  111, 84,  112, 115, 103,
      149, 119, 122, 187, 123, 141, 80,  171, 114, 118, 175, 133, 155, 179, 152, 193, 183, 171};
  AugmentationParams p;
  p.crop_x = 2;
  p.crop_y = 1;
  p.crop_w = 5;
  p.crop_h = 6;
  p.out_w = 4;
  p.out_h = 3;
  EXPECT_EQ(apply_augmentation(gradient8(), p).pixels, golden);
}

TEST(Augment, GoldenUpscaleWithEdgeClamp) {
  // 2x2 -> 4x4 upscale: the outermost sample centers fall outside the
  // source and must clamp to the edge texels. Frozen from the oracle.
  RasterImage tiny(2, 2);
  const std::uint8_t src[12] = {0, 0, 0, 255, 0, 128, 0, 255, 64, 255, 255, 255};
  std::copy(src, src + 12, tiny.pixels.begin());
  const std::vector<std::uint8_t> golden = {
      0, 0,   0,  64, 0,   32, 191, 0,   96,  255, 0,   128, 0, 64,  16, 64,
      64, 52,  191, 64, 124, 255, 64,  160, 0,   191, 48,  64, 191, 92,  191,
      191, 179, 255, 191, 223, 0,  255, 64,  64,  255, 112, 191, 255, 207, 255, 255, 255};
  AugmentationParams p;
  p.crop_w = 2;
  p.crop_h = 2;
  p.out_w = 4;
  p.out_h = 4;
  EXPECT_EQ(apply_augmentation(tiny, p).pixels, golden);
}

TEST(Augment, InvertIsAnInvolution) {
  Rng rng(2);
  RasterImage img = random_image(rng, 6, 5);
  AugmentationParams p = identity_params(img);
  p.ops = {{AugOp::invert, 0}, {AugOp::invert, 0}};
  EXPECT_EQ(apply_augmentation(img, p), img);
}

TEST(Augment, HflipIsAnInvolution) {
  Rng rng(3);
  RasterImage img = random_image(rng, 7, 4);
  AugmentationParams flip = identity_params(img);
  flip.hflip = true;
  RasterImage once = apply_augmentation(img, flip);
  EXPECT_NE(once, img);
  EXPECT_EQ(apply_augmentation(once, flip), img);
}

TEST(Augment, PixelOpFrozenArithmetic) {
  // Single-pixel checks of the exact integer formulas.
  RasterImage px(1, 1);
  auto run = [&](std::uint8_t v, AugOp op, std::int16_t m) {
    px.pixels = {v, v, v};
    AugmentationParams p = identity_params(px);
    p.ops = {{op, m}};
    return apply_augmentation(px, p).pixels[0];
  };
  EXPECT_EQ(run(100, AugOp::brightness, 50), 150);   // (100*150+50)/100
  EXPECT_EQ(run(200, AugOp::brightness, 50), 255);   // saturates
  EXPECT_EQ(run(200, AugOp::brightness, -100), 0);   // zero factor
  EXPECT_EQ(run(100, AugOp::contrast, 100), 72);     // 128 + (-28*200)/100
  EXPECT_EQ(run(200, AugOp::contrast, 100), 255);    // saturates
  EXPECT_EQ(run(100, AugOp::contrast, -100), 128);   // collapses to pivot
  EXPECT_EQ(run(123, AugOp::posterize, 5), 120);     // 0x7B & 0xF8
  EXPECT_EQ(run(127, AugOp::solarize, 128), 127);    // below threshold
  EXPECT_EQ(run(200, AugOp::solarize, 128), 55);     // 255-200
  EXPECT_EQ(run(137, AugOp::invert, 0), 118);
}

TEST(Augment, TranslateShiftsAndZeroFills) {
  RasterImage img(3, 2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint8_t(i + 1);
  AugmentationParams p = identity_params(img);
  p.ops = {{AugOp::translate_x, 1}};
  RasterImage out = apply_augmentation(img, p);
  // First column zero, the rest shifted right by one.
  EXPECT_EQ(out.at(0, 0)[0], 0);
  EXPECT_EQ(out.at(1, 0)[0], img.at(0, 0)[0]);
  EXPECT_EQ(out.at(2, 1)[2], img.at(1, 1)[2]);

  p.ops = {{AugOp::translate_y, -1}};
  out = apply_augmentation(img, p);
  EXPECT_EQ(out.at(0, 0)[0], img.at(0, 1)[0]);
  EXPECT_EQ(out.at(0, 1)[0], 0);
}

TEST(Augment, PipelineOrderFlipBeforeOps) {
  // hflip happens after the resize and before the op list, so a flip plus
  // x-translate equals flipping first, then translating.
  Rng rng(4);
  RasterImage img = random_image(rng, 9, 6);
  AugmentationParams both = identity_params(img);
  both.hflip = true;
  both.ops = {{AugOp::translate_x, 2}};
  AugmentationParams flip_only = identity_params(img);
  flip_only.hflip = true;
  AugmentationParams shift_only = identity_params(img);
  shift_only.ops = {{AugOp::translate_x, 2}};
  EXPECT_EQ(apply_augmentation(img, both),
            apply_augmentation(apply_augmentation(img, flip_only), shift_only));
}

TEST(Augment, CropOutOfBoundsRejected) {
  RasterImage img(8, 8);
  AugmentationParams p;
  p.crop_x = 5;
  p.crop_y = 0;
  p.crop_w = 4;
  p.crop_h = 4;
  p.out_w = 4;
  p.out_h = 4;
  try {
    apply_augmentation(img, p);
    FAIL() << "expected CropOutOfBounds";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::crop_out_of_bounds);
  }
}

TEST(Augment, MagnitudeRangesEnforced) {
  RasterImage img(4, 4);
  AugmentationParams p = identity_params(img);
  p.ops = {{AugOp::posterize, 0}};
  EXPECT_THROW(apply_augmentation(img, p), Error);
  p.ops = {{AugOp::brightness, 150}};
  EXPECT_THROW(apply_augmentation(img, p), Error);
  p.ops = {{AugOp::solarize, 300}};
  EXPECT_THROW(apply_augmentation(img, p), Error);
}

TEST(Augment, ReplayDeterminismOverRandomPairs) {
  // Two applications and a serialize/parse round trip of the parameters
  // must all give byte-identical images.
  Rng rng(5);
  AugmentPolicy policy;
  policy.out_w = 16;
  policy.out_h = 16;
  for (int it = 0; it < 1000; ++it) {
    std::uint16_t w = std::uint16_t(16 + rng.next_below(48));
    std::uint16_t h = std::uint16_t(16 + rng.next_below(48));
    RasterImage img = random_image(rng, w, h);
    AugmentationParams params = sample_augmentation(rng.next_u64(), policy, w, h);
    RasterImage a = apply_augmentation(img, params);
    RasterImage b = apply_augmentation(img, params);
    EXPECT_EQ(a, b);
    AugmentationParams decoded = parse_params(serialize_params(params));
    EXPECT_EQ(decoded, params);
    EXPECT_EQ(apply_augmentation(img, decoded), a);
  }
}

TEST(Augment, ParamsCodecRejectsMalformedBuffers) {
  AugmentationParams p;
  p.crop_w = 4;
  p.crop_h = 4;
  p.out_w = 4;
  p.out_h = 4;
  p.ops = {{AugOp::solarize, 128}};
  p.seed = 0xDEADBEEF;
  std::vector<std::uint8_t> bytes = serialize_params(p);
  EXPECT_EQ(bytes.size(), 14u + 3u + 8u);

  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(parse_params(truncated), Error);
  std::vector<std::uint8_t> trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(parse_params(trailing), Error);
  std::vector<std::uint8_t> bad_op = bytes;
  bad_op[14] = 9;  // op id after the hflip/count prefix
  EXPECT_THROW(parse_params(bad_op), Error);
}

TEST(Sample, DegeneratePolicyIsFullFrame) {
  AugmentPolicy policy;
  policy.scale_lo = policy.scale_hi = 1.0;
  policy.ratio_lo = policy.ratio_hi = 1.0;
  policy.randaug_ops = 0;
  policy.out_w = 8;
  policy.out_h = 8;
  AugmentationParams p = sample_augmentation(99, policy, 8, 8);
  EXPECT_EQ(p.crop_x, 0);
  EXPECT_EQ(p.crop_y, 0);
  EXPECT_EQ(p.crop_w, 8);
  EXPECT_EQ(p.crop_h, 8);
  EXPECT_TRUE(p.ops.empty());
}

TEST(Sample, SameSeedSameParams) {
  AugmentPolicy policy;
  AugmentationParams a = sample_augmentation(1234, policy, 64, 48);
  AugmentationParams b = sample_augmentation(1234, policy, 64, 48);
  EXPECT_EQ(a, b);
  AugmentationParams c = sample_augmentation(1235, policy, 64, 48);
  EXPECT_NE(a, c);
}

TEST(Sample, InvalidPolicyRejected) {
  AugmentPolicy bad;
  bad.scale_lo = 0.0;
  EXPECT_THROW(sample_augmentation(1, bad, 32, 32), Error);
  bad = AugmentPolicy{};
  bad.scale_lo = 0.9;
  bad.scale_hi = 0.5;
  EXPECT_THROW(sample_augmentation(1, bad, 32, 32), Error);
  bad = AugmentPolicy{};
  bad.randaug_magnitude = 11;
  EXPECT_THROW(sample_augmentation(1, bad, 32, 32), Error);
}

TEST(Sample, MagnitudesWithinDeclaredRanges) {
  AugmentPolicy policy;
  policy.randaug_ops = 4;
  policy.randaug_magnitude = 10;
  Rng rng(6);
  for (int it = 0; it < 500; ++it) {
    AugmentationParams p = sample_augmentation(rng.next_u64(), policy, 40, 40);
    for (const AugStep& s : p.ops) {
      switch (s.op) {
        case AugOp::brightness:
        case AugOp::contrast:
          EXPECT_LE(std::abs(int(s.magnitude)), 100);
          break;
        case AugOp::posterize:
          EXPECT_GE(s.magnitude, 1);
          EXPECT_LE(s.magnitude, 8);
          break;
        case AugOp::solarize:
          EXPECT_GE(s.magnitude, 0);
          EXPECT_LE(s.magnitude, 255);
          break;
        case AugOp::invert:
          EXPECT_EQ(s.magnitude, 0);
          break;
        case AugOp::translate_x:
          EXPECT_LE(std::abs(int(s.magnitude)), int(policy.out_w));
          break;
        case AugOp::translate_y:
          EXPECT_LE(std::abs(int(s.magnitude)), int(policy.out_h));
          break;
      }
    }
  }
}

// Independent reimplementation of the crop sampler used as the
// distribution oracle below. Shares no code with the library: different
// RNG (xorshift), same procedure.
struct OracleSampler {
  std::uint64_t state;
  explicit OracleSampler(std::uint64_t s) : state(s ? s : 1) {}
  double unit() {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return double(state >> 11) * 0x1.0p-53;
  }
  // Returns the realized crop area fraction for one sample.
  double area_fraction(int W, int H, double lo, double hi, double rlo, double rhi) {
    double A = double(W) * double(H);
    for (int attempt = 0; attempt < 10; ++attempt) {
      double target = lo * A + (hi - lo) * A * unit();
      double r = std::exp(std::log(rlo) + (std::log(rhi) - std::log(rlo)) * unit());
      double w = std::llround(std::sqrt(target * r));
      double h = std::llround(std::sqrt(target / r));
      if (w < 1 || h < 1 || w > W || h > H) continue;
      double got = w * h;
      if (got < lo * A || got > hi * A) continue;
      return got / A;
    }
    return 1.0;  // full-frame fallback for a square source within ratio bounds
  }
};

TEST(Sample, AreaFractionBoundsAndDistribution) {
  const int n = 10000;
  AugmentPolicy policy;  // scale (0.08, 1.0), ratio (3/4, 4/3)
  const int W = 200, H = 200;
  std::vector<double> lib(n), ora(n);
  Rng seeds(7);
  for (int i = 0; i < n; ++i) {
    AugmentationParams p = sample_augmentation(seeds.next_u64(), policy, W, H);
    double frac = (double(p.crop_w) * double(p.crop_h)) / (double(W) * double(H));
    EXPECT_GE(frac, 0.08);
    EXPECT_LE(frac, 1.0);
    lib[i] = frac;
  }
  OracleSampler oracle(0xABCDEF12345ull);
  for (int i = 0; i < n; ++i)
    ora[i] = oracle.area_fraction(W, H, policy.scale_lo, policy.scale_hi, policy.ratio_lo,
                                  policy.ratio_hi);
  // Two-sample Kolmogorov-Smirnov statistic between the library sampler and
  // the independent oracle; 0.03 is well above the n=10^4 critical value.
  std::sort(lib.begin(), lib.end());
  std::sort(ora.begin(), ora.end());
  double d = 0;
  std::size_t i = 0, j = 0;
  while (i < lib.size() && j < ora.size()) {
    if (lib[i] <= ora[j])
      ++i;
    else
      ++j;
    d = std::max(d, std::abs(double(i) / n - double(j) / n));
  }
  EXPECT_LE(d, 0.03);
}

TEST(Image, PpmRoundTrip) {
  Rng rng(8);
  RasterImage img = random_image(rng, 21, 13);
  const std::string path = ::testing::TempDir() + "/roundtrip.ppm";
  write_ppm(img, path);
  EXPECT_EQ(read_ppm(path), img);
}

TEST(Image, PngRoundTrip) {
  Rng rng(9);
  RasterImage img = random_image(rng, 33, 17);
  const std::string path = ::testing::TempDir() + "/roundtrip.png";
  write_png(img, path);
  EXPECT_EQ(read_png(path), img);
}

TEST(Image, PpmRejectsGarbage) {
  const std::string path = ::testing::TempDir() + "/garbage.ppm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5 2 2 255\n";
  }
  EXPECT_THROW(read_ppm(path), Error);
  EXPECT_THROW(read_ppm(::testing::TempDir() + "/missing.ppm"), Error);
}

}  // namespace
