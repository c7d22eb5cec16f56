#pragma once

// Seeded synthetic image-text corpus: each sample is a procedural pattern
// tile (pattern x hue x size) with a caption naming the three attributes.
// Rendering is pure integer math, so corpora are reproducible byte-for-byte.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmdr/error.hpp"
#include "mmdr/image.hpp"
#include "mmdr/rng.hpp"

namespace mmdr::toygen {

inline constexpr std::array<const char*, 8> kPatternWords = {
    "solid", "striped", "banded", "checker", "dotted", "cross", "ring", "diagonal"};
inline constexpr std::array<const char*, 8> kHueWords = {"red",  "orange", "yellow", "green",
                                                         "cyan", "blue",   "purple", "magenta"};
inline constexpr std::array<const char*, 4> kSizeWords = {"tiny", "small", "large", "huge"};

inline constexpr std::array<std::array<std::uint8_t, 3>, 8> kHueRgb = {{{220, 40, 40},
                                                                        {230, 140, 30},
                                                                        {230, 220, 40},
                                                                        {40, 200, 60},
                                                                        {40, 210, 210},
                                                                        {50, 80, 220},
                                                                        {150, 50, 210},
                                                                        {220, 50, 180}}};

// Foreground region side as a percentage of min(width, height).
inline constexpr std::array<int, 4> kSizePercent = {35, 55, 80, 100};

struct CellSpec {
  std::uint8_t pattern = 0;  // index into kPatternWords
  std::uint8_t hue = 0;      // index into kHueWords
  std::uint8_t size = 0;     // index into kSizeWords
  std::uint64_t jitter = 0;  // per-sample color/phase perturbation, 0 = canonical

  bool operator==(const CellSpec&) const = default;
};

inline constexpr std::size_t kCellCount =
    kPatternWords.size() * kHueWords.size() * kSizeWords.size();

namespace detail {

// Foreground membership for local coordinates inside a size x size region.
inline bool in_pattern(std::uint8_t pattern, int x, int y, int side, int phase) {
  int band = std::max(2, side / 6);
  int c = side / 2;
  int dx = x - c, dy = y - c;
  switch (pattern) {
    case 0: return true;                                   // solid
    case 1: return ((y + phase) / band) % 2 == 0;          // striped (horizontal bands)
    case 2: return ((x + phase) / band) % 2 == 0;          // banded (vertical bands)
    case 3: return (((x + phase) / band) + ((y + phase) / band)) % 2 == 0;  // checker
    case 4: {                                              // dotted
      int cell = std::max(4, side / 4);
      int lx = (x + phase) % cell - cell / 2;
      int ly = (y + phase) % cell - cell / 2;
      int r = cell * 3 / 8;
      return lx * lx + ly * ly <= r * r;
    }
    case 5: {                                              // cross
      int t = std::max(1, side / 8);
      return std::abs(dx) < t || std::abs(dy) < t;
    }
    case 6: {                                              // ring
      int r2 = dx * dx + dy * dy;
      int ro = side / 2, ri = side / 4;
      return r2 <= ro * ro && r2 >= ri * ri;
    }
    case 7: return (((x + y + phase) / band) % 2) == 0;    // diagonal
  }
  return false;
}

}  // namespace detail

inline RasterImage render_cell(const CellSpec& spec, std::uint16_t width, std::uint16_t height) {
  require(spec.pattern < kPatternWords.size() && spec.hue < kHueWords.size() &&
              spec.size < kSizeWords.size(),
          Errc::invalid_argument, "cell attribute out of range");
  require(width >= 8 && height >= 8, Errc::invalid_argument, "cell must be at least 8x8");

  // Jitter perturbs the foreground color slightly and shifts the pattern
  // phase so large corpora are not exact duplicates per cell.
  Rng jitter_rng(spec.jitter);
  int dr = 0, dg = 0, db = 0, phase = 0;
  std::uint8_t bg = 28;
  if (spec.jitter != 0) {
    dr = int(jitter_rng.next_below(17)) - 8;
    dg = int(jitter_rng.next_below(17)) - 8;
    db = int(jitter_rng.next_below(17)) - 8;
    phase = int(jitter_rng.next_below(7));
    bg = std::uint8_t(24 + jitter_rng.next_below(9));
  }
  auto channel = [](int base, int d) {
    int v = base + d;
    return std::uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
  };
  const auto& rgb = kHueRgb[spec.hue];
  std::uint8_t fr = channel(rgb[0], dr), fg = channel(rgb[1], dg), fb = channel(rgb[2], db);

  int side = std::min(width, height) * kSizePercent[spec.size] / 100;
  side = std::max(side, 4);
  int x0 = (width - side) / 2, y0 = (height - side) / 2;

  RasterImage img(width, height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = bg;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      if (!detail::in_pattern(spec.pattern, x, y, side, phase)) continue;
      std::uint8_t* p = img.at(std::size_t(x0 + x), std::size_t(y0 + y));
      p[0] = fr;
      p[1] = fg;
      p[2] = fb;
    }
  return img;
}

inline std::string caption_for(const CellSpec& spec) {
  std::string s = "a ";
  s += kSizeWords[spec.size];
  s += " ";
  s += kHueWords[spec.hue];
  s += " ";
  s += kPatternWords[spec.pattern];
  s += " pattern";
  return s;
}

// Paraphrases keep the three attribute words intact and vary the frame.
inline std::string paraphrase(const CellSpec& spec, std::uint64_t variant) {
  const char* size_w = kSizeWords[spec.size];
  const char* hue_w = kHueWords[spec.hue];
  const char* pat_w = kPatternWords[spec.pattern];
  std::ostringstream out;
  switch (variant % 5) {
    case 0: out << "a photo of a " << size_w << " " << hue_w << " " << pat_w << " pattern"; break;
    case 1: out << "the " << pat_w << " tile is " << hue_w << " and " << size_w; break;
    case 2: out << hue_w << " " << pat_w << " motif, " << size_w << " scale"; break;
    case 3: out << "an image showing a " << hue_w << " " << size_w << " " << pat_w << " design";
      break;
    default: out << size_w << " " << pat_w << " artwork in " << hue_w; break;
  }
  return out.str();
}

// Recovers the attribute triple from any caption that names all three with
// the canonical words. Returns nullopt for foreign captions.
inline std::optional<CellSpec> parse_caption(const std::string& caption) {
  CellSpec spec;
  int found_p = -1, found_h = -1, found_s = -1;
  std::string word;
  auto check = [&](const std::string& w) {
    if (w.empty()) return;
    for (std::size_t i = 0; i < kPatternWords.size(); ++i)
      if (w == kPatternWords[i]) found_p = int(i);
    for (std::size_t i = 0; i < kHueWords.size(); ++i)
      if (w == kHueWords[i]) found_h = int(i);
    for (std::size_t i = 0; i < kSizeWords.size(); ++i)
      if (w == kSizeWords[i]) found_s = int(i);
  };
  for (char c : caption) {
    if (std::isalpha(static_cast<unsigned char>(c)))
      word += char(std::tolower(static_cast<unsigned char>(c)));
    else {
      check(word);
      word.clear();
    }
  }
  check(word);
  if (found_p < 0 || found_h < 0 || found_s < 0) return std::nullopt;
  spec.pattern = std::uint8_t(found_p);
  spec.hue = std::uint8_t(found_h);
  spec.size = std::uint8_t(found_s);
  return spec;
}

struct ToySample {
  std::uint64_t id = 0;
  CellSpec cell;
  RasterImage image;
  std::string caption;
};

// n samples cycling through the 256 attribute combinations in a seeded
// shuffled order, with fresh jitter per sample.
inline std::vector<ToySample> make_corpus(std::size_t n, std::uint64_t seed, std::uint16_t width,
                                          std::uint16_t height) {
  std::vector<std::uint16_t> order(kCellCount);
  for (std::size_t i = 0; i < kCellCount; ++i) order[i] = std::uint16_t(i);
  Rng shuffle_rng(derive_seed(seed, 0, 0, 1));
  for (std::size_t i = kCellCount - 1; i > 0; --i)
    std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);

  std::vector<ToySample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint16_t combo = order[i % kCellCount];
    ToySample s;
    s.id = i;
    s.cell.pattern = std::uint8_t(combo % 8);
    s.cell.hue = std::uint8_t((combo / 8) % 8);
    s.cell.size = std::uint8_t(combo / 64);
    s.cell.jitter = derive_seed(seed, i, combo, 2);
    s.image = render_cell(s.cell, width, height);
    s.caption = caption_for(s.cell);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mmdr::toygen
