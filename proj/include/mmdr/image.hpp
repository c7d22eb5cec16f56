#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mmdr/error.hpp"

namespace mmdr {

// 8-bit RGB raster, row-major, three channels always.
struct RasterImage {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<std::uint8_t> pixels;  // width*height*3

  RasterImage() = default;
  RasterImage(std::uint16_t w, std::uint16_t h)
      : width(w), height(h), pixels(std::size_t(w) * h * 3, 0) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * 3;
  }

  void validate() const {
    require(pixels.size() == std::size_t(width) * height * 3, Errc::bad_format,
            "pixel payload does not match dimensions");
  }

  bool operator==(const RasterImage& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

// Binary PPM (P6), maxval 255.
inline void write_ppm(const RasterImage& img, const std::string& path) {
  img.validate();
  std::ofstream f(path, std::ios::binary);
  require(bool(f), Errc::io_error, "cannot open " + path + " for writing");
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          std::streamsize(img.pixels.size()));
  require(bool(f), Errc::io_error, "short write to " + path);
}

namespace detail {
inline int ppm_next_token(std::istream& in) {
  // Skips whitespace and '#' comments, returns a non-negative integer.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  require(c != EOF && std::isdigit(c), Errc::bad_format, "malformed PPM header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    require(v <= 1 << 20, Errc::bad_format, "PPM header value out of range");
    c = in.get();
  }
  return v;
}
}  // namespace detail

inline RasterImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), Errc::io_error, "cannot open " + path);
  char magic[2] = {0, 0};
  f.read(magic, 2);
  require(magic[0] == 'P' && magic[1] == '6', Errc::bad_format, path + ": not a P6 PPM");
  int w = detail::ppm_next_token(f);
  int h = detail::ppm_next_token(f);
  int maxval = detail::ppm_next_token(f);
  require(w > 0 && h > 0 && w <= 0xFFFF && h <= 0xFFFF, Errc::bad_format,
          path + ": unsupported dimensions");
  require(maxval == 255, Errc::bad_format, path + ": only maxval 255 supported");
  RasterImage img{std::uint16_t(w), std::uint16_t(h)};
  f.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  require(f.gcount() == std::streamsize(img.pixels.size()), Errc::bad_format,
          path + ": truncated pixel data");
  return img;
}

}  // namespace mmdr
