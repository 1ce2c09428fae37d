#pragma once

// 8-bit grayscale images and their binary PGM/PPM encodings.

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "agn/numcore.hpp"

namespace agn {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w < 0 || h < 0) fail("GrayImage: negative size ", w, "x", h);
  }

  [[nodiscard]] bool empty() const noexcept { return pixels.empty(); }
  [[nodiscard]] bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  std::uint8_t& at(int x, int y) noexcept {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
  [[nodiscard]] std::uint8_t at(int x, int y) const noexcept {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB

  RgbImage() = default;
  RgbImage(int w, int h)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0) {}
};

/// Left-right mirror; maps right-breast images to the canonical orientation.
inline GrayImage mirror_horizontal(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
  return out;
}

namespace detail {
inline void skip_pnm_space(std::istream& is) {
  while (true) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      is.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& is, const std::string& what) {
  skip_pnm_space(is);
  int v = -1;
  if (!(is >> v) || v < 0) fail("PGM: bad ", what);
  return v;
}
}  // namespace detail

inline void write_pgm(std::ostream& os, const GrayImage& img) {
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("write_pgm: cannot open '", path, "'");
  write_pgm(os, img);
  if (!os) fail("write_pgm: write failed for '", path, "'");
}

inline GrayImage read_pgm(std::istream& is) {
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || magic[1] != '5') fail("PGM: expected binary P5 header");
  const int w = detail::read_pnm_int(is, "width");
  const int h = detail::read_pnm_int(is, "height");
  const int maxval = detail::read_pnm_int(is, "maxval");
  if (maxval != 255) fail("PGM: only 8-bit (maxval 255) supported, got ", maxval);
  is.get();  // single whitespace before raster
  GrayImage img(w, h);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!is) fail("PGM: truncated raster");
  return img;
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("read_pgm: cannot open '", path, "'");
  try {
    return read_pgm(is);
  } catch (const Error& e) {
    fail(path, ": ", e.what());
  }
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("write_ppm: cannot open '", path, "'");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) fail("write_ppm: write failed for '", path, "'");
}

/// Red-channel overlay: out = (1 - alpha) * gray + alpha * (heat, 0, 0).
inline RgbImage overlay_red(const GrayImage& base, const GrayImage& heat, double alpha = 0.5) {
  if (base.width != heat.width || base.height != heat.height) fail("overlay_red: size mismatch");
  RgbImage out(base.width, base.height);
  for (std::size_t i = 0; i < base.pixels.size(); ++i) {
    const double g = base.pixels[i];
    const double h = heat.pixels[i];
    out.pixels[3 * i + 0] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * g + alpha * h));
    out.pixels[3 * i + 1] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * g));
    out.pixels[3 * i + 2] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * g));
  }
  return out;
}

/// Nearest-neighbour integer upscale (visualization export).
inline GrayImage upscale_nearest(const GrayImage& img, int factor) {
  if (factor < 1) fail("upscale_nearest: factor must be >= 1");
  GrayImage out(img.width * factor, img.height * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = img.at(x / factor, y / factor);
  return out;
}

}  // namespace agn
