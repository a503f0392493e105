#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "omreid/common.hpp"

namespace omreid {

// H x W x C grid of floats in [0, 1], row-major with interleaved channels.
struct Image {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<double> pix;

  Image() = default;
  Image(std::size_t h_, std::size_t w_, std::size_t c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), pix(h_ * w_ * c_, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t ch) { return pix[(y * w + x) * c + ch]; }
  double at(std::size_t y, std::size_t x, std::size_t ch) const { return pix[(y * w + x) * c + ch]; }

  bool operator==(const Image& o) const { return h == o.h && w == o.w && c == o.c && pix == o.pix; }
};

inline std::uint8_t to_byte(double v) {
  const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

// Writes P5 (1 channel) or P6 (3 channels) with maxval 255.
inline void write_pnm(const Image& img, const std::string& path) {
  if (img.c != 1 && img.c != 3) throw data_error("pnm supports 1 or 3 channels, got " + std::to_string(img.c));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open for write: " + path);
  out << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> bytes;
  bytes.reserve(img.pix.size());
  for (double v : img.pix) bytes.push_back(to_byte(v));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data_error("short write: " + path);
}

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open: " + path);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0)
    throw data_error("unsupported pnm header in " + path);
  in.get();  // single whitespace after maxval
  const std::size_t c = (magic == "P5") ? 1 : 3;
  Image img(h, w, c);
  std::vector<std::uint8_t> bytes(h * w * c);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw data_error("truncated pnm: " + path);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pix[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace omreid
