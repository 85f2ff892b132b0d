// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Difference maps: prediction panel (grayscale) beside a signed-difference
// panel on a blue-white-red scale centred at 0 K, written as RGB PNG.

#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mocolsk/error.hpp"

namespace mocolsk::plot {

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::array<std::uint8_t, 3> at(int x, int y) const {
    const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[o], rgb[o + 1], rgb[o + 2]};
  }
};

/// Colour scale half-width: max |diff| rounded up to a multiple of 0.5 K.
inline double diff_bound(std::span<const double> diff) {
  double m = 0;
  for (double d : diff) m = std::max(m, std::abs(d));
  const double b = std::ceil(m / 0.5) * 0.5;
  return b > 0 ? b : 0.5;
}

/// t in [-1, 1]: -1 blue, 0 white, +1 red.
inline std::array<std::uint8_t, 3> diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(t))));
  if (t > 0) return {255, fade, fade};
  if (t < 0) return {fade, fade, 255};
  return {255, 255, 255};
}

struct DiffPlot {
  Image image;
  double bound = 0;
  int panel_width = 0, gap = 0;
};

/// pred, gt: h x w kelvin grids. Left panel: prediction, right: pred - gt.
inline DiffPlot render_diff(std::span<const double> pred, std::span<const double> gt, int h, int w, int zoom = 1,
                            int gap = 4) {
  if (pred.size() != gt.size() || pred.size() != static_cast<std::size_t>(h) * w)
    throw ShapeError("plot: prediction and ground truth shapes differ");
  if (zoom < 1) throw ValidationError("plot: zoom must be >= 1");
  std::vector<double> diff(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) diff[i] = pred[i] - gt[i];

  DiffPlot p;
  p.bound = diff_bound(diff);
  p.panel_width = w * zoom;
  p.gap = gap;
  p.image.width = 2 * p.panel_width + gap;
  p.image.height = h * zoom;
  p.image.rgb.assign(static_cast<std::size_t>(p.image.width) * p.image.height * 3, 255);

  const auto [mn, mx] = std::minmax_element(pred.begin(), pred.end());
  const double lo = *mn, span = *mx - *mn;
  for (int y = 0; y < p.image.height; ++y)
    for (int x = 0; x < p.panel_width; ++x) {
      const std::size_t src = static_cast<std::size_t>(y / zoom) * w + x / zoom;
      const auto g = static_cast<std::uint8_t>(span > 0 ? std::lround(255.0 * (pred[src] - lo) / span) : 128);
      const auto c = diverging(diff[src] / p.bound);
      std::uint8_t* left = &p.image.rgb[(static_cast<std::size_t>(y) * p.image.width + x) * 3];
      std::uint8_t* right = &p.image.rgb[(static_cast<std::size_t>(y) * p.image.width + p.panel_width + gap + x) * 3];
      left[0] = left[1] = left[2] = g;
      right[0] = c[0];
      right[1] = c[1];
      right[2] = c[2];
    }
  return p;
}

namespace detail {
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}
}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width * 3 + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    const auto* row = &img.rgb[static_cast<std::size_t>(y) * img.width * 3];
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(img.width) * 3);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("png: zlib compression failed");
  z.resize(zlen);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB
  detail::chunk(out, "IHDR", ihdr);
  detail::chunk(out, "IDAT", z);
  detail::chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Decodes PNGs written by encode_png (8-bit RGB, filter 0); used by tests.
inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
  auto u32 = [&](std::size_t o) {
    return (std::uint32_t(bytes[o]) << 24) | (std::uint32_t(bytes[o + 1]) << 16) | (std::uint32_t(bytes[o + 2]) << 8) |
           bytes[o + 3];
  };
  if (bytes.size() < 8 || bytes[1] != 'P') throw ValidationError("not a PNG");
  Image img;
  std::vector<std::uint8_t> z;
  for (std::size_t o = 8; o + 8 <= bytes.size();) {
    const std::uint32_t len = u32(o);
    const std::string type(bytes.begin() + static_cast<std::ptrdiff_t>(o + 4), bytes.begin() + static_cast<std::ptrdiff_t>(o + 8));
    const std::size_t d = o + 8;
    if (type == "IHDR") {
      img.width = static_cast<int>(u32(d));
      img.height = static_cast<int>(u32(d + 4));
    } else if (type == "IDAT") {
      z.insert(z.end(), bytes.begin() + static_cast<std::ptrdiff_t>(d), bytes.begin() + static_cast<std::ptrdiff_t>(d + len));
    }
    o = d + len + 4;
  }
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * (img.width * 3 + 1));
  uLongf rlen = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &rlen, z.data(), static_cast<uLong>(z.size())) != Z_OK) throw ValidationError("bad PNG data");
  img.rgb.reserve(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    const auto* row = &raw[static_cast<std::size_t>(y) * (img.width * 3 + 1) + 1];
    img.rgb.insert(img.rgb.end(), row, row + static_cast<std::size_t>(img.width) * 3);
  }
  return img;
}

}  // namespace mocolsk::plot
