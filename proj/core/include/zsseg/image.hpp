#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "zsseg/real.hpp"

ZSSEG_NAMESPACE_BEGIN

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}

  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) { return rgb[(r * width + c) * 3 + ch]; }
  std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const { return rgb[(r * width + c) * 3 + ch]; }
  bool operator==(const Image&) const = default;
};

/// Per-pixel integer labels (class ids), row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint16_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint16_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::uint16_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  bool operator==(const LabelMap&) const = default;
};

/// Binary PPM (P6) / PGM (P5) with maxval 255.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& map);
LabelMap read_pgm(const std::string& path);

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width);
/// Bilinear resampling with half-pixel centres (align_corners = false).
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
/// Same sampling grid for a single-channel float plane.
std::vector<Real> resize_plane_bilinear(const std::vector<Real>& plane, std::size_t src_h, std::size_t src_w,
                                        std::size_t dst_h, std::size_t dst_w);

ZSSEG_NAMESPACE_END
