#include "zsseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

struct Header {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
};

void skip_space_and_comments(std::istream& is) {
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

Header read_header(std::istream& is, const std::string& path) {
  Header h;
  is >> h.magic;
  skip_space_and_comments(is);
  is >> h.width;
  skip_space_and_comments(is);
  is >> h.height;
  skip_space_and_comments(is);
  is >> h.maxval;
  if (!is || h.maxval != 255 || h.width == 0 || h.height == 0) throw FormatError("unsupported netpbm header in " + path);
  is.get();  // single whitespace before the raster
  return h;
}

// Sample position in the source for output index `i` (half-pixel centres).
void bilinear_taps(std::size_t i, std::size_t src, std::size_t dst, std::size_t& i0, std::size_t& i1, double& frac) {
  double x = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
  x = std::clamp(x, 0.0, static_cast<double>(src - 1));
  i0 = static_cast<std::size_t>(std::floor(x));
  i1 = std::min(i0 + 1, src - 1);
  frac = x - static_cast<double>(i0);
}

}  // namespace

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!os) throw IoError("failed writing " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  const auto h = read_header(is, path);
  if (h.magic != "P6") throw FormatError(path + " is not a binary PPM (P6)");
  Image img(h.height, h.width);
  is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!is) throw FormatError("truncated raster in " + path);
  return img;
}

void write_pgm(const std::string& path, const LabelMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  std::vector<char> bytes(map.labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (map.labels[i] > 255) throw FormatError("label " + std::to_string(map.labels[i]) + " does not fit an 8-bit PGM");
    bytes[i] = static_cast<char>(map.labels[i]);
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path);
}

LabelMap read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  const auto h = read_header(is, path);
  if (h.magic != "P5") throw FormatError(path + " is not a binary PGM (P5)");
  LabelMap map(h.height, h.width);
  std::vector<unsigned char> bytes(h.width * h.height);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw FormatError("truncated raster in " + path);
  std::copy(bytes.begin(), bytes.end(), map.labels.begin());
  return map;
}

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  if (top + height > image.height || left + width > image.width) throw DimensionError("crop window outside the image");
  Image out(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    const auto* src = &image.rgb[((top + r) * image.width + left) * 3];
    std::copy(src, src + width * 3, &out.rgb[r * width * 3]);
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (height == image.height && width == image.width) return image;
  if (height == 0 || width == 0 || image.height == 0 || image.width == 0) throw DimensionError("resize to or from an empty image");
  Image out(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    std::size_t r0, r1;
    double fr;
    bilinear_taps(r, image.height, height, r0, r1, fr);
    for (std::size_t c = 0; c < width; ++c) {
      std::size_t c0, c1;
      double fc;
      bilinear_taps(c, image.width, width, c0, c1, fc);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double top = image.at(r0, c0, ch) * (1 - fc) + image.at(r0, c1, ch) * fc;
        const double bottom = image.at(r1, c0, ch) * (1 - fc) + image.at(r1, c1, ch) * fc;
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(top * (1 - fr) + bottom * fr, 0.0, 255.0)));
      }
    }
  }
  return out;
}

std::vector<Real> resize_plane_bilinear(const std::vector<Real>& plane, std::size_t src_h, std::size_t src_w,
                                        std::size_t dst_h, std::size_t dst_w) {
  if (plane.size() != src_h * src_w) throw DimensionError("plane size does not match its dimensions");
  if (src_h == dst_h && src_w == dst_w) return plane;
  std::vector<Real> out(dst_h * dst_w);
  for (std::size_t r = 0; r < dst_h; ++r) {
    std::size_t r0, r1;
    double fr;
    bilinear_taps(r, src_h, dst_h, r0, r1, fr);
    for (std::size_t c = 0; c < dst_w; ++c) {
      std::size_t c0, c1;
      double fc;
      bilinear_taps(c, src_w, dst_w, c0, c1, fc);
      const double top = plane[r0 * src_w + c0] * (1 - fc) + plane[r0 * src_w + c1] * fc;
      const double bottom = plane[r1 * src_w + c0] * (1 - fc) + plane[r1 * src_w + c1] * fc;
      out[r * dst_w + c] = static_cast<Real>(top * (1 - fr) + bottom * fr);
    }
  }
  return out;
}

ZSSEG_NAMESPACE_END
