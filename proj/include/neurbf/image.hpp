#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "neurbf/error.hpp"

namespace neurbf {

/// H x W RGB image, row-major, values in [0, 1].
struct ImageBuffer {
  int height = 0;
  int width = 0;
  int bit_depth = 8;  // depth of the source file (8 or 16)
  std::vector<double> data;  // height * width * 3

  ImageBuffer() = default;
  ImageBuffer(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {}

  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  double& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }

  void clamp() {
    for (double& v : data) v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  }
};

/// Fitting coordinate of a pixel center: ((col + 0.5) / W, (row + 0.5) / H).
inline std::array<double, 2> pixel_coordinate(int row, int col, int height, int width) {
  return {(col + 0.5) / width, (row + 0.5) / height};
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8- or 16-bit PNG (gray, gray+alpha, RGB, RGBA or palette; alpha is dropped).
inline ImageBuffer load_image(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  require(file != nullptr, ErrorKind::io, "cannot open image '" + path + "'");
  png_byte sig[8];
  require(std::fread(sig, 1, 8, file.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, ErrorKind::io,
          "'" + path + "' is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  require(png != nullptr, ErrorKind::io, "libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  ImageBuffer img;
  std::vector<png_byte> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::io, "failed to decode '" + path + "': " + err);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian samples in memory
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.bit_depth = depth == 16 ? 16 : 8;
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * static_cast<std::size_t>(img.height));
  rows.resize(static_cast<std::size_t>(img.height));
  for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + stride * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img.data.resize(img.pixels() * 3);
  if (img.bit_depth == 16) {
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      const std::uint16_t v = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
      img.data[i] = v / 65535.0;
    }
  } else {
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw[i] / 255.0;
  }
  return img;
}

/// Quantizes v in [0, 1] to an integer code, rounding half away from zero.
inline std::uint32_t quantize(double v, int bit_depth) {
  const double full = bit_depth == 16 ? 65535.0 : 255.0;
  const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  return static_cast<std::uint32_t>(std::round(c * full));
}

/// Writes an RGB PNG at 8 or 16 bits per channel.
inline void save_image(const ImageBuffer& img, const std::string& path, int bit_depth = 8) {
  require(bit_depth == 8 || bit_depth == 16, ErrorKind::config, "save_image: bit depth must be 8 or 16");
  require(img.height > 0 && img.width > 0 && img.data.size() == img.pixels() * 3, ErrorKind::logic,
          "save_image: malformed image buffer");
  const std::size_t bytes = bit_depth / 8;
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3 * bytes;
  std::vector<png_byte> raw(stride * static_cast<std::size_t>(img.height));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const std::uint32_t q = quantize(img.data[i], bit_depth);
    if (bytes == 1) {
      raw[i] = static_cast<png_byte>(q);
    } else {
      raw[2 * i] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
      raw[2 * i + 1] = static_cast<png_byte>(q & 0xFF);
    }
  }

  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  require(file != nullptr, ErrorKind::io, "cannot write image '" + path + "'");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  require(png != nullptr, ErrorKind::io, "libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + stride * r;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "failed to encode '" + path + "': " + err);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bit_depth,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  require(std::fflush(file.get()) == 0, ErrorKind::io, "failed to flush '" + path + "'");
}

inline double mse(const ImageBuffer& a, const ImageBuffer& b) {
  require(a.height == b.height && a.width == b.width && a.data.size() == b.data.size(), ErrorKind::config,
          "image dimensions differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
              std::to_string(b.width) + "x" + std::to_string(b.height));
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

/// Peak signal-to-noise ratio with peak 1; +infinity for identical images.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

/// Copy of `img` with every value rounded to the given bit depth.
inline ImageBuffer quantized(const ImageBuffer& img, int bit_depth = 8) {
  ImageBuffer q = img;
  const double full = bit_depth == 16 ? 65535.0 : 255.0;
  for (double& v : q.data) v = quantize(v, bit_depth) / full;
  return q;
}

inline constexpr double kErrorMapRange = 0.01;

/// 256-entry colormap, dark purple (no error) through teal to yellow (>= range).
inline const std::array<std::array<double, 3>, 256>& error_colormap() {
  static const auto table = [] {
    // Anchor colors sampled from the viridis map.
    constexpr std::array<std::array<double, 3>, 9> anchors = {{{0.267, 0.005, 0.329},
                                                               {0.283, 0.141, 0.458},
                                                               {0.254, 0.265, 0.530},
                                                               {0.207, 0.372, 0.553},
                                                               {0.164, 0.471, 0.558},
                                                               {0.128, 0.567, 0.551},
                                                               {0.135, 0.659, 0.518},
                                                               {0.478, 0.821, 0.318},
                                                               {0.993, 0.906, 0.144}}};
    std::array<std::array<double, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double pos = i / 255.0 * 8.0;
      const int a = std::min(static_cast<int>(pos), 7);
      const double f = pos - a;
      for (int c = 0; c < 3; ++c)
        t[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
            (1.0 - f) * anchors[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)] +
            f * anchors[static_cast<std::size_t>(a + 1)][static_cast<std::size_t>(c)];
    }
    return t;
  }();
  return table;
}

/// Colormap entry for a mean absolute error value over [0, kErrorMapRange].
inline std::size_t error_colormap_index(double err) {
  const double t = std::clamp(err / kErrorMapRange, 0.0, 1.0);
  return static_cast<std::size_t>(std::round(t * 255.0));
}

/// Per-pixel mean absolute channel error rendered through the error colormap.
inline ImageBuffer error_map(const ImageBuffer& a, const ImageBuffer& b) {
  require(a.height == b.height && a.width == b.width, ErrorKind::config, "error_map: image dimensions differ");
  ImageBuffer out(a.height, a.width);
  const auto& cmap = error_colormap();
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c) {
      double e = 0.0;
      for (int ch = 0; ch < 3; ++ch) e += std::abs(a.at(r, c, ch) - b.at(r, c, ch));
      const auto& color = cmap[error_colormap_index(e / 3.0)];
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = color[static_cast<std::size_t>(ch)];
    }
  return out;
}

}  // namespace neurbf
