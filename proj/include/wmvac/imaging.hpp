#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmvac/rng.hpp"
#include "wmvac/tensor.hpp"

namespace wmvac {

// Decoded 8-bit PNG mapped to [0,1] by v/255. Alpha present only for RGBA.
struct LoadedImage {
  Tensor rgb;                   // 1x3xHxW
  std::optional<Tensor> alpha;  // 1x1xHxW
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline unsigned char to_byte(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<unsigned char>(q < 0 ? 0 : (q > 255 ? 255 : q));
}

}  // namespace detail

inline LoadedImage load_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("load_png: cannot open " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
    throw std::runtime_error("load_png: " + path + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("load_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("load_png: png_create_info_struct failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("load_png: decode error in " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("load_png: " + path + ": unsupported bit depth " + std::to_string(depth) +
                             " (only 8-bit supported)");
  }
  if (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGBA) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("load_png: " + path + ": unsupported color type (only 8-bit RGB/RGBA)");
  }
  const int channels = (color == PNG_COLOR_TYPE_RGBA) ? 4 : 3;

  pixels.resize(static_cast<std::size_t>(w) * h * channels);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    row_ptrs[y] = pixels.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  LoadedImage out;
  out.rgb = Tensor(Shape{1, 3, static_cast<int>(h), static_cast<int>(w)});
  if (channels == 4) out.alpha = Tensor(Shape{1, 1, static_cast<int>(h), static_cast<int>(w)});
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_byte* row = row_ptrs[y];
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c)
        out.rgb.at(0, c, static_cast<int>(y), static_cast<int>(x)) =
            static_cast<float>(row[x * channels + c]) / 255.0f;
      if (channels == 4)
        out.alpha->at(0, 0, static_cast<int>(y), static_cast<int>(x)) =
            static_cast<float>(row[x * channels + 3]) / 255.0f;
    }
  }
  return out;
}

namespace detail {

inline void save_png_impl(const Tensor& rgb, const Tensor* alpha, const std::string& path) {
  const Shape s = rgb.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("save_png: expected 1x3xHxW, got " + s.str());
  if (alpha && (alpha->shape().h != s.h || alpha->shape().w != s.w || alpha->shape().c != 1))
    throw std::invalid_argument("save_png: alpha shape mismatch");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("save_png: cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("save_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("save_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("save_png: encode error for " + path);
  }
  png_init_io(png, fp.get());
  const int channels = alpha ? 4 : 3;
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 8,
               alpha ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(s.w) * channels);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) row[x * channels + c] = to_byte(rgb.at(0, c, y, x));
      if (alpha) row[x * channels + 3] = to_byte(alpha->at(0, 0, y, x));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

// Writes an 8-bit RGB PNG; values are clamped to [0,1] and quantized by
// round(v*255).
inline void save_png(const Tensor& rgb, const std::string& path) {
  detail::save_png_impl(rgb, nullptr, path);
}

inline void save_png_rgba(const Tensor& rgb, const Tensor& alpha, const std::string& path) {
  detail::save_png_impl(rgb, &alpha, path);
}

// Snap to the 8-bit grid the PNG writer uses: round(v*255)/255, clamped.
inline Tensor quantize_to_byte_grid(const Tensor& t) {
  Tensor out(t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i)
    out[i] = static_cast<float>(detail::to_byte(t[i])) / 255.0f;
  return out;
}

// I.i.d. uniform noise on [-epsilon, +epsilon], reproducible by seed.
inline Tensor uniform_noise(Shape shape, float epsilon, std::uint64_t seed) {
  if (epsilon < 0.0f) throw std::invalid_argument("uniform_noise: epsilon must be >= 0");
  Tensor out(shape);
  Rng rng(seed);
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = epsilon * (2.0f * rng.uniform() - 1.0f);
  return out;
}

}  // namespace wmvac
