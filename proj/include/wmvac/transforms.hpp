#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "wmvac/jpeg.hpp"
#include "wmvac/tensor.hpp"

namespace wmvac {

// Lossy JPEG encode/decode pass at the given quality. Shape and [0,1] range
// are preserved; content degrades as quality drops.
inline Tensor jpeg_roundtrip(const Tensor& image, int quality) {
  return jpeg_decode(jpeg_encode(image, quality));
}

// Gaussian blur with sigma = radius, kernel half-width ceil(3*sigma) and
// mirror (symmetric) padding. Radius 0 is the identity.
inline Tensor gaussian_blur(const Tensor& image, double radius) {
  if (radius < 0.0) throw std::invalid_argument("gaussian_blur: radius must be >= 0");
  if (radius == 0.0) return image;
  const Shape s = image.shape();
  const int half = static_cast<int>(std::ceil(3.0 * radius));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * radius * radius));
    kernel[static_cast<std::size_t>(i + half)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  auto mirror = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };

  Tensor out(s);
  std::vector<double> tmp(static_cast<std::size_t>(s.h) * s.w);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int k = -half; k <= half; ++k)
            acc += kernel[static_cast<std::size_t>(k + half)] * image.at(n, c, y, mirror(x + k, s.w));
          tmp[static_cast<std::size_t>(y) * s.w + x] = acc;
        }
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int k = -half; k <= half; ++k)
            acc += kernel[static_cast<std::size_t>(k + half)] * tmp[static_cast<std::size_t>(mirror(y + k, s.h)) * s.w + x];
          out.at(n, c, y, x) = static_cast<float>(acc);
        }
    }
  return out;
}

}  // namespace wmvac
