#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "wmvac/autodiff.hpp"
#include "wmvac/imaging.hpp"
#include "wmvac/rng.hpp"
#include "wmvac/tensor.hpp"

namespace wmvac {

// A watermark pattern: color plus blending alpha, both in [0,1].
struct WatermarkAsset {
  Tensor color;  // 1x3xhxw
  Tensor alpha;  // 1x1xhxw
};

// One watermark application: where it goes, how large it renders and how
// opaque it blends.
struct Placement {
  int left = 0;
  int top = 0;
  int width = 1;
  int height = 1;
  float opacity = 1.0f;
};

struct CompositeResult {
  Tensor image;  // 1x3xHxW, host outside the placement
  Tensor mask;   // 1x1xHxW, opacity * rendered alpha inside, zero outside
};

namespace detail {

// Resample one channel plane with align-corners bilinear interpolation.
// A 1-pixel target along an axis degenerates to the mean along that axis.
inline void resize_plane(const Tensor& src, int n, int c, const Tensor* dst_unused, Tensor& dst,
                         int dst_c) {
  (void)dst_unused;
  const int sh = src.shape().h, sw = src.shape().w;
  const int dh = dst.shape().h, dw = dst.shape().w;

  // rows first
  std::vector<float> tmp(static_cast<std::size_t>(dh) * sw);
  for (int y = 0; y < dh; ++y) {
    float* out_row = tmp.data() + static_cast<std::size_t>(y) * sw;
    if (dh == 1) {
      for (int x = 0; x < sw; ++x) {
        double acc = 0.0;
        for (int yy = 0; yy < sh; ++yy) acc += src.at(n, c, yy, x);
        out_row[x] = static_cast<float>(acc / sh);
      }
      continue;
    }
    const double pos = static_cast<double>(y) * (sh - 1) / (dh - 1);
    const int y0 = std::min(sh - 1, static_cast<int>(pos));
    const int y1 = std::min(sh - 1, y0 + 1);
    const double fy = pos - y0;
    for (int x = 0; x < sw; ++x)
      out_row[x] = static_cast<float>((1.0 - fy) * src.at(n, c, y0, x) + fy * src.at(n, c, y1, x));
  }

  // then columns
  for (int y = 0; y < dh; ++y) {
    const float* in_row = tmp.data() + static_cast<std::size_t>(y) * sw;
    for (int x = 0; x < dw; ++x) {
      if (dw == 1) {
        double acc = 0.0;
        for (int xx = 0; xx < sw; ++xx) acc += in_row[xx];
        dst.at(0, dst_c, y, x) = static_cast<float>(acc / sw);
        continue;
      }
      const double pos = static_cast<double>(x) * (sw - 1) / (dw - 1);
      const int x0 = std::min(sw - 1, static_cast<int>(pos));
      const int x1 = std::min(sw - 1, x0 + 1);
      const double fx = pos - x0;
      dst.at(0, dst_c, y, x) = static_cast<float>((1.0 - fx) * in_row[x0] + fx * in_row[x1]);
    }
  }
}

}  // namespace detail

inline WatermarkAsset resize_bilinear(const WatermarkAsset& asset, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("resize_bilinear: target size must be >= 1");
  WatermarkAsset out;
  out.color = Tensor(Shape{1, 3, out_h, out_w});
  out.alpha = Tensor(Shape{1, 1, out_h, out_w});
  for (int c = 0; c < 3; ++c) detail::resize_plane(asset.color, 0, c, nullptr, out.color, c);
  detail::resize_plane(asset.alpha, 0, 0, nullptr, out.alpha, 0);
  return out;
}

namespace detail {

inline void check_placement(const Shape& host, const Placement& p) {
  if (p.width < 1 || p.height < 1)
    throw std::invalid_argument("composite: placement size must be >= 1");
  if (p.opacity < 0.0f || p.opacity > 1.0f)
    throw std::invalid_argument("composite: opacity must be in [0,1]");
  if (p.left < 0 || p.top < 0 || p.left + p.width > host.w || p.top + p.height > host.h)
    throw std::invalid_argument("composite: placement [" + std::to_string(p.left) + "," +
                                std::to_string(p.top) + " " + std::to_string(p.width) + "x" +
                                std::to_string(p.height) + "] outside host " + host.str());
}

// Per-pixel blend coefficients: out = scale*host + offset with
// scale = 1 - opacity*a and offset = opacity*a*color inside the placement.
struct BlendCoeffs {
  Tensor scale;   // 1x3xHxW
  Tensor offset;  // 1x3xHxW
  Tensor mask;    // 1x1xHxW
};

inline BlendCoeffs blend_coefficients(const Shape& host, const WatermarkAsset& asset,
                                      const Placement& p) {
  check_placement(host, p);
  const WatermarkAsset rendered = resize_bilinear(asset, p.height, p.width);
  BlendCoeffs bc;
  bc.scale = Tensor(Shape{1, 3, host.h, host.w}, 1.0f);
  bc.offset = Tensor(Shape{1, 3, host.h, host.w}, 0.0f);
  bc.mask = Tensor(Shape{1, 1, host.h, host.w}, 0.0f);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      const float m = p.opacity * rendered.alpha.at(0, 0, y, x);
      bc.mask.at(0, 0, p.top + y, p.left + x) = m;
      for (int c = 0; c < 3; ++c) {
        bc.scale.at(0, c, p.top + y, p.left + x) = 1.0f - m;
        bc.offset.at(0, c, p.top + y, p.left + x) = m * rendered.color.at(0, c, y, x);
      }
    }
  }
  return bc;
}

}  // namespace detail

inline CompositeResult composite(const Tensor& host, const WatermarkAsset& asset, const Placement& p) {
  const Shape s = host.shape();
  if (s.n != 1 || s.c != 3)
    throw std::invalid_argument("composite: host must be 1x3xHxW, got " + s.str());
  detail::BlendCoeffs bc = detail::blend_coefficients(s, asset, p);
  CompositeResult out;
  out.image = Tensor(s);
  for (std::int64_t i = 0; i < host.size(); ++i)
    out.image[i] = bc.scale[i] * host[i] + bc.offset[i];
  out.mask = std::move(bc.mask);
  return out;
}

// Same blend recorded on a tape, so the compositing can be differentiated.
inline Var composite_on_tape(Tape& tape, Var host, const WatermarkAsset& asset, const Placement& p) {
  const Shape s = tape.value(host).shape();
  detail::BlendCoeffs bc = detail::blend_coefficients(s, asset, p);
  return tape.affine(host, std::move(bc.scale), std::move(bc.offset));
}

// Uniformly random square placement. Draw order: size, left, top, opacity.
inline Placement sample_placement(Rng& rng, int host_h, int host_w, std::pair<int, int> size_range,
                                  std::pair<float, float> alpha_range) {
  if (size_range.first < 1 || size_range.second < size_range.first)
    throw std::invalid_argument("sample_placement: bad size range");
  if (size_range.second > std::min(host_h, host_w))
    throw std::invalid_argument("sample_placement: max size exceeds host");
  Placement p;
  const int s = rng.uniform_int(size_range.first, size_range.second);
  p.width = s;
  p.height = s;
  p.left = rng.uniform_int(0, host_w - s);
  p.top = rng.uniform_int(0, host_h - s);
  p.opacity = rng.uniform(alpha_range.first, alpha_range.second);
  return p;
}

namespace detail {

inline void hsv_to_rgb(float h_deg, float s, float v, float rgb[3]) {
  const float h = std::fmod(std::fmod(h_deg, 360.0f) + 360.0f, 360.0f) / 60.0f;
  const int i = static_cast<int>(h) % 6;
  const float f = h - std::floor(h);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

// coverage from a signed distance, feathered over one pixel
inline float feather(float d) { return std::min(1.0f, std::max(0.0f, 0.5f - d)); }

// wider transition used for host shapes
inline float feather_soft(float d) { return std::min(1.0f, std::max(0.0f, 0.5f - d / 2.0f)); }

}  // namespace detail

// Procedural stand-in for a photo corpus: a two-color linear gradient overlaid
// with 3-8 anti-aliased rectangles/ellipses of random color.
inline Tensor synth_host(Rng& rng, int h, int w) {
  Tensor img(Shape{1, 3, h, w});
  float c0[3], c1[3];
  for (float& v : c0) v = rng.uniform(0.08f, 0.92f);
  for (float& v : c1) v = rng.uniform(0.08f, 0.92f);
  const float ang = rng.uniform(0.0f, 3.14159265f);
  const float dx = std::cos(ang), dy = std::sin(ang);
  const float t00 = 0.0f, t10 = dx * (w - 1), t01 = dy * (h - 1), t11 = dx * (w - 1) + dy * (h - 1);
  const float tmin = std::min({t00, t10, t01, t11});
  const float tmax = std::max({t00, t10, t01, t11});
  const float span = std::max(1e-6f, tmax - tmin);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float t = (dx * x + dy * y - tmin) / span;
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = (1.0f - t) * c0[c] + t * c1[c];
    }

  const int shapes = rng.uniform_int(3, 8);
  for (int si = 0; si < shapes; ++si) {
    const bool ellipse = rng.coin();
    float col[3];
    for (float& v : col) v = rng.uniform(0.08f, 0.92f);
    const float cx = rng.uniform(0.0f, static_cast<float>(w - 1));
    const float cy = rng.uniform(0.0f, static_cast<float>(h - 1));
    const float rx = rng.uniform(w / 16.0f, w / 3.0f);
    const float ry = rng.uniform(h / 16.0f, h / 3.0f);
    const int x0 = std::max(0, static_cast<int>(cx - rx - 2.0f));
    const int x1 = std::min(w - 1, static_cast<int>(cx + rx + 2.0f));
    const int y0 = std::max(0, static_cast<int>(cy - ry - 2.0f));
    const int y1 = std::min(h - 1, static_cast<int>(cy + ry + 2.0f));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float px = x - cx, py = y - cy;
        float d;
        if (ellipse) {
          const float e = std::sqrt((px / rx) * (px / rx) + (py / ry) * (py / ry));
          d = (e - 1.0f) * std::min(rx, ry);
        } else {
          d = std::max(std::fabs(px) - rx, std::fabs(py) - ry);
        }
        const float cov = detail::feather_soft(d);
        if (cov <= 0.0f) continue;
        for (int c = 0; c < 3; ++c) {
          float& v = img.at(0, c, y, x);
          v = (1.0f - cov) * v + cov * col[c];
        }
      }
  }
  return img;
}

// Procedural glyph-like watermark: 2-6 strokes/filled quads/rings in one
// saturated color, alpha 1 on the marks and feathered over one pixel.
inline WatermarkAsset synth_watermark(Rng& rng, int h, int w) {
  WatermarkAsset asset;
  asset.color = Tensor(Shape{1, 3, h, w});
  asset.alpha = Tensor(Shape{1, 1, h, w}, 0.0f);

  float col[3];
  detail::hsv_to_rgb(rng.uniform(0.0f, 360.0f), rng.uniform(0.8f, 1.0f), rng.uniform(0.8f, 1.0f), col);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) asset.color.at(0, c, y, x) = col[c];

  const int glyphs = rng.uniform_int(2, 6);
  const int gcols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(glyphs))));
  const int grows = (glyphs + gcols - 1) / gcols;
  const float cw = static_cast<float>(w) / gcols;
  const float ch = static_cast<float>(h) / grows;

  auto draw_stroke = [&](float lo_x, float hi_x, float lo_y, float hi_y, float cell_min, int px0,
                         int px1, int py0, int py1) {
    // endpoints kept apart so strokes never collapse to dots
    const float ax = rng.uniform(lo_x, hi_x), ay = rng.uniform(lo_y, hi_y);
    const float ang = rng.uniform(0.0f, 6.2831853f);
    const float len = rng.uniform(0.55f, 0.95f) * cell_min;
    const float bx = std::min(hi_x, std::max(lo_x, ax + len * std::cos(ang)));
    const float by = std::min(hi_y, std::max(lo_y, ay + len * std::sin(ang)));
    const float half = rng.uniform(0.10f, 0.17f) * cell_min;
    for (int y = py0; y <= py1; ++y)
      for (int x = px0; x <= px1; ++x) {
        const float vx = bx - ax, vy = by - ay;
        const float len2 = std::max(1e-6f, vx * vx + vy * vy);
        float t = ((x - ax) * vx + (y - ay) * vy) / len2;
        t = std::min(1.0f, std::max(0.0f, t));
        const float ddx = x - (ax + t * vx), ddy = y - (ay + t * vy);
        const float d = std::sqrt(ddx * ddx + ddy * ddy) - half;
        float& a = asset.alpha.at(0, 0, y, x);
        a = std::max(a, detail::feather(d));
      }
  };

  for (int gi = 0; gi < glyphs; ++gi) {
    const float gx = (gi % gcols) * cw;
    const float gy = (gi / gcols) * ch;
    const float margin = 0.18f * std::min(cw, ch);
    const float lo_x = gx + margin, hi_x = gx + cw - margin;
    const float lo_y = gy + margin, hi_y = gy + ch - margin;
    const int kind = rng.uniform_int(0, 2);

    const int px0 = std::max(0, static_cast<int>(gx));
    const int px1 = std::min(w - 1, static_cast<int>(gx + cw));
    const int py0 = std::max(0, static_cast<int>(gy));
    const int py1 = std::min(h - 1, static_cast<int>(gy + ch));

    if (kind == 0) {
      draw_stroke(lo_x, hi_x, lo_y, hi_y, std::min(cw, ch), px0, px1, py0, py1);
    } else if (kind == 1) {
      // filled rotated quad
      const float ccx = 0.5f * (lo_x + hi_x) + rng.uniform(-0.1f, 0.1f) * cw;
      const float ccy = 0.5f * (lo_y + hi_y) + rng.uniform(-0.1f, 0.1f) * ch;
      const float rx = rng.uniform(0.18f, 0.32f) * cw;
      const float ry = rng.uniform(0.18f, 0.32f) * ch;
      const float theta = rng.uniform(0.0f, 3.14159265f);
      const float ct = std::cos(theta), st = std::sin(theta);
      for (int y = py0; y <= py1; ++y)
        for (int x = px0; x <= px1; ++x) {
          const float ddx = x - ccx, ddy = y - ccy;
          const float u = ct * ddx + st * ddy;
          const float v = -st * ddx + ct * ddy;
          const float d = std::max(std::fabs(u) - rx, std::fabs(v) - ry);
          float& a = asset.alpha.at(0, 0, y, x);
          a = std::max(a, detail::feather(d));
        }
    } else {
      // ring
      const float ccx = 0.5f * (lo_x + hi_x);
      const float ccy = 0.5f * (lo_y + hi_y);
      const float r = rng.uniform(0.22f, 0.34f) * std::min(cw, ch);
      const float half = rng.uniform(0.08f, 0.14f) * std::min(cw, ch);
      for (int y = py0; y <= py1; ++y)
        for (int x = px0; x <= px1; ++x) {
          const float ddx = x - ccx, ddy = y - ccy;
          const float d = std::fabs(std::sqrt(ddx * ddx + ddy * ddy) - r) - half;
          float& a = asset.alpha.at(0, 0, y, x);
          a = std::max(a, detail::feather(d));
        }
    }
  }

  // top up unusually sparse draws so coverage stays in a usable band
  auto covered_fraction = [&] {
    std::int64_t covered = 0;
    for (std::int64_t i = 0; i < asset.alpha.size(); ++i)
      if (asset.alpha[i] > 0.5f) ++covered;
    return static_cast<double>(covered) / static_cast<double>(asset.alpha.size());
  };
  for (int attempt = 0; attempt < 8 && covered_fraction() < 0.08; ++attempt) {
    const float margin = 0.18f * std::min(cw, ch);
    const int cell = rng.uniform_int(0, glyphs - 1);
    const float gx = (cell % gcols) * cw;
    const float gy = (cell / gcols) * ch;
    draw_stroke(gx + margin, gx + cw - margin, gy + margin, gy + ch - margin, std::min(cw, ch),
                std::max(0, static_cast<int>(gx)), std::min(w - 1, static_cast<int>(gx + cw)),
                std::max(0, static_cast<int>(gy)), std::min(h - 1, static_cast<int>(gy + ch)));
  }
  return asset;
}

// RGBA PNG in, asset out; the PNG alpha channel is the blending alpha.
inline WatermarkAsset load_watermark_asset(const std::string& path) {
  LoadedImage img = load_png(path);
  if (!img.alpha)
    throw std::runtime_error("load_watermark_asset: " + path + " has no alpha channel (RGBA required)");
  WatermarkAsset asset;
  asset.color = std::move(img.rgb);
  asset.alpha = std::move(*img.alpha);
  return asset;
}

}  // namespace wmvac
