#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "wmvac/tensor.hpp"

namespace wmvac {

// Peak signal-to-noise ratio for [0,1] images. Equals the 0-255 scale value.
// Identical images return +infinity.
inline double psnr(const Tensor& a, const Tensor& b) {
  const double mse = mean_squared_error(a, b);
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// Root-mean-square distance on the 0-255 scale.
inline double rmse(const Tensor& a, const Tensor& b) {
  return 255.0 * std::sqrt(mean_squared_error(a, b));
}

// RMSE restricted to pixels where the ground-truth mask exceeds the
// threshold. Absent when the mask selects nothing.
inline std::optional<double> rmse_w(const Tensor& a, const Tensor& b, const Tensor& mask,
                                    float threshold = 0.01f) {
  const Shape s = a.shape();
  if (!a.same_shape(b)) throw std::invalid_argument("rmse_w: image shape mismatch");
  if (mask.shape().h != s.h || mask.shape().w != s.w || mask.shape().c != 1 || mask.shape().n != s.n)
    throw std::invalid_argument("rmse_w: mask shape " + mask.shape().str() + " does not match " + s.str());
  double acc = 0.0;
  std::int64_t count = 0;
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        if (mask.at(n, 0, y, x) <= threshold) continue;
        for (int c = 0; c < s.c; ++c) {
          const double d = static_cast<double>(a.at(n, c, y, x)) - b.at(n, c, y, x);
          acc += d * d;
        }
        count += s.c;
      }
  if (count == 0) return std::nullopt;
  return 255.0 * std::sqrt(acc / static_cast<double>(count));
}

namespace detail {

inline std::vector<double> gaussian_window_11() {
  constexpr double kSigma = 1.5;
  std::vector<double> g(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering with the 11-tap window. in is HxW, out is
// (H-10)x(W-10).
inline void filter_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& g,
                         std::vector<double>& out) {
  const int oh = h - 10, ow = w - 10;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += g[static_cast<std::size_t>(k)] * in[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  out.assign(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
}

}  // namespace detail

// Mean structural similarity: Gaussian 11x11 window (sigma 1.5), valid
// windows only, C1=(0.01)^2 and C2=(0.03)^2 on the unit dynamic range,
// computed per channel and averaged.
inline double ssim(const Tensor& a, const Tensor& b) {
  const Shape s = a.shape();
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (s.h < 11 || s.w < 11)
    throw std::invalid_argument("ssim: image " + s.str() + " smaller than the 11x11 window");
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const std::vector<double> g = detail::gaussian_window_11();

  const int hw = s.h * s.w;
  std::vector<double> pa(static_cast<std::size_t>(hw)), pb(pa.size()), paa(pa.size()), pbb(pa.size()),
      pab(pa.size());
  std::vector<double> mu_a, mu_b, m_aa, m_bb, m_ab;

  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * s.w + x;
          const double va = a.at(n, c, y, x), vb = b.at(n, c, y, x);
          pa[i] = va;
          pb[i] = vb;
          paa[i] = va * va;
          pbb[i] = vb * vb;
          pab[i] = va * vb;
        }
      detail::filter_valid(pa, s.h, s.w, g, mu_a);
      detail::filter_valid(pb, s.h, s.w, g, mu_b);
      detail::filter_valid(paa, s.h, s.w, g, m_aa);
      detail::filter_valid(pbb, s.h, s.w, g, m_bb);
      detail::filter_valid(pab, s.h, s.w, g, m_ab);
      double acc = 0.0;
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        // parenthesized so the value is bit-symmetric in (a, b)
        acc += ((2.0 * (ma * mb) + kC1) * (2.0 * cov + kC2)) /
               ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      }
      total += acc / static_cast<double>(mu_a.size());
    }
  }
  return total / (static_cast<double>(s.n) * s.c);
}

// The four scores for one (output, reference) pair. rmse_w present only when
// the mask selects at least one pixel.
struct PairMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
  std::optional<double> rmse_w;
};

inline PairMetrics compute_pair_metrics(const Tensor& out, const Tensor& ref, const Tensor* mask) {
  PairMetrics m;
  m.psnr = psnr(out, ref);
  m.ssim = ssim(out, ref);
  m.rmse = rmse(out, ref);
  if (mask) m.rmse_w = rmse_w(out, ref, *mask);
  return m;
}

}  // namespace wmvac
