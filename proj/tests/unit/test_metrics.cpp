#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "support/test_util.hpp"
#include "wmvac/metrics.hpp"

using namespace wmvac;
using wmvac::test::random_tensor;

namespace {

// brute-force SSIM: explicit 11x11 Gaussian window per valid position
double ssim_reference(const Tensor& a, const Tensor& b) {
  const Shape s = a.shape();
  double w[11][11];
  double wsum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const double dy = i - 5, dx = j - 5;
      w[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      wsum += w[i][j];
    }
  for (auto& row : w)
    for (double& v : row) v /= wsum;

  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (int c = 0; c < s.c; ++c) {
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + 11 <= s.h; ++y)
      for (int x = 0; x + 11 <= s.w; ++x) {
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double va = a.at(0, c, y + i, x + j), vb = b.at(0, c, y + i, x + j);
            ma += w[i][j] * va;
            mb += w[i][j] * vb;
            maa += w[i][j] * va * va;
            mbb += w[i][j] * vb * vb;
            mab += w[i][j] * va * vb;
          }
        const double var_a = maa - ma * ma, var_b = mbb - mb * mb, cov = mab - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
    total += acc / count;
  }
  return total / s.c;
}

}  // namespace

TEST_CASE("psnr of a uniform 0.1 difference is 20 dB") {
  Tensor a(Shape{1, 3, 8, 8}, 0.4f);
  Tensor b(Shape{1, 3, 8, 8}, 0.5f);
  REQUIRE_THAT(psnr(a, b), Catch::Matchers::WithinAbs(20.0, 1e-5));
}

TEST_CASE("identical images give the +infinity sentinel") {
  Tensor a = random_tensor(Shape{1, 3, 8, 8}, 1);
  REQUIRE(psnr(a, a) == std::numeric_limits<double>::infinity());
}

TEST_CASE("psnr matches the 0-255 scale computation") {
  Tensor a = random_tensor(Shape{1, 3, 12, 12}, 2);
  Tensor b = random_tensor(Shape{1, 3, 12, 12}, 3);
  double mse255 = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = 255.0 * (static_cast<double>(a[i]) - b[i]);
    mse255 += d * d;
  }
  mse255 /= static_cast<double>(a.size());
  REQUIRE_THAT(psnr(a, b), Catch::Matchers::WithinAbs(10.0 * std::log10(255.0 * 255.0 / mse255), 1e-9));
}

TEST_CASE("rmse basics and the psnr identity") {
  Tensor a = random_tensor(Shape{1, 3, 10, 10}, 4);
  REQUIRE(rmse(a, a) == 0.0);
  Tensor b = a;
  for (std::int64_t i = 0; i < b.size(); ++i) b[i] += 0.1f;
  REQUIRE_THAT(rmse(a, b), Catch::Matchers::WithinAbs(25.5, 1e-4));

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tensor x = random_tensor(Shape{1, 3, 6, 6}, 100 + seed);
    Tensor y = random_tensor(Shape{1, 3, 6, 6}, 200 + seed);
    const double r = rmse(x, y);
    REQUIRE_THAT(psnr(x, y), Catch::Matchers::WithinAbs(20.0 * std::log10(255.0 / r), 1e-9));
  }
}

TEST_CASE("ssim of an image with itself is 1") {
  Tensor a = random_tensor(Shape{1, 3, 16, 16}, 5);
  REQUIRE_THAT(ssim(a, a), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("ssim constant-image closed form") {
  Tensor a(Shape{1, 3, 16, 16}, 0.0f);
  Tensor b(Shape{1, 3, 16, 16}, 1.0f);
  const double c1 = 1e-4;
  REQUIRE_THAT(ssim(a, b), Catch::Matchers::WithinRel(c1 / (1.0 + c1), 1e-9));
}

TEST_CASE("ssim matches the brute-force window oracle") {
  Tensor a = random_tensor(Shape{1, 3, 32, 32}, 6);
  Tensor b = random_tensor(Shape{1, 3, 32, 32}, 7);
  REQUIRE_THAT(ssim(a, b), Catch::Matchers::WithinAbs(ssim_reference(a, b), 1e-6));
}

TEST_CASE("ssim is symmetric and rejects tiny images") {
  Tensor a = random_tensor(Shape{1, 3, 14, 14}, 8);
  Tensor b = random_tensor(Shape{1, 3, 14, 14}, 9);
  REQUIRE(ssim(a, b) == ssim(b, a));
  REQUIRE(ssim(a, b) <= 1.0);
  Tensor small_a(Shape{1, 3, 10, 12}, 0.1f);
  Tensor small_b(Shape{1, 3, 10, 12}, 0.2f);
  REQUIRE_THROWS_AS(ssim(small_a, small_b), std::invalid_argument);
}

TEST_CASE("rmse_w reductions") {
  Tensor a = random_tensor(Shape{1, 3, 8, 8}, 10);
  Tensor b = random_tensor(Shape{1, 3, 8, 8}, 11);

  Tensor full(Shape{1, 1, 8, 8}, 1.0f);
  REQUIRE_THAT(*rmse_w(a, b, full), Catch::Matchers::WithinAbs(rmse(a, b), 1e-12));

  // differences only outside the mask score zero
  Tensor half(Shape{1, 1, 8, 8}, 0.0f);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) half.at(0, 0, y, x) = 1.0f;
  Tensor c = a;
  for (int c3 = 0; c3 < 3; ++c3)
    for (int y = 4; y < 8; ++y)
      for (int x = 0; x < 8; ++x) c.at(0, c3, y, x) += 0.3f;
  REQUIRE(*rmse_w(a, c, half) == 0.0);

  // in-mask uniform difference d scores 255*d
  Tensor d = a;
  for (int c3 = 0; c3 < 3; ++c3)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 8; ++x) d.at(0, c3, y, x) += 0.2f;
  REQUIRE_THAT(*rmse_w(a, d, half), Catch::Matchers::WithinAbs(255.0 * 0.2, 1e-4));

  Tensor empty(Shape{1, 1, 8, 8}, 0.0f);
  REQUIRE_FALSE(rmse_w(a, b, empty).has_value());

  Tensor wrong(Shape{1, 1, 4, 4}, 1.0f);
  REQUIRE_THROWS_AS(rmse_w(a, b, wrong), std::invalid_argument);
}

TEST_CASE("pair metrics bundle") {
  Tensor a = random_tensor(Shape{1, 3, 16, 16}, 12);
  Tensor b = random_tensor(Shape{1, 3, 16, 16}, 13);
  Tensor mask(Shape{1, 1, 16, 16}, 1.0f);
  PairMetrics m = compute_pair_metrics(a, b, &mask);
  REQUIRE(m.psnr == psnr(a, b));
  REQUIRE(m.ssim == ssim(a, b));
  REQUIRE(m.rmse == rmse(a, b));
  REQUIRE(m.rmse_w.has_value());
  PairMetrics no_mask = compute_pair_metrics(a, b, nullptr);
  REQUIRE_FALSE(no_mask.rmse_w.has_value());
}
