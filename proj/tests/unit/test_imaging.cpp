#include <catch2/catch_amalgamated.hpp>

#include <png.h>

#include <cstdio>
#include <filesystem>

#include "support/test_util.hpp"
#include "wmvac/imaging.hpp"

using namespace wmvac;
using wmvac::test::bit_equal;
using wmvac::test::random_tensor;

namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "wmvac_imaging_tests";
  fs::create_directories(dir);
  return dir / name;
}

// a 2x2 16-bit grayscale PNG, which the loader must reject
void write_16bit_png(const fs::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  REQUIRE(fp != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  REQUIRE(setjmp(png_jmpbuf(png)) == 0);
  png_init_io(png, fp);
  png_set_IHDR(png, info, 2, 2, 16, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_byte row[12] = {0};
  png_write_row(png, row);
  png_write_row(png, row);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

TEST_CASE("single white pixel roundtrip") {
  const fs::path path = temp_file("white.png");
  Tensor white(Shape{1, 3, 1, 1}, 1.0f);
  save_png(white, path.string());
  const LoadedImage img = load_png(path.string());
  REQUIRE(img.rgb.shape() == Shape{1, 3, 1, 1});
  REQUIRE_FALSE(img.alpha.has_value());
  for (int c = 0; c < 3; ++c) REQUIRE(img.rgb[c] == 1.0f);
}

TEST_CASE("mid-gray decodes as 128/255") {
  const fs::path path = temp_file("gray.png");
  Tensor gray(Shape{1, 3, 1, 1}, 128.0f / 255.0f);
  save_png(gray, path.string());
  const LoadedImage img = load_png(path.string());
  REQUIRE_THAT(img.rgb[0], Catch::Matchers::WithinAbs(128.0 / 255.0, 1e-7));
}

TEST_CASE("black and white extremes") {
  const fs::path black_path = temp_file("black.png");
  save_png(Tensor(Shape{1, 3, 2, 2}, 0.0f), black_path.string());
  const LoadedImage black = load_png(black_path.string());
  for (std::int64_t i = 0; i < black.rgb.size(); ++i) REQUIRE(black.rgb[i] == 0.0f);

  const fs::path white_path = temp_file("white2.png");
  save_png(Tensor(Shape{1, 3, 2, 2}, 1.0f), white_path.string());
  const LoadedImage white = load_png(white_path.string());
  for (std::int64_t i = 0; i < white.rgb.size(); ++i) REQUIRE(white.rgb[i] == 1.0f);
}

TEST_CASE("save/load is the identity on the byte grid") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Tensor img = quantize_to_byte_grid(random_tensor(Shape{1, 3, 13, 17}, seed));
    const fs::path path = temp_file("roundtrip.png");
    save_png(img, path.string());
    const LoadedImage back = load_png(path.string());
    REQUIRE(bit_equal(back.rgb, img));
  }
}

TEST_CASE("rgba roundtrip keeps the alpha plane") {
  Tensor rgb = quantize_to_byte_grid(random_tensor(Shape{1, 3, 6, 5}, 9));
  Tensor alpha = quantize_to_byte_grid(random_tensor(Shape{1, 1, 6, 5}, 10));
  const fs::path path = temp_file("rgba.png");
  save_png_rgba(rgb, alpha, path.string());
  const LoadedImage back = load_png(path.string());
  REQUIRE(back.alpha.has_value());
  REQUIRE(bit_equal(back.rgb, rgb));
  REQUIRE(bit_equal(*back.alpha, alpha));
}

TEST_CASE("loader failure modes") {
  REQUIRE_THROWS_WITH(load_png("/nonexistent/path/img.png"),
                      Catch::Matchers::ContainsSubstring("cannot open"));

  const fs::path not_png = temp_file("not_png.bin");
  {
    std::FILE* fp = std::fopen(not_png.string().c_str(), "wb");
    std::fputs("definitely not a png", fp);
    std::fclose(fp);
  }
  REQUIRE_THROWS_WITH(load_png(not_png.string()), Catch::Matchers::ContainsSubstring("not a PNG"));

  const fs::path deep = temp_file("deep16.png");
  write_16bit_png(deep);
  REQUIRE_THROWS_WITH(load_png(deep.string()), Catch::Matchers::ContainsSubstring("bit depth"));

  REQUIRE_THROWS_WITH(save_png(Tensor(Shape{1, 3, 2, 2}), "/nonexistent/dir/out.png"),
                      Catch::Matchers::ContainsSubstring("cannot write"));
}

TEST_CASE("uniform noise contract") {
  REQUIRE_THROWS_AS(uniform_noise(Shape{1, 3, 4, 4}, -0.5f, 1), std::invalid_argument);

  Tensor zero = uniform_noise(Shape{1, 3, 8, 8}, 0.0f, 5);
  for (std::int64_t i = 0; i < zero.size(); ++i) REQUIRE(zero[i] == 0.0f);

  const float eps = 8.0f / 255.0f;
  Tensor n1 = uniform_noise(Shape{1, 3, 32, 32}, eps, 77);
  Tensor n2 = uniform_noise(Shape{1, 3, 32, 32}, eps, 77);
  REQUIRE(bit_equal(n1, n2));
  REQUIRE(max_abs(n1) <= eps);

  // sample mean of 10^6 draws stays within 3 standard errors of zero
  Tensor big = uniform_noise(Shape{1, 1, 1000, 1000}, eps, 123);
  double mean = 0.0;
  for (std::int64_t i = 0; i < big.size(); ++i) mean += big[i];
  mean /= static_cast<double>(big.size());
  const double sigma_mean = eps / std::sqrt(3.0) / 1000.0;
  REQUIRE(std::fabs(mean) < 3.0 * sigma_mean);
}
