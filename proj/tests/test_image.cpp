#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "geoadapt/image.hpp"
#include "geoadapt/rng.hpp"
#include "geoadapt/tensor.hpp"

using namespace geoadapt;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "geoadapt_image_test";
  fs::create_directories(dir);
  return dir;
}
}  // namespace

TEST_CASE("quantize/dequantize round-trips exact 8-bit levels") {
  auto img = Tensor::zeros({2, 2, 3});
  Rng rng(1);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = static_cast<double>(rng.uniform_int(std::uint64_t{256})) / 255.0;
  }
  auto bytes = quantize_rgb8(img);
  auto back = dequantize_rgb8(bytes, 2, 2);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("quantize clips out-of-range values") {
  auto img = Tensor::zeros({1, 2, 3});
  img[0] = -0.5;
  img[3] = 1.5;
  auto bytes = quantize_rgb8(img);
  CHECK(bytes[0] == 0);
  CHECK(bytes[3] == 255);
}

TEST_CASE("png rgb8 write/read round trip") {
  auto path = temp_dir() / "rt.png";
  std::vector<std::uint8_t> pixels(4 * 5 * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i * 7);
  write_png_rgb8(path, 4, 5, pixels);
  int h = 0, w = 0;
  auto back = read_png_rgb8(path, &h, &w);
  CHECK(h == 4);
  CHECK(w == 5);
  CHECK(back == pixels);
}

TEST_CASE("png gray8 write/read round trip") {
  auto path = temp_dir() / "rt_gray.png";
  std::vector<std::uint8_t> pixels(6 * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(255 - i);
  write_png_gray8(path, 6, 3, pixels);
  int h = 0, w = 0;
  auto back = read_png_gray8(path, &h, &w);
  CHECK(h == 6);
  CHECK(w == 3);
  CHECK(back == pixels);
}

TEST_CASE("gaussian blur: sigma 0 is identity, constants are fixed points") {
  auto img = Tensor::zeros({4, 4, 3});
  Rng rng(2);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();

  auto same = gaussian_blur(img, 0.0);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(same[i] == img[i]);

  auto flat = Tensor::full({5, 5, 3}, 0.37);
  auto blurred = gaussian_blur(flat, 1.3);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    CHECK(blurred[i] == doctest::Approx(0.37).epsilon(1e-9));
  }
}

TEST_CASE("gaussian blur smooths a delta without creating mass") {
  auto img = Tensor::zeros({9, 9, 1});
  img.at(4, 4, 0) = 1.0;
  auto blurred = gaussian_blur(img, 1.0);
  CHECK(blurred.at(4, 4, 0) < 1.0);
  CHECK(blurred.at(4, 4, 0) > blurred.at(3, 4, 0));
  CHECK(blurred.at(3, 4, 0) > 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < blurred.size(); ++i) total += blurred[i];
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));  // kernel mass stays inside
}
