#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geoadapt/tensor.hpp"

namespace geoadapt {

/// Per-pixel class-index mask, 8-bit. Class index == stored pixel value.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}

  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return v.size(); }
  bool operator==(const Mask& o) const { return h == o.h && w == o.w && v == o.v; }
};

/// Quantize a [H,W,3] float image in [0,1] to interleaved RGB8.
std::vector<std::uint8_t> quantize_rgb8(const Tensor& image);
/// Inverse of quantize_rgb8 (value / 255).
Tensor dequantize_rgb8(const std::vector<std::uint8_t>& bytes, int h, int w);

void write_png_rgb8(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& rgb);
void write_png_gray8(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& gray);
std::vector<std::uint8_t> read_png_rgb8(const std::filesystem::path& path, int* h, int* w);
std::vector<std::uint8_t> read_png_gray8(const std::filesystem::path& path, int* h, int* w);

/// Separable Gaussian blur with reflected borders; radius ceil(3*sigma).
/// sigma <= 0 is the identity.
Tensor gaussian_blur(const Tensor& image, double sigma);

}  // namespace geoadapt
