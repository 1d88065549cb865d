#include "geoadapt/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace geoadapt {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const char* what) {
  throw std::runtime_error(std::string(what) + ": " + path.string());
}

void write_png(const std::filesystem::path& path, int h, int w, int color_type,
               int channels, const std::vector<std::uint8_t>& bytes) {
  if (h <= 0 || w <= 0 || bytes.size() != static_cast<std::size_t>(h) * w * channels)
    throw std::invalid_argument("write_png: bad dimensions");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "png write error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int want_channels,
                                   int* out_h, int* out_w) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail(path, "cannot open for reading");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "png read error");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_packing(png);
  png_set_strip_alpha(png);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (want_channels == 3 && (color_type == PNG_COLOR_TYPE_GRAY ||
                             color_type == PNG_COLOR_TYPE_GRAY_ALPHA))
    png_set_gray_to_rgb(png);
  if (want_channels == 1 && (color_type == PNG_COLOR_TYPE_RGB ||
                             color_type == PNG_COLOR_TYPE_RGB_ALPHA ||
                             color_type == PNG_COLOR_TYPE_PALETTE))
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  if (static_cast<int>(png_get_channels(png, info)) != want_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "unexpected png channel count");
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h) * w * want_channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[y] = bytes.data() + static_cast<std::size_t>(y) * w * want_channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *out_h = h;
  *out_w = w;
  return bytes;
}

}  // namespace

std::vector<std::uint8_t> quantize_rgb8(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw std::invalid_argument("quantize_rgb8: expected [H,W,3], got " + image.shape_str());
  std::vector<std::uint8_t> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    double v = image[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Tensor dequantize_rgb8(const std::vector<std::uint8_t>& bytes, int h, int w) {
  if (bytes.size() != static_cast<std::size_t>(h) * w * 3)
    throw std::invalid_argument("dequantize_rgb8: byte count mismatch");
  Tensor t({h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) t[i] = bytes[i] / 255.0;
  return t;
}

void write_png_rgb8(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& rgb) {
  write_png(path, h, w, PNG_COLOR_TYPE_RGB, 3, rgb);
}

void write_png_gray8(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& gray) {
  write_png(path, h, w, PNG_COLOR_TYPE_GRAY, 1, gray);
}

std::vector<std::uint8_t> read_png_rgb8(const std::filesystem::path& path, int* h, int* w) {
  return read_png(path, 3, h, w);
}

std::vector<std::uint8_t> read_png_gray8(const std::filesystem::path& path, int* h, int* w) {
  return read_png(path, 1, h, w);
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (image.rank() != 3) throw std::invalid_argument("gaussian_blur: expected [H,W,C]");
  if (sigma <= 0.0) return image;
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };

  Tensor tmp({h, w, c}), out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * image.at(y, reflect(x + i, w), ch);
        tmp.at(y, x, ch) = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp.at(reflect(y + i, h), x, ch);
        out.at(y, x, ch) = acc;
      }
  return out;
}

}  // namespace geoadapt
