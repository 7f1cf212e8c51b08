#ifndef ASSIST_CORE_IMAGE_HPP_
#define ASSIST_CORE_IMAGE_HPP_

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "assist/core/error.hpp"

namespace assist {

// 8-bit RGB raster, row-major, channels interleaved.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {
    require(w > 0 && h > 0, "image dimensions must be positive");
  }

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  RgbImage crop(int x0, int y0, int w, int h) const {
    require(x0 >= 0 && y0 >= 0 && x0 + w <= width && y0 + h <= height, "crop out of bounds");
    RgbImage out(w, h);
    for (int y = 0; y < h; ++y) {
      const auto* src = &pixels[(static_cast<std::size_t>(y0 + y) * width + x0) * 3];
      std::copy(src, src + static_cast<std::size_t>(w) * 3,
                &out.pixels[static_cast<std::size_t>(y) * w * 3]);
    }
    return out;
  }

  bool operator==(const RgbImage&) const = default;
};

class ImageTooLarge : public FormatError {
 public:
  using FormatError::FormatError;
};

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw FormatError(std::string("png encode: ") + desc.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw FormatError(std::string("png encode: ") + desc.message);
  out.resize(size);
  return out;
}

// Decodes any PNG (gray, palette, alpha) to 8-bit RGB. max_pixels bounds the
// allocation for untrusted input; a zero limit disables the check.
inline RgbImage decode_png(std::span<const std::uint8_t> bytes, std::size_t max_pixels = 0) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size()))
    throw FormatError(std::string("png decode: ") + desc.message);
  if (max_pixels != 0 && static_cast<std::size_t>(desc.width) * desc.height > max_pixels) {
    png_image_free(&desc);
    throw ImageTooLarge("png decode: image exceeds pixel limit");
  }
  desc.format = PNG_FORMAT_RGB;
  RgbImage img(static_cast<int>(desc.width), static_cast<int>(desc.height));
  if (!png_image_finish_read(&desc, nullptr, img.pixels.data(), 0, nullptr))
    throw FormatError(std::string("png decode: ") + desc.message);
  return img;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

inline RgbImage load_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }
inline void save_png(const std::filesystem::path& path, const RgbImage& img) {
  write_file(path, encode_png(img));
}

// Bilinear resample with corner-aligned sampling grid.
inline RgbImage resize_bilinear(const RgbImage& src, int width, int height) {
  require(width > 0 && height > 0, "resize target must be positive");
  if (src.width == width && src.height == height) return src;
  RgbImage out(width, height);
  const double sx = width > 1 ? double(src.width - 1) / (width - 1) : 0.0;
  const double sy = height > 1 ? double(src.height - 1) / (height - 1) : 0.0;
  for (int y = 0; y < height; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0, c) * (1 - tx) + src.at(x1, y0, c) * tx;
        const double bot = src.at(x0, y1, c) * (1 - tx) + src.at(x1, y1, c) * tx;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top * (1 - ty) + bot * ty));
      }
    }
  }
  return out;
}

}  // namespace assist

#endif  // ASSIST_CORE_IMAGE_HPP_
