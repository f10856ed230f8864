// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace synthaug {

struct ImageSpec {
  int width = 0;
  int height = 0;
  int channels = 3;

  void validate() const;
  std::string to_string() const;  // "WxHxC"
  bool operator==(const ImageSpec&) const = default;
};

/// 8-bit interleaved RGB raster, row-major, HWC.
class Image {
 public:
  Image() = default;
  Image(int width, int height, std::uint8_t fill = 0);
  Image(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  static constexpr int channels() { return 3; }
  ImageSpec spec() const { return {width_, height_, 3}; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  std::uint8_t at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<const std::uint8_t> bytes() const { return pixels_; }
  std::span<std::uint8_t> bytes() { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Binary PPM (P6, maxval 255). Encoding is byte-deterministic.
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image decode_ppm(std::span<const std::uint8_t> data);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Dispatches on extension: .ppm or .png.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

/// Writes via a temporary file in the same directory and rename(2).
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_file_atomic(const std::filesystem::path& path, const std::string& data);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace synthaug
