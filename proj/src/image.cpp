// SPDX-License-Identifier: Apache-2.0

#include "synthaug/image.hpp"

#include <png.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <iterator>
#include <memory>

#include <fmt/core.h>

#include "synthaug/common.hpp"

namespace synthaug {

void ImageSpec::validate() const {
  if (width < 1 || height < 1) {
    throw InputError(fmt::format("image spec {}x{} must be at least 1x1", width, height));
  }
  if (channels != 3) throw InputError(fmt::format("image spec needs 3 channels, got {}", channels));
}

std::string ImageSpec::to_string() const { return fmt::format("{}x{}x{}", width, height, channels); }

Image::Image(int width, int height, std::uint8_t fill)
    : width_(width), height_(height),
      pixels_(static_cast<std::size_t>(width) * height * 3, fill) {}

Image::Image(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (pixels_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw InputError(fmt::format("pixel buffer of {} bytes does not match {}x{}x3",
                                 pixels_.size(), width, height));
  }
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header = fmt::format("P6\n{} {}\n255\n", image.width(), image.height());
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.bytes().begin(), image.bytes().end());
  return out;
}

Image decode_ppm(std::span<const std::uint8_t> data) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(data[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    long v = 0;
    std::size_t start = pos;
    while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') {
      v = v * 10 + (data[pos] - '0');
      if (v > 1 << 20) throw InputError("ppm: dimension too large");
      ++pos;
    }
    if (pos == start) throw InputError("ppm: malformed header");
    return static_cast<int>(v);
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '6') throw InputError("ppm: not a P6 file");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw InputError("ppm: only maxval 255 is supported");
  ++pos;  // single whitespace before raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (data.size() < pos + need) throw InputError("ppm: truncated raster");
  return Image(w, h, std::vector<std::uint8_t>(data.begin() + pos, data.begin() + pos + need));
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.bytes().data(), 0, nullptr)) {
    throw std::runtime_error(fmt::format("png: cannot encode '{}': {}", path.string(), img.message));
  }
  std::vector<std::uint8_t> buf(size);
  if (!png_image_write_to_memory(&img, buf.data(), &size, 0, image.bytes().data(), 0, nullptr)) {
    throw std::runtime_error(fmt::format("png: cannot encode '{}': {}", path.string(), img.message));
  }
  buf.resize(size);
  write_file_atomic(path, buf);
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw InputError(fmt::format("cannot read png '{}': {}", path.string(), img.message));
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw InputError(fmt::format("cannot decode png '{}': {}", path.string(), img.message));
  }
  return Image(static_cast<int>(img.width), static_cast<int>(img.height), std::move(buf));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path.string()));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

Image read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return decode_ppm(read_file_bytes(path));
  throw InputError(fmt::format("unsupported image format '{}'", path.string()));
}

void write_image(const std::filesystem::path& path, const Image& image) {
  const auto ext = path.extension().string();
  if (ext == ".png") {
    write_png(path, image);
  } else if (ext == ".ppm") {
    write_file_atomic(path, encode_ppm(image));
  } else {
    throw InputError(fmt::format("unsupported image format '{}'", path.string()));
  }
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  static std::atomic<unsigned> counter{0};
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  // "<name>.tmp.<pid>.<n>"; the pid lets a later run spot orphans.
  const auto tmp = path.parent_path() /
                   fmt::format("{}.tmp.{}.{}", path.filename().string(), ::getpid(), counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw InputError(fmt::format("short write to '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

}  // namespace synthaug
