// SPDX-License-Identifier: Apache-2.0
//
// Minimal raster line chart: axes, gridlines, tick labels in a 3x5 bitmap
// font, one colour per series.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "synthaug/pipeline.hpp"

namespace synthaug::pipeline {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr Rgb kInk{40, 40, 40};
constexpr Rgb kGrid{225, 225, 225};
constexpr std::array<Rgb, 4> kPalette{{{31, 119, 180}, {255, 127, 14}, {90, 90, 90}, {44, 160, 44}}};

// 3x5 glyphs, one row per 3-bit value, top to bottom.
std::array<std::uint8_t, 5> glyph(char ch) {
  switch (ch) {
    case '0': return {7, 5, 5, 5, 7};
    case '1': return {2, 6, 2, 2, 7};
    case '2': return {7, 1, 7, 4, 7};
    case '3': return {7, 1, 7, 1, 7};
    case '4': return {5, 5, 7, 1, 1};
    case '5': return {7, 4, 7, 1, 7};
    case '6': return {7, 4, 7, 5, 7};
    case '7': return {7, 1, 1, 1, 1};
    case '8': return {7, 5, 7, 5, 7};
    case '9': return {7, 5, 7, 1, 7};
    case '.': return {0, 0, 0, 0, 2};
    case '%': return {5, 1, 2, 4, 5};
    case 'x': return {0, 5, 2, 5, 0};
    default: return {0, 0, 0, 0, 0};
  }
}

class Canvas {
 public:
  Canvas(int w, int h) : img_(w, h, 255) {}

  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img_.width() || y >= img_.height()) return;
    for (int k = 0; k < 3; ++k) img_.at(y, x, k) = c[k];
  }

  void dot(int x, int y, const Rgb& c, int r) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) set(x + dx, y + dy, c);
  }

  // Bresenham; dashed lines skip alternate runs of 6 pixels.
  void line(int x0, int y0, int x1, int y1, const Rgb& c, bool dashed = false, int thick = 0) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy, step = 0;
    for (;;) {
      if (!dashed || (step / 6) % 2 == 0) dot(x0, y0, c, thick);
      ++step;
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }

  void text(int x, int y, const std::string& s, const Rgb& c, int scale = 2) {
    for (char ch : s) {
      const auto g = glyph(ch);
      for (int row = 0; row < 5; ++row)
        for (int col = 0; col < 3; ++col)
          if (g[row] & (4 >> col))
            for (int a = 0; a < scale; ++a)
              for (int b = 0; b < scale; ++b) set(x + col * scale + a, y + row * scale + b, c);
      x += 4 * scale;
    }
  }

  static int text_width(const std::string& s, int scale = 2) {
    return static_cast<int>(s.size()) * 4 * scale - scale;
  }

  Image take() { return std::move(img_); }

 private:
  Image img_;
};

}  // namespace

Image render_line_plot(const std::vector<PlotSeries>& series, int width, int height) {
  if (width < 120 || height < 80) throw InputError("plot is too small");
  Canvas cv(width, height);
  const int left = 64, right = width - 16, top = 16, bottom = height - 36;

  double x_max = 0, y_lo = 1, y_hi = 0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x_max = std::max(x_max, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (x_max <= 0) x_max = 1;
  // y axis in tenths, covering the data.
  y_lo = std::max(0.0, std::floor(y_lo * 10 - 1e-9) / 10);
  y_hi = std::min(1.0, std::ceil(y_hi * 10 + 1e-9) / 10);
  if (y_hi <= y_lo) y_hi = std::min(1.0, y_lo + 0.1), y_lo = y_hi - 0.1;

  auto px = [&](double x) { return left + static_cast<int>(std::lround((right - left) * x / x_max)); };
  auto py = [&](double y) {
    return bottom - static_cast<int>(std::lround((bottom - top) * (y - y_lo) / (y_hi - y_lo)));
  };

  const int y_ticks = static_cast<int>(std::lround((y_hi - y_lo) * 10));
  for (int i = 0; i <= y_ticks; ++i) {
    const double y = y_lo + i * 0.1;
    cv.line(left, py(y), right, py(y), kGrid);
    const std::string label = fmt::format("{}%", static_cast<int>(std::lround(y * 100)));
    cv.text(left - 6 - Canvas::text_width(label), py(y) - 5, label, kInk);
  }
  std::vector<double> xs;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) xs.push_back(x);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  int last_label_end = -1000;
  for (double x : xs) {
    cv.line(px(x), bottom, px(x), bottom + 4, kInk);
    const std::string label = fmt::format("{}x", x);
    const int lx = px(x) - Canvas::text_width(label) / 2;
    if (lx > last_label_end + 4) {
      cv.text(lx, bottom + 10, label, kInk);
      last_label_end = lx + Canvas::text_width(label);
    }
  }
  cv.line(left, top, left, bottom, kInk);
  cv.line(left, bottom, right, bottom, kInk);

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const Rgb colour = kPalette[i % kPalette.size()];
    for (std::size_t k = 1; k < s.points.size(); ++k) {
      cv.line(px(s.points[k - 1].first), py(s.points[k - 1].second), px(s.points[k].first),
              py(s.points[k].second), colour, s.dashed, 1);
    }
    if (!s.dashed) {
      for (const auto& [x, y] : s.points) cv.dot(px(x), py(y), colour, 3);
    }
  }
  return cv.take();
}

}  // namespace synthaug::pipeline
