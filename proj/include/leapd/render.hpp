// Overlay rendering: ground truth in green, detections in red with their
// scores printed in a 3x5 pixel font. Output is plain PPM.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "leapd/detector.hpp"
#include "leapd/geometry.hpp"
#include "leapd/tensor.hpp"

namespace leapd {

inline void put_pixel(Tensor& img, int x, int y, double r, double g, double b) {
  int H = static_cast<int>(img.shape[1]), W = static_cast<int>(img.shape[2]);
  if (x < 0 || y < 0 || x >= W || y >= H) return;
  img.data[(0 * static_cast<std::size_t>(H) + y) * W + x] = r;
  img.data[(1 * static_cast<std::size_t>(H) + y) * W + x] = g;
  img.data[(2 * static_cast<std::size_t>(H) + y) * W + x] = b;
}

inline void draw_box(Tensor& img, const BBox& box, double r, double g, double b) {
  int x0 = static_cast<int>(std::lround(box.x));
  int y0 = static_cast<int>(std::lround(box.y));
  int x1 = static_cast<int>(std::lround(box.x2())) - 1;
  int y1 = static_cast<int>(std::lround(box.y2())) - 1;
  for (int x = x0; x <= x1; ++x) {
    put_pixel(img, x, y0, r, g, b);
    put_pixel(img, x, y1, r, g, b);
  }
  for (int y = y0; y <= y1; ++y) {
    put_pixel(img, x0, y, r, g, b);
    put_pixel(img, x1, y, r, g, b);
  }
}

// Column-packed 3x5 glyphs for digits and the decimal point.
inline const std::uint16_t* glyph_3x5(char c) {
  static const std::uint16_t digits[11][3] = {
      {0x1F, 0x11, 0x1F},  // 0
      {0x00, 0x1F, 0x00},  // 1
      {0x1D, 0x15, 0x17},  // 2
      {0x15, 0x15, 0x1F},  // 3
      {0x07, 0x04, 0x1F},  // 4
      {0x17, 0x15, 0x1D},  // 5
      {0x1F, 0x15, 0x1D},  // 6
      {0x01, 0x01, 0x1F},  // 7
      {0x1F, 0x15, 0x1F},  // 8
      {0x17, 0x15, 0x1F},  // 9
      {0x00, 0x10, 0x00},  // .
  };
  if (c >= '0' && c <= '9') return digits[c - '0'];
  if (c == '.') return digits[10];
  return nullptr;
}

inline void draw_text(Tensor& img, int x, int y, const std::string& text, double r, double g,
                      double b) {
  int cx = x;
  for (char c : text) {
    const std::uint16_t* glyph = glyph_3x5(c);
    if (glyph) {
      for (int col = 0; col < 3; ++col)
        for (int row = 0; row < 5; ++row)
          if (glyph[col] & (1 << row)) put_pixel(img, cx + col, y + row, r, g, b);
    }
    cx += 4;
  }
}

inline Tensor render_overlay(const Tensor& image, const std::vector<BBox>& gt,
                             const std::vector<Detection>& dets) {
  Tensor out = image;
  for (const auto& box : gt) draw_box(out, box, 0.1, 0.9, 0.1);
  for (const auto& d : dets) {
    draw_box(out, d.box, 0.95, 0.1, 0.1);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", d.score);
    int ty = static_cast<int>(std::lround(d.box.y)) - 6;
    if (ty < 0) ty = static_cast<int>(std::lround(d.box.y)) + 1;
    draw_text(out, static_cast<int>(std::lround(d.box.x)), ty, buf, 0.95, 0.1, 0.1);
  }
  return out;
}

}  // namespace leapd
