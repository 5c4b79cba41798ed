// Axis-aligned boxes in (x, y, w, h) pixel form and their overlap measures.
#pragma once

#include <algorithm>
#include <stdexcept>

namespace leapd {

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }
  bool operator==(const BBox&) const = default;
};

inline double iou(const BBox& a, const BBox& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0)
    throw std::invalid_argument("iou: boxes must have positive width and height");
  double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return inter / uni;
}

// Intersection over the first box's area; the ignored-region overlap test.
inline double intersection_over_area(const BBox& a, const BBox& region) {
  if (a.w <= 0 || a.h <= 0) return 0.0;
  double ix = std::max(0.0, std::min(a.x2(), region.x2()) - std::max(a.x, region.x));
  double iy = std::max(0.0, std::min(a.y2(), region.y2()) - std::max(a.y, region.y));
  return ix * iy / a.area();
}

}  // namespace leapd
