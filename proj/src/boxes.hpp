#pragma once

#include <cstdint>

#include "tensor.hpp"

namespace ckfr {

// Axis-aligned pixel box, inclusive-exclusive bounds.
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int64_t area() const { return static_cast<int64_t>(x1 - x0) * static_cast<int64_t>(y1 - y0); }
  bool valid() const { return x0 < x1 && y0 < y1; }
  bool operator==(const Box& other) const = default;
};

inline void validate_box(const Box& b) {
  if (!b.valid()) {
    fail("invalid box [" + std::to_string(b.x0) + "," + std::to_string(b.x1) + ")x[" +
         std::to_string(b.y0) + "," + std::to_string(b.y1) + ")");
  }
}

inline int64_t intersection_area(const Box& a, const Box& b) {
  const int ix0 = a.x0 > b.x0 ? a.x0 : b.x0;
  const int iy0 = a.y0 > b.y0 ? a.y0 : b.y0;
  const int ix1 = a.x1 < b.x1 ? a.x1 : b.x1;
  const int iy1 = a.y1 < b.y1 ? a.y1 : b.y1;
  if (ix0 >= ix1 || iy0 >= iy1) return 0;
  return static_cast<int64_t>(ix1 - ix0) * static_cast<int64_t>(iy1 - iy0);
}

inline double iou(const Box& a, const Box& b) {
  validate_box(a);
  validate_box(b);
  const int64_t inter = intersection_area(a, b);
  const int64_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace ckfr
