#pragma once

namespace rankcount {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned pixel rectangle covering columns [x, x+w) and rows [y, y+h).
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  /// A point lies in the rect if it falls inside the covered pixel area
  /// (half-open on the far edges).
  bool contains(Point p) const {
    return p.x >= x && p.x < x + w && p.y >= y && p.y < y + h;
  }

  bool contains(const Rect& other) const {
    return other.x >= x && other.y >= y && other.x + other.w <= x + w &&
           other.y + other.h <= y + h;
  }
};

}  // namespace rankcount
