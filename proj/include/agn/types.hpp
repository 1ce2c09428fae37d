#pragma once

#include <algorithm>
#include <string>
#include <string_view>

#include "agn/numcore.hpp"

namespace agn {

enum class ViewType { CC, MLO };

inline std::string_view to_string(ViewType v) { return v == ViewType::CC ? "CC" : "MLO"; }

inline ViewType parse_view_type(std::string_view s) {
  if (s == "CC" || s == "cc") return ViewType::CC;
  if (s == "MLO" || s == "mlo") return ViewType::MLO;
  fail("unknown view type '", s, "'");
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double squared_distance(Point2 a, Point2 b) noexcept {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

/// Axis-aligned box in continuous pixel coordinates: [x, x+w) x [y, y+h).
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  [[nodiscard]] Point2 center() const noexcept { return {x + 0.5 * w, y + 0.5 * h}; }
  [[nodiscard]] double area() const noexcept { return w * h; }
  friend bool operator==(const Box&, const Box&) = default;
};

inline Box clip_box(Box b, double width, double height) {
  const double x0 = std::clamp(b.x, 0.0, width), y0 = std::clamp(b.y, 0.0, height);
  const double x1 = std::clamp(b.x + b.w, 0.0, width), y1 = std::clamp(b.y + b.h, 0.0, height);
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace agn
