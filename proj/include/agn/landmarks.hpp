#pragma once

// Pseudo-landmark embedding. Landmarks sit on equidistant lines parallel to
// the pectoral line between the nipple and the muscle; MLO views get extra
// rows inside the muscle region. Points are ordered line-major (nipple side
// first), then along each line.

#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "agn/geometry.hpp"
#include "agn/types.hpp"

namespace agn {

struct LandmarkConfig {
  int n_lines = 8;
  std::vector<int> points_per_line = {4, 6, 8, 9, 10, 10, 10, 9};
  int mlo_pectoral_rows = 0;
  int pectoral_points_per_row = 5;

  [[nodiscard]] int expected_count() const {
    return std::accumulate(points_per_line.begin(), points_per_line.end(), 0) +
           mlo_pectoral_rows * pectoral_points_per_row;
  }

  /// 66 nodes.
  static LandmarkConfig cc_default() { return {}; }
  /// 66 line nodes plus one 5-point row in the muscle: 71 nodes.
  static LandmarkConfig mlo_default() {
    LandmarkConfig c;
    c.mlo_pectoral_rows = 1;
    return c;
  }
  static LandmarkConfig for_view(ViewType v) { return v == ViewType::CC ? cc_default() : mlo_default(); }

  void validate() const {
    if (n_lines < 1) fail("LandmarkConfig: n_lines must be >= 1");
    if (static_cast<int>(points_per_line.size()) != n_lines)
      fail("LandmarkConfig: points_per_line has ", points_per_line.size(), " entries, expected ", n_lines);
    for (int p : points_per_line)
      if (p < 1) fail("LandmarkConfig: every points_per_line entry must be >= 1");
    if (mlo_pectoral_rows < 0 || pectoral_points_per_row < 1)
      fail("LandmarkConfig: invalid pectoral rows");
  }
};

struct LandmarkSet {
  ViewType view = ViewType::CC;
  std::vector<Point2> points;
  /// Index of the parallel line each point sits on (0 = nipple side).
  /// Pectoral rows continue the numbering past the muscle line.
  std::vector<int> line_index;

  [[nodiscard]] std::size_t count() const noexcept { return points.size(); }

  [[nodiscard]] LandmarkSet scaled(double factor) const {
    LandmarkSet out = *this;
    for (auto& p : out.points) {
      p.x *= factor;
      p.y *= factor;
    }
    return out;
  }
};

using Warnings = std::vector<std::string>;

namespace detail {
struct Chord {
  double s0 = 0.0;
  double s1 = 0.0;
  bool found = false;
};

/// Longest foreground run along base + s * dir, sampled every 0.25 px.
inline Chord longest_chord(const BreastMask& mask, Point2 base, Point2 dir) {
  const double reach = std::hypot(mask.width, mask.height) + 2.0;
  constexpr double step = 0.25;
  const int n = static_cast<int>(std::ceil(2.0 * reach / step));
  Chord best;
  double best_len = -1.0;
  bool in_run = false;
  double run_start = 0.0, last_inside = 0.0;
  for (int i = 0; i <= n + 1; ++i) {
    const double s = -reach + i * step;
    const bool inside = i <= n && mask.inside(base.x + s * dir.x, base.y + s * dir.y);
    if (inside) {
      if (!in_run) run_start = s;
      in_run = true;
      last_inside = s;
    } else if (in_run) {
      in_run = false;
      const double len = last_inside - run_start;
      if (len > best_len) {
        best_len = len;
        best = {run_start, last_inside, true};
      }
    }
  }
  if (!best.found) return best;
  // Bisect both run boundaries so chord endpoints are exact up to the mask.
  auto inside_at = [&](double s) { return mask.inside(base.x + s * dir.x, base.y + s * dir.y); };
  auto refine = [&](double in, double out) {
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (in + out);
      (inside_at(mid) ? in : out) = mid;
    }
    return in;
  };
  best.s0 = refine(best.s0, best.s0 - step);
  best.s1 = refine(best.s1, best.s1 + step);
  return best;
}

inline bool place_on_chord(const BreastMask& mask, Point2 base, Point2 dir, const Chord& c, int m,
                           int line_id, LandmarkSet& out) {
  std::vector<Point2> pts;
  for (int j = 1; j <= m; ++j) {
    const double s = c.s0 + (c.s1 - c.s0) * j / (m + 1);
    Point2 p{base.x + s * dir.x, base.y + s * dir.y};
    if (!mask.inside(p.x, p.y)) {
      // Snap to the nearest foreground sample along the chord.
      bool fixed = false;
      for (double off = 0.25; off < (c.s1 - c.s0) && !fixed; off += 0.25)
        for (double sgn : {-1.0, 1.0}) {
          const double s2 = std::clamp(s + sgn * off, c.s0, c.s1);
          if (mask.inside(base.x + s2 * dir.x, base.y + s2 * dir.y)) {
            p = {base.x + s2 * dir.x, base.y + s2 * dir.y};
            fixed = true;
            break;
          }
        }
      if (!fixed) return false;
    }
    pts.push_back(p);
  }
  for (const auto& p : pts) {
    out.points.push_back(p);
    out.line_index.push_back(line_id);
  }
  return true;
}
}  // namespace detail

inline LandmarkSet embed_landmarks(const BreastMask& mask, const PectoralLine& line, const NippleLocation& nipple,
                                   const LandmarkConfig& cfg, ViewType view, Warnings* warnings = nullptr) {
  cfg.validate();
  const Point2 normal{std::cos(line.theta), std::sin(line.theta)};
  const Point2 along{-normal.y, normal.x};
  const double center = line.signed_distance(nipple.x + 0.5, nipple.y + 0.5);
  if (std::abs(center) < 1.0) fail("embed_landmarks: nipple lies on the pectoral line");
  // Depth runs to the far corner of the nipple pixel (the breast's outer
  // edge), which keeps the line spacing exact under pixel-replicated scaling.
  double depth = center;
  for (int cx = 0; cx <= 1; ++cx)
    for (int cy = 0; cy <= 1; ++cy) {
      const double d = line.signed_distance(nipple.x + cx, nipple.y + cy);
      if (std::abs(d) > std::abs(depth) && d * center > 0) depth = d;
    }

  LandmarkSet out;
  out.view = view;
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };

  auto embed_line = [&](double offset, int m, int line_id) {
    // Points with x·n = rho + offset.
    const Point2 base{normal.x * (line.rho + offset), normal.y * (line.rho + offset)};
    const auto chord = detail::longest_chord(mask, base, along);
    if (!chord.found || chord.s1 - chord.s0 < 1.0) {
      warn(detail::concat("landmark line ", line_id, " at offset ", offset, " does not cross the breast; skipped"));
      return;
    }
    if (!detail::place_on_chord(mask, base, along, chord, m, line_id, out))
      warn(detail::concat("landmark line ", line_id, " has no interior placement; skipped"));
  };

  const int n = cfg.n_lines;
  for (int i = 0; i < n; ++i) embed_line(depth * (n - i) / (n + 1), cfg.points_per_line[i], i);

  if (view == ViewType::MLO && cfg.mlo_pectoral_rows > 0) {
    // Depth of the muscle region: farthest foreground pixel behind the line.
    double muscle_depth = 0.0;
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x) {
        if (!mask.inside(x, y)) continue;
        const double d = line.signed_distance(x + 0.5, y + 0.5);
        if (d * depth < 0.0) muscle_depth = std::max(muscle_depth, std::abs(d));
      }
    if (muscle_depth < 1.0) {
      warn("no pectoral region behind the muscle line; pectoral rows skipped");
    } else {
      const double sgn = depth > 0 ? -1.0 : 1.0;
      const int rows = cfg.mlo_pectoral_rows;
      for (int r = 1; r <= rows; ++r)
        embed_line(sgn * muscle_depth * r / (rows + 1), cfg.pectoral_points_per_row, n + r - 1);
    }
  }
  return out;
}

/// Ablation baseline: regular grid over the mask bounding box, foreground
/// points only, row-major.
inline LandmarkSet uniform_grid_landmarks(const BreastMask& mask, int rows, int cols, ViewType view = ViewType::CC) {
  if (rows < 1 || cols < 1) fail("uniform_grid_landmarks: rows and cols must be >= 1");
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.inside(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  LandmarkSet out;
  out.view = view;
  if (x1 < 0) return out;
  const double bw = x1 + 1 - x0, bh = y1 + 1 - y0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Point2 p{x0 + (c + 0.5) * bw / cols, y0 + (r + 0.5) * bh / rows};
      if (mask.inside(p.x, p.y)) {
        out.points.push_back(p);
        out.line_index.push_back(r);
      }
    }
  return out;
}

// Landmark file:
//   view <CC|MLO>
//   count <n>
//   <x> <y>        integer pixel indices, one landmark per line
inline void write_landmarks(const std::string& path, const LandmarkSet& lm) {
  std::ofstream os(path);
  if (!os) fail("write_landmarks: cannot open '", path, "'");
  os << "view " << to_string(lm.view) << "\ncount " << lm.count() << '\n';
  for (const auto& p : lm.points)
    os << static_cast<long>(std::floor(p.x)) << ' ' << static_cast<long>(std::floor(p.y)) << '\n';
}

/// Reads a landmark file; points come back at pixel centers.
inline LandmarkSet read_landmarks(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("read_landmarks: cannot open '", path, "'");
  std::string tag, view;
  std::size_t count = 0;
  if (!(is >> tag >> view) || tag != "view") fail("read_landmarks: missing view");
  if (!(is >> tag >> count) || tag != "count") fail("read_landmarks: missing count");
  LandmarkSet lm;
  lm.view = parse_view_type(view);
  for (std::size_t i = 0; i < count; ++i) {
    long x = 0, y = 0;
    if (!(is >> x >> y)) fail("read_landmarks: truncated at point ", i);
    lm.points.push_back({x + 0.5, y + 0.5});
    lm.line_index.push_back(-1);
  }
  return lm;
}

}  // namespace agn
