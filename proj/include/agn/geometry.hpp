#pragma once

// Mammogram preprocessing: Otsu foreground segmentation with contour
// tracing, Canny edges, Hough pectoral-line fitting, nipple localization and
// bilinear view resizing.
//
// Continuous coordinates put pixel (x, y) at its center (x + 0.5, y + 0.5).
// Lines use Hesse normal form  x cos(theta) + y sin(theta) = rho.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <queue>
#include <vector>

#include "agn/image.hpp"
#include "agn/numcore.hpp"

namespace agn {

struct PixelPoint {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct BreastMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> foreground;  // 0 / 1, row-major
  std::vector<PixelPoint> contour;       // closed, clockwise on screen
  int threshold = 0;                     // Otsu level that produced the mask

  [[nodiscard]] bool inside(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width && y < height &&
           foreground[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
  }
  /// Foreground test at a continuous coordinate.
  [[nodiscard]] bool inside(double x, double y) const noexcept {
    return x >= 0.0 && y >= 0.0 && inside(static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y)));
  }
  [[nodiscard]] GrayImage to_image() const {
    GrayImage img(width, height);
    for (std::size_t i = 0; i < foreground.size(); ++i) img.pixels[i] = foreground[i] ? 255 : 0;
    return img;
  }
};

struct PectoralLine {
  double rho = 0.0;    // pixels
  double theta = 0.0;  // radians, [0, pi)

  [[nodiscard]] double signed_distance(double x, double y) const noexcept {
    return x * std::cos(theta) + y * std::sin(theta) - rho;
  }
};

struct NippleLocation {
  int x = 0;
  int y = 0;
};

/// Builds the canonical line for given normal angle / offset, folding theta
/// into [0, pi).
inline PectoralLine make_line(double rho, double theta) {
  constexpr double pi = std::numbers::pi;
  theta = std::fmod(theta, 2.0 * pi);
  if (theta < 0.0) theta += 2.0 * pi;
  if (theta >= pi) {
    theta -= pi;
    rho = -rho;
  }
  return {rho, theta};
}

// ---------------------------------------------------------------------------
// Otsu

using Histogram = std::array<std::uint64_t, 256>;

inline Histogram histogram(const GrayImage& img) {
  Histogram h{};
  for (std::uint8_t v : img.pixels) ++h[v];
  return h;
}

namespace detail {
using u128 = unsigned __int128;

// Exact comparison of a/b against c/d for b, d > 0: returns -1, 0 or 1.
inline int compare_fractions(u128 a, u128 b, u128 c, u128 d) {
  int sign = 1;
  while (true) {
    const u128 qa = a / b, qc = c / d;
    if (qa != qc) return qa < qc ? -sign : sign;
    const u128 ra = a % b, rc = c % d;
    if (ra == 0 && rc == 0) return 0;
    if (ra == 0) return -sign;
    if (rc == 0) return sign;
    // ra/b < rc/d  <=>  b/ra > d/rc
    const u128 na = b, nb = ra, nc = d, nd = rc;
    a = na; b = nb; c = nc; d = nd;
    sign = -sign;
  }
}

/// Between-class variance for threshold t (class 0 = levels <= t), as an
/// exact fraction num/den scaled by N^2. den == 0 marks an empty class.
struct OtsuScore {
  u128 num = 0;
  u128 den = 0;
};

inline OtsuScore otsu_score(std::uint64_t n0, std::uint64_t s0, std::uint64_t n1, std::uint64_t s1) {
  if (n0 == 0 || n1 == 0) return {0, 0};
  const u128 a = static_cast<u128>(n1) * s0;
  const u128 b = static_cast<u128>(n0) * s1;
  const u128 diff = a > b ? a - b : b - a;
  return {diff * diff, static_cast<u128>(n0) * n1};
}

inline int compare_scores(const OtsuScore& x, const OtsuScore& y) {
  if (x.den == 0 && y.den == 0) return 0;
  if (x.den == 0) return -1;
  if (y.den == 0) return 1;
  return compare_fractions(x.num, x.den, y.num, y.den);
}

/// Picks the midpoint of the first run of maximal scores.
inline int pick_otsu_level(const std::array<OtsuScore, 256>& scores) {
  int best = -1;
  for (int t = 0; t < 256; ++t) {
    if (scores[t].den == 0) continue;
    if (best < 0 || compare_scores(scores[t], scores[best]) > 0) best = t;
  }
  if (best < 0) return -1;
  int end = best;
  while (end + 1 < 256 && compare_scores(scores[end + 1], scores[best]) == 0) ++end;
  return (best + end) / 2;
}
}  // namespace detail

/// Otsu level: maximizes between-class variance over all 256 candidate
/// thresholds (class 0 = intensity <= t). Returns -1 for constant images.
inline int otsu_level(const Histogram& h) {
  std::uint64_t n_total = 0, s_total = 0;
  for (int v = 0; v < 256; ++v) {
    n_total += h[v];
    s_total += h[v] * static_cast<std::uint64_t>(v);
  }
  std::array<detail::OtsuScore, 256> scores{};
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += h[t];
    s0 += h[t] * static_cast<std::uint64_t>(t);
    scores[t] = detail::otsu_score(n0, s0, n_total - n0, s_total - s0);
  }
  return detail::pick_otsu_level(scores);
}

namespace detail {
constexpr std::array<int, 8> kDx = {-1, -1, 0, 1, 1, 1, 0, -1};  // W NW N NE E SE S SW
constexpr std::array<int, 8> kDy = {0, -1, -1, -1, 0, 1, 1, 1};

/// Moore-neighbour boundary trace, clockwise on screen (y down).
inline std::vector<PixelPoint> trace_contour(const BreastMask& m, PixelPoint start) {
  std::vector<PixelPoint> contour{start};
  // Start pixel is the first in raster order, so its west neighbour is
  // background; begin the clockwise scan from there.
  PixelPoint cur = start;
  int back = 0;  // direction index pointing from cur to the backtrack pixel
  PixelPoint second{-1, -1};
  const std::size_t limit = static_cast<std::size_t>(m.width) * static_cast<std::size_t>(m.height) * 4 + 8;
  for (std::size_t step = 0; step < limit; ++step) {
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      const int d = (back + i) % 8;
      if (m.inside(cur.x + kDx[d], cur.y + kDy[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) return contour;  // isolated pixel
    const PixelPoint next{cur.x + kDx[found], cur.y + kDy[found]};
    // New backtrack: the neighbour checked just before `found`, expressed
    // relative to `next`.
    const int prev_dir = (found + 7) % 8;
    const PixelPoint bt{cur.x + kDx[prev_dir], cur.y + kDy[prev_dir]};
    int nb = 0;
    for (int d = 0; d < 8; ++d)
      if (next.x + kDx[d] == bt.x && next.y + kDy[d] == bt.y) nb = d;
    if (cur == start && contour.size() > 1 && next == second) {
      contour.pop_back();  // start was appended again
      return contour;
    }
    if (contour.size() == 1) second = next;
    contour.push_back(next);
    cur = next;
    back = nb;
  }
  fail("trace_contour: did not close");
}
}  // namespace detail

/// Keeps the largest 8-connected component of `fg` (ties: earliest in raster
/// order) and traces its contour.
inline BreastMask largest_component_mask(int width, int height, const std::vector<std::uint8_t>& fg) {
  BreastMask m;
  m.width = width;
  m.height = height;
  m.foreground.assign(fg.size(), 0);
  std::vector<int> label(fg.size(), -1);
  int best_label = -1;
  std::size_t best_size = 0, best_first = 0;
  int next_label = 0;
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    if (!fg[i] || label[i] >= 0) continue;
    const int lab = next_label++;
    std::size_t count = 0;
    stack.assign(1, i);
    label[i] = lab;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++count;
      const int px = static_cast<int>(p % static_cast<std::size_t>(width));
      const int py = static_cast<int>(p / static_cast<std::size_t>(width));
      for (int d = 0; d < 8; ++d) {
        const int nx = px + detail::kDx[d], ny = py + detail::kDy[d];
        if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
        const std::size_t q = static_cast<std::size_t>(ny) * static_cast<std::size_t>(width) + static_cast<std::size_t>(nx);
        if (fg[q] && label[q] < 0) {
          label[q] = lab;
          stack.push_back(q);
        }
      }
    }
    if (count > best_size) {
      best_size = count;
      best_label = lab;
      best_first = i;
    }
  }
  if (best_label < 0) fail("otsu: no foreground");
  for (std::size_t i = 0; i < fg.size(); ++i) m.foreground[i] = label[i] == best_label ? 1 : 0;
  const PixelPoint start{static_cast<int>(best_first % static_cast<std::size_t>(width)),
                         static_cast<int>(best_first / static_cast<std::size_t>(width))};
  m.contour = detail::trace_contour(m, start);
  return m;
}

inline BreastMask otsu_threshold(const GrayImage& img) {
  if (img.empty()) fail("otsu: empty image");
  const int t = otsu_level(histogram(img));
  if (t < 0) fail("otsu: constant image has no foreground");
  std::vector<std::uint8_t> fg(img.pixels.size());
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = img.pixels[i] > t ? 1 : 0;
  BreastMask m = largest_component_mask(img.width, img.height, fg);
  m.threshold = t;
  return m;
}

// ---------------------------------------------------------------------------
// Canny

struct EdgeMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> edges;  // 0 / 1

  [[nodiscard]] bool at(int x, int y) const noexcept {
    return edges[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
  }
  [[nodiscard]] std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto e : edges) n += e;
    return n;
  }
};

struct CannyOptions {
  double sigma = 1.4;
  double low = 20.0;
  double high = 60.0;
};

namespace detail {
inline std::vector<double> gaussian_blur5(const GrayImage& img, double sigma) {
  std::array<double, 5> k{};
  double s = 0.0;
  for (int i = -2; i <= 2; ++i) {
    k[i + 2] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    s += k[i + 2];
  }
  for (double& v : k) v /= s;
  const int w = img.width, h = img.height;
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  std::vector<double> tmp(img.pixels.size()), out(img.pixels.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * img.at(clampi(x + i, 0, w - 1), y);
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp[static_cast<std::size_t>(clampi(y + i, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}
}  // namespace detail

/// Gaussian smoothing (5x5), Sobel gradients, non-maximum suppression and
/// double-threshold hysteresis. Thresholds apply to the Sobel magnitude on
/// the 8-bit scale.
inline EdgeMap canny_edges(const GrayImage& img, double low, double high, double sigma = 1.4) {
  if (!(low >= 0.0) || !(low <= high)) fail("canny: require 0 <= low <= high");
  const int w = img.width, h = img.height;
  EdgeMap out{w, h, std::vector<std::uint8_t>(img.pixels.size(), 0)};
  if (w == 0 || h == 0) return out;
  const auto g = detail::gaussian_blur5(img, sigma);
  auto at = [&](int x, int y) {
    x = x < 0 ? 0 : (x >= w ? w - 1 : x);
    y = y < 0 ? 0 : (y >= h ? h - 1 : y);
    return g[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<double> mag(g.size());
  std::vector<std::uint8_t> dir(g.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      const double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      mag[i] = std::hypot(gx, gy);
      double ang = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (ang < 0) ang += 180.0;
      // 0: horizontal gradient, 1: 45deg, 2: vertical, 3: 135deg
      dir[i] = ang < 22.5 || ang >= 157.5 ? 0 : (ang < 67.5 ? 1 : (ang < 112.5 ? 2 : 3));
    }
  auto m_at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return mag[static_cast<std::size_t>(y) * w + x];
  };
  // 0 none, 1 weak, 2 strong
  std::vector<std::uint8_t> cls(g.size(), 0);
  static constexpr int ox[4] = {1, 1, 0, -1};
  static constexpr int oy[4] = {0, 1, 1, 1};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = mag[i];
      if (m <= 0.0) continue;
      const int d = dir[i];
      const double behind = m_at(x - ox[d], y - oy[d]);
      const double ahead = m_at(x + ox[d], y + oy[d]);
      // Strict on one side so plateaus of equal magnitude stay one pixel wide.
      if (!(m > behind && m >= ahead)) continue;
      if (m >= high) cls[i] = 2;
      else if (m >= low) cls[i] = 1;
    }
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < cls.size(); ++i)
    if (cls[i] == 2) {
      out.edges[i] = 1;
      stack.push_back(i);
    }
  while (!stack.empty()) {
    const std::size_t p = stack.back();
    stack.pop_back();
    const int px = static_cast<int>(p % static_cast<std::size_t>(w));
    const int py = static_cast<int>(p / static_cast<std::size_t>(w));
    for (int d = 0; d < 8; ++d) {
      const int nx = px + detail::kDx[d], ny = py + detail::kDy[d];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
      if (cls[q] == 1 && !out.edges[q]) {
        out.edges[q] = 1;
        stack.push_back(q);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hough pectoral line

/// Admissible region of Hough space: normal angle window and offset range.
struct PectoralPrior {
  double theta_min_deg = 30.0;
  double theta_max_deg = 80.0;
  double rho_min = 1.0;
  double rho_max = 1e9;

  /// Default MLO prior for the canonical (chest wall left) orientation: the
  /// muscle occupies the upper-left corner.
  static PectoralPrior mlo_default(int width, int height) {
    return {30.0, 80.0, 1.0, 0.6 * std::min(width, height)};
  }
};

inline PectoralLine hough_pectoral_line(const EdgeMap& edges, const PectoralPrior& prior) {
  constexpr double deg = std::numbers::pi / 180.0;
  const int w = edges.width, h = edges.height;
  const int diag = static_cast<int>(std::ceil(std::hypot(w, h))) + 1;
  const int t_lo = std::max(0, static_cast<int>(std::ceil(prior.theta_min_deg - 1e-9)));
  const int t_hi = std::min(179, static_cast<int>(std::floor(prior.theta_max_deg + 1e-9)));
  if (t_lo > t_hi) fail("hough: empty angular window");
  const int n_theta = t_hi - t_lo + 1;
  const int n_rho = 2 * diag + 1;
  std::vector<std::uint32_t> acc(static_cast<std::size_t>(n_theta) * n_rho, 0);
  std::vector<double> cs(n_theta), sn(n_theta);
  for (int t = 0; t < n_theta; ++t) {
    cs[t] = std::cos((t_lo + t) * deg);
    sn[t] = std::sin((t_lo + t) * deg);
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!edges.at(x, y)) continue;
      const double px = x + 0.5, py = y + 0.5;
      for (int t = 0; t < n_theta; ++t) {
        const int r = static_cast<int>(std::lround(px * cs[t] + py * sn[t]));
        if (r < prior.rho_min || r > prior.rho_max) continue;
        ++acc[static_cast<std::size_t>(t) * n_rho + (r + diag)];
      }
    }
  std::uint32_t best = 0;
  int best_t = -1, best_r = 0;
  for (int t = 0; t < n_theta; ++t)
    for (int r = 0; r < n_rho; ++r) {
      const auto v = acc[static_cast<std::size_t>(t) * n_rho + r];
      if (v > best) {
        best = v;
        best_t = t;
        best_r = r - diag;
      }
    }
  if (best == 0) fail("hough: no edge votes inside the pectoral prior window");

  const double theta0 = (t_lo + best_t) * deg;
  const double rho0 = best_r;
  // Least-squares (total) refinement over edge pixels near the cell's line.
  double sx = 0, sy = 0;
  std::vector<std::pair<double, double>> pts;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!edges.at(x, y)) continue;
      const double px = x + 0.5, py = y + 0.5;
      if (std::abs(px * std::cos(theta0) + py * std::sin(theta0) - rho0) <= 1.5) {
        pts.emplace_back(px, py);
        sx += px;
        sy += py;
      }
    }
  if (pts.size() < 3) return make_line(rho0, theta0);
  const double mx = sx / pts.size(), my = sy / pts.size();
  double cxx = 0, cxy = 0, cyy = 0;
  for (auto [px, py] : pts) {
    cxx += (px - mx) * (px - mx);
    cxy += (px - mx) * (py - my);
    cyy += (py - my) * (py - my);
  }
  // Normal = eigenvector of the smaller eigenvalue of the 2x2 scatter.
  const double line_angle = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);  // major axis
  double nx = -std::sin(line_angle), ny = std::cos(line_angle);
  if (nx * std::cos(theta0) + ny * std::sin(theta0) < 0) {
    nx = -nx;
    ny = -ny;
  }
  const double theta = std::atan2(ny, nx);
  // Keep the refinement only if it stays close to the voted cell.
  if (std::abs(theta - theta0) > 2.0 * deg) return make_line(rho0, theta0);
  return make_line(mx * nx + my * ny, theta);
}

/// Reference line for CC views: the chest-wall border (left image edge in
/// canonical orientation).
inline PectoralLine chest_wall_line() { return {0.0, 0.0}; }

// ---------------------------------------------------------------------------
// Nipple

inline NippleLocation detect_nipple(const BreastMask& mask, const PectoralLine& line) {
  if (mask.contour.empty()) fail("detect_nipple: empty contour");
  const PixelPoint* best = nullptr;
  double best_d = -1.0;
  for (const auto& p : mask.contour) {
    const double d = std::abs(line.signed_distance(p.x + 0.5, p.y + 0.5));
    if (best == nullptr || d > best_d || (d == best_d && (p.y < best->y || (p.y == best->y && p.x < best->x)))) {
      best = &p;
      best_d = d;
    }
  }
  return {best->x, best->y};
}

// ---------------------------------------------------------------------------
// Resizing

inline GrayImage resize_bilinear(const GrayImage& img, int width, int height) {
  if (img.empty()) fail("resize: empty image");
  if (img.width == width && img.height == height) return img;
  GrayImage out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * img.at(x0, y0) + wx * img.at(x1, y0)) +
                       wy * ((1 - wx) * img.at(x0, y1) + wx * img.at(x1, y1));
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

/// Resamples auxiliary and contralateral views to the examined view's size.
inline std::array<GrayImage, 3> resize_to_examined(const std::array<GrayImage, 3>& views, std::size_t examined_index) {
  if (examined_index >= 3) fail("resize_to_examined: examined index out of range");
  for (const auto& v : views)
    if (v.empty()) fail("resize_to_examined: empty view");
  const auto& e = views[examined_index];
  std::array<GrayImage, 3> out;
  for (std::size_t i = 0; i < 3; ++i)
    out[i] = i == examined_index ? views[i] : resize_bilinear(views[i], e.width, e.height);
  return out;
}

}  // namespace agn
