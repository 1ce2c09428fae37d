#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "agn/geometry.hpp"

using namespace agn;

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;

// Exhaustive between-class variance scan in long double; ties go to the first
// maximal run's midpoint, mirroring the documented rule.
int otsu_oracle(const GrayImage& img) {
  std::array<double, 256> h{};
  for (auto p : img.pixels) h[p] += 1;
  const double n = static_cast<double>(img.pixels.size());
  std::array<long double, 256> var{};
  for (int t = 0; t < 256; ++t) {
    long double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
    for (int v = 0; v < 256; ++v) (v <= t ? n0 : n1) += h[v], (v <= t ? s0 : s1) += h[v] * v;
    var[t] = (n0 == 0 || n1 == 0) ? -1 : n0 * n1 * (s0 / n0 - s1 / n1) * (s0 / n0 - s1 / n1);
  }
  (void)n;
  long double best = -1;
  for (auto v : var) best = std::max(best, v);
  int first = 0;
  while (var[first] < best * (1 - 1e-15L)) ++first;
  int last = first;
  while (last + 1 < 256 && var[last + 1] >= best * (1 - 1e-15L)) ++last;
  return (first + last) / 2;
}

GrayImage bimodal(Rng& rng, int w, int h) {
  GrayImage img(w, h);
  const int lo = static_cast<int>(rng.integer(5, 60)), hi = static_cast<int>(rng.integer(120, 230));
  const double cx = rng.uniform(0.3, 0.7) * w, cy = rng.uniform(0.3, 0.7) * h, r = rng.uniform(0.2, 0.35) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool in = std::hypot(x - cx, y - cy) < r;
      const double v = (in ? hi : lo) + 12.0 * rng.normal();
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return img;
}

EdgeMap render_line_edges(int w, int h, double rho, double theta) {
  EdgeMap e{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (std::abs((x + 0.5) * std::cos(theta) + (y + 0.5) * std::sin(theta) - rho) < 0.5)
        e.edges[static_cast<std::size_t>(y) * w + x] = 1;
  return e;
}

BreastMask mask_from(int w, int h, auto pred) {
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) fg[static_cast<std::size_t>(y) * w + x] = pred(x, y) ? 1 : 0;
  return largest_component_mask(w, h, fg);
}
}  // namespace

TEST(Otsu, HalfAndHalf) {
  GrayImage img(16, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 8; x < 16; ++x) img.at(x, y) = 200;
  const auto m = otsu_threshold(img);
  EXPECT_GT(m.threshold, 0);
  EXPECT_LT(m.threshold, 200);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x) EXPECT_EQ(m.inside(x, y), x >= 8);
}

TEST(Otsu, ConstantImageRejected) {
  EXPECT_THROW(otsu_threshold(GrayImage(8, 8, 0)), Error);
  EXPECT_THROW(otsu_threshold(GrayImage(8, 8, 77)), Error);
}

TEST(Otsu, MatchesExhaustiveOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto img = bimodal(rng, 48, 40);
    EXPECT_EQ(otsu_level(histogram(img)), otsu_oracle(img)) << "trial " << trial;
  }
}

TEST(Otsu, SaltNoiseRemovedByLargestComponent) {
  Rng rng(5);
  GrayImage img(40, 40, 10);
  for (int y = 10; y < 30; ++y)
    for (int x = 10; x < 30; ++x) img.at(x, y) = 200;
  for (int i = 0; i < 160; ++i) {
    const int x = static_cast<int>(rng.integer(0, 39)), y = static_cast<int>(rng.integer(0, 39));
    if ((x < 8 || x > 31) && (y < 8 || y > 31)) img.at(x, y) = 255;
  }
  const auto m = otsu_threshold(img);
  EXPECT_EQ(m.threshold, otsu_oracle(img));
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) EXPECT_EQ(m.inside(x, y), x >= 10 && x < 30 && y >= 10 && y < 30);
}

TEST(Contour, SquareIsClosedClockwiseBoundary) {
  const auto m = mask_from(10, 10, [](int x, int y) { return x >= 2 && x < 6 && y >= 3 && y < 7; });
  ASSERT_EQ(m.contour.size(), 12u);
  EXPECT_EQ(m.contour[0], (PixelPoint{2, 3}));
  EXPECT_EQ(m.contour[1], (PixelPoint{3, 3}));  // moves right first: clockwise on screen
  for (std::size_t i = 0; i < m.contour.size(); ++i) {
    const auto a = m.contour[i], b = m.contour[(i + 1) % m.contour.size()];
    EXPECT_LE(std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)), 1);
    EXPECT_TRUE(m.inside(a.x, a.y));
    bool touches_bg = false;
    for (int d = 0; d < 8; ++d) touches_bg |= !m.inside(a.x + detail::kDx[d], a.y + detail::kDy[d]);
    EXPECT_TRUE(touches_bg);
  }
}

TEST(Contour, SinglePixelAndLine) {
  EXPECT_EQ(mask_from(5, 5, [](int x, int y) { return x == 2 && y == 2; }).contour.size(), 1u);
  const auto m = mask_from(6, 3, [](int x, int y) { return y == 1 && x >= 1 && x <= 4; });
  EXPECT_EQ(m.contour.size(), 6u);  // out along the row and back
}

TEST(Canny, VerticalStepIsOnePixelWide) {
  GrayImage img(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 10; x < 20; ++x) img.at(x, y) = 200;
  const auto e = canny_edges(img, 20, 60);
  for (int y = 0; y < 20; ++y) {
    int n = 0;
    for (int x = 0; x < 20; ++x) n += e.at(x, y);
    EXPECT_EQ(n, 1) << "row " << y;
    EXPECT_TRUE(e.at(9, y) || e.at(10, y));
  }
}

TEST(Canny, ConstantImageHasNoEdges) {
  EXPECT_EQ(canny_edges(GrayImage(16, 16, 90), 20, 60).count(), 0u);
  EXPECT_THROW(canny_edges(GrayImage(4, 4), 50, 10), Error);
}

TEST(Canny, DiagonalEdgeWithinOnePixel) {
  GrayImage img(40, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) img.at(x, y) = (x + 0.5) + (y + 0.5) > 40.0 ? 180 : 20;
  const auto e = canny_edges(img, 20, 60);
  ASSERT_GT(e.count(), 20u);
  for (int y = 2; y < 38; ++y)
    for (int x = 2; x < 38; ++x)
      if (e.at(x, y)) {
        EXPECT_LE(std::abs((x + 0.5 + y + 0.5 - 40.0) / std::sqrt(2.0)), 1.0 + 1e-9);
      }
}

TEST(Hough, RecoversRenderedLine) {
  const auto e = render_line_edges(256, 256, 80.0, 60 * kDeg);
  const auto l = hough_pectoral_line(e, PectoralPrior::mlo_default(256, 256));
  EXPECT_NEAR(l.rho, 80.0, 2.0);
  EXPECT_NEAR(l.theta, 60 * kDeg, 2 * kDeg);
}

TEST(Hough, IgnoresLineOutsidePrior) {
  auto e = render_line_edges(200, 200, 70.0, 45 * kDeg);
  const auto other = render_line_edges(200, 200, 150.0, 0.0);  // vertical, outside window
  for (std::size_t i = 0; i < e.edges.size(); ++i) e.edges[i] |= other.edges[i];
  const auto l = hough_pectoral_line(e, PectoralPrior::mlo_default(200, 200));
  EXPECT_NEAR(l.rho, 70.0, 2.0);
  EXPECT_NEAR(l.theta, 45 * kDeg, 2 * kDeg);
}

TEST(Hough, EmptyEdgesRejected) {
  EdgeMap e{32, 32, std::vector<std::uint8_t>(32 * 32, 0)};
  EXPECT_THROW(hough_pectoral_line(e, PectoralPrior::mlo_default(32, 32)), Error);
}

TEST(Nipple, HalfDiscFarthestPoint) {
  const int r = 30, cy = 40;
  const auto m = mask_from(64, 80, [&](int x, int y) { return std::hypot(x + 0.5, y + 0.5 - cy) <= r; });
  const auto n = detect_nipple(m, chest_wall_line());
  EXPECT_EQ(n.x, r - 1);
  // The farthest column is a flat run centered on cy; the tie rule takes its top.
  int top = 0;
  while (!m.inside(r - 1, top)) ++top;
  EXPECT_EQ(n.y, top);
  EXPECT_LT(std::abs(n.y + 0.5 - cy), 6.0);
}

TEST(Nipple, SquareTieBreaksToTopCorner) {
  const auto m = mask_from(12, 12, [](int x, int y) { return x >= 2 && x < 8 && y >= 3 && y < 9; });
  const auto n = detect_nipple(m, make_line(2.0, 0.0));
  EXPECT_EQ(n.x, 7);
  EXPECT_EQ(n.y, 3);
  // Brute force: nothing on the contour is farther.
  for (const auto& p : m.contour) EXPECT_LE(std::abs(p.x + 0.5 - 2.0), n.x + 0.5 - 2.0);
}

TEST(Nipple, SinglePointContour) {
  const auto m = mask_from(5, 5, [](int x, int y) { return x == 3 && y == 1; });
  const auto n = detect_nipple(m, chest_wall_line());
  EXPECT_EQ(n.x, 3);
  EXPECT_EQ(n.y, 1);
}

TEST(Resize, IdentityAndConstant) {
  GrayImage a(10, 6, 40);
  a.at(3, 2) = 9;
  EXPECT_EQ(resize_bilinear(a, 10, 6), a);
  EXPECT_EQ(resize_bilinear(GrayImage(20, 20, 77), 10, 10), GrayImage(10, 10, 77));
}

TEST(Resize, CheckerboardUpscaleMatchesBilinearWeights) {
  GrayImage c(2, 2);
  c.at(0, 0) = 0;
  c.at(1, 0) = 200;
  c.at(0, 1) = 200;
  c.at(1, 1) = 0;
  const auto u = resize_bilinear(c, 4, 4);
  // Source coordinate of output pixel i is (i + 0.5) / 2 - 0.5, clamped.
  auto src = [](int i) { return std::clamp((i + 0.5) / 2.0 - 0.5, 0.0, 1.0); };
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double fx = src(x), fy = src(y);
      const double v = (1 - fy) * (fx * 200) + fy * ((1 - fx) * 200);
      EXPECT_EQ(u.at(x, y), std::lround(v)) << x << "," << y;
    }
}

TEST(Resize, ToExaminedKeepsExaminedView) {
  std::array<GrayImage, 3> v{GrayImage(8, 8, 1), GrayImage(16, 16, 2), GrayImage(4, 4, 3)};
  const auto out = resize_to_examined(v, 0);
  EXPECT_EQ(out[0], v[0]);
  EXPECT_EQ(out[1], GrayImage(8, 8, 2));
  EXPECT_EQ(out[2], GrayImage(8, 8, 3));
}

TEST(Pgm, RoundTripAndMirror) {
  GrayImage img(3, 2);
  img.pixels = {1, 2, 3, 4, 5, 6};
  std::stringstream ss;
  write_pgm(ss, img);
  EXPECT_EQ(ss.str().substr(0, 11), "P5\n3 2\n255\n");
  EXPECT_EQ(read_pgm(ss), img);
  EXPECT_EQ(mirror_horizontal(img).pixels, (std::vector<std::uint8_t>{3, 2, 1, 6, 5, 4}));
}
