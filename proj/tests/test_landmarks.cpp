#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "agn/landmarks.hpp"

using namespace agn;

namespace {
BreastMask mask_from(int w, int h, auto pred) {
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) fg[static_cast<std::size_t>(y) * w + x] = pred(x, y) ? 1 : 0;
  return largest_component_mask(w, h, fg);
}

// Half disc against the left edge, radius r, centered at row cy.
BreastMask half_disc(int w, int h, double r, double cy) {
  return mask_from(w, h, [&](int x, int y) { return std::hypot(x + 0.5, y + 0.5 - cy) <= r; });
}

// MLO-like shape: half ellipse plus the upper-left wedge behind a line.
BreastMask mlo_shape(int size, double scale) {
  const PectoralLine pl = make_line(60.0 * scale, 50.0 * std::numbers::pi / 180.0);
  return mask_from(size, size, [&](int x, int y) {
    const double px = x + 0.5, py = y + 0.5;
    const bool breast = std::pow(px / (150 * scale), 2) + std::pow((py - 128 * scale) / (110 * scale), 2) <= 1.0;
    return breast || (pl.signed_distance(px, py) < 0 && px < 200 * scale && py < 200 * scale);
  });
}
}  // namespace

TEST(Landmarks, SinglePointAtMidChordMidpoint) {
  const double r = 40, cy = 50;
  const auto m = half_disc(80, 100, r, cy);
  const auto nip = detect_nipple(m, chest_wall_line());
  LandmarkConfig cfg{1, {1}, 0, 5};
  const auto lm = embed_landmarks(m, chest_wall_line(), nip, cfg, ViewType::CC);
  ASSERT_EQ(lm.count(), 1u);
  // Mid line sits at half the nipple depth; the chord is vertical and centered
  // on the disc's axis.
  const double depth = nip.x + 1.0;  // outer edge of the nipple pixel
  EXPECT_NEAR(lm.points[0].x, depth / 2, 1e-9);
  EXPECT_NEAR(lm.points[0].y, cy, 0.5);
}

TEST(Landmarks, DefaultCountsReproduce66And71) {
  EXPECT_EQ(LandmarkConfig::cc_default().expected_count(), 66);
  EXPECT_EQ(LandmarkConfig::mlo_default().expected_count(), 71);
  const auto cc = half_disc(256, 256, 150, 128);
  Warnings w;
  const auto lcc = embed_landmarks(cc, chest_wall_line(), detect_nipple(cc, chest_wall_line()),
                                   LandmarkConfig::cc_default(), ViewType::CC, &w);
  EXPECT_EQ(lcc.count(), 66u);
  EXPECT_TRUE(w.empty());

  const auto mlo = mlo_shape(256, 1.0);
  const auto pl = make_line(60.0, 50.0 * std::numbers::pi / 180.0);
  const auto lmlo = embed_landmarks(mlo, pl, detect_nipple(mlo, pl), LandmarkConfig::mlo_default(), ViewType::MLO, &w);
  EXPECT_EQ(lmlo.count(), 71u);
  EXPECT_TRUE(w.empty());
  // Pectoral row is appended after the line-major points.
  for (std::size_t i = 66; i < 71; ++i) EXPECT_EQ(lmlo.line_index[i], 8);
}

TEST(Landmarks, StrictlyInsideAndLineMajor) {
  const auto m = mlo_shape(256, 1.0);
  const auto pl = make_line(60.0, 50.0 * std::numbers::pi / 180.0);
  const auto lm = embed_landmarks(m, pl, detect_nipple(m, pl), LandmarkConfig::mlo_default(), ViewType::MLO);
  for (std::size_t i = 0; i < lm.count(); ++i) {
    EXPECT_TRUE(m.inside(lm.points[i].x, lm.points[i].y));
    if (i) {
      EXPECT_LE(lm.line_index[i - 1], lm.line_index[i]);
    }
  }
  // Line 0 is nearest the nipple: largest distance from the muscle line.
  EXPECT_GT(pl.signed_distance(lm.points[0].x, lm.points[0].y),
            pl.signed_distance(lm.points[65].x, lm.points[65].y));
}

TEST(Landmarks, ScaleCovariance) {
  // Pixel-replicated 2x copy: the exact scaled version of a raster mask.
  const auto m1 = half_disc(128, 128, 70, 64);
  const auto m2 = mask_from(256, 256, [&](int x, int y) { return m1.inside(x / 2, y / 2); });
  const auto c = LandmarkConfig::cc_default();
  const auto a = embed_landmarks(m1, chest_wall_line(), detect_nipple(m1, chest_wall_line()), c, ViewType::CC);
  const auto b = embed_landmarks(m2, chest_wall_line(), detect_nipple(m2, chest_wall_line()), c, ViewType::CC);
  ASSERT_EQ(a.count(), b.count());
  for (std::size_t i = 0; i < a.count(); ++i) {
    EXPECT_NEAR(2 * a.points[i].x, b.points[i].x, 1.0);
    EXPECT_NEAR(2 * a.points[i].y, b.points[i].y, 1.0);
  }
}

TEST(Landmarks, Deterministic) {
  const auto m = half_disc(128, 128, 70, 64);
  const auto n = detect_nipple(m, chest_wall_line());
  const auto a = embed_landmarks(m, chest_wall_line(), n, LandmarkConfig::cc_default(), ViewType::CC);
  const auto b = embed_landmarks(m, chest_wall_line(), n, LandmarkConfig::cc_default(), ViewType::CC);
  EXPECT_EQ(a.points, b.points);
}

TEST(Landmarks, NippleOnLineAndBadConfigRejected) {
  const auto m = half_disc(64, 64, 30, 32);
  EXPECT_THROW(embed_landmarks(m, chest_wall_line(), {0, 32}, LandmarkConfig::cc_default(), ViewType::CC), Error);
  LandmarkConfig bad{2, {3}, 0, 5};
  EXPECT_THROW(embed_landmarks(m, chest_wall_line(), {29, 32}, bad, ViewType::CC), Error);
}

TEST(Landmarks, MissingLineSkippedWithWarning) {
  const auto m = half_disc(64, 64, 30, 32);
  // Claim a nipple far outside the breast: outer lines miss the mask.
  Warnings w;
  const auto lm = embed_landmarks(m, chest_wall_line(), {50, 32}, LandmarkConfig{3, {2, 2, 2}, 0, 5}, ViewType::CC, &w);
  EXPECT_EQ(lm.count(), 4u);
  EXPECT_EQ(w.size(), 1u);
}

TEST(UniformGrid, Cases) {
  const auto full = mask_from(4, 4, [](int, int) { return true; });
  const auto g = uniform_grid_landmarks(full, 2, 2);
  ASSERT_EQ(g.count(), 4u);
  EXPECT_EQ(g.points[0], (Point2{1, 1}));
  EXPECT_EQ(g.points[3], (Point2{3, 3}));
  const auto one = uniform_grid_landmarks(full, 1, 1);
  ASSERT_EQ(one.count(), 1u);
  EXPECT_EQ(one.points[0], (Point2{2, 2}));

  // Left half foreground, bounding box spans the full grid because of a lone
  // pixel in the far column on the same component.
  const auto half = mask_from(8, 8, [](int x, int y) { return x < 4 || (y == 0); });
  const auto h = uniform_grid_landmarks(half, 4, 4);
  for (const auto& p : h.points) EXPECT_LT(p.x, 4.0);
  EXPECT_EQ(h.count(), 8u);
  EXPECT_THROW(uniform_grid_landmarks(full, 0, 2), Error);
}

TEST(LandmarkFile, RoundTrip) {
  LandmarkSet lm{ViewType::MLO, {{3.7, 4.2}, {10.0, 0.5}}, {0, 0}};
  const auto path = (std::filesystem::temp_directory_path() / "agn_lm_test.txt").string();
  write_landmarks(path, lm);
  const auto back = read_landmarks(path);
  EXPECT_EQ(back.view, ViewType::MLO);
  ASSERT_EQ(back.count(), 2u);
  EXPECT_EQ(back.points[0], (Point2{3.5, 4.5}));
  EXPECT_EQ(back.points[1], (Point2{10.5, 0.5}));
  std::filesystem::remove(path);
}
