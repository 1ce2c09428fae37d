#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "agn/detection.hpp"
#include "test_util.hpp"

using namespace agn;

namespace {

Detection det(double x, double y, double w, double h, double s) { return {{x, y, w, h}, s}; }

/// O(n^2) suppression written directly from the definition: a box survives
/// if no higher-ranked survivor overlaps it above the threshold.
std::vector<Detection> nms_oracle(std::vector<Detection> d, double t) {
  std::vector<bool> alive(d.size(), true);
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (d[a].score != d[b].score) return d[a].score > d[b].score;
    return std::make_tuple(d[a].box.x, d[a].box.y, d[a].box.w, d[a].box.h) <
           std::make_tuple(d[b].box.x, d[b].box.y, d[b].box.w, d[b].box.h);
  });
  std::vector<Detection> out;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (!alive[idx[r]]) continue;
    out.push_back(d[idx[r]]);
    for (std::size_t q = r + 1; q < idx.size(); ++q)
      if (iou(d[idx[r]].box, d[idx[q]].box) > t) alive[idx[q]] = false;
  }
  return out;
}

}  // namespace

TEST(Iou, UnitValues) {
  const Box a{0, 0, 1, 1};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{2, 2, 1, 1}), 0.0);
  EXPECT_EQ(iou(a, Box{0.5, 0, 1, 1}), 1.0 / 3.0);
  EXPECT_EQ(iou(a, Box{1, 0, 1, 1}), 0.0);  // touching edges
  EXPECT_THROW(iou(a, Box{0, 0, 0, 1}), Error);
}

TEST(Nms, IdenticalAndDisjoint) {
  auto one = nms({det(0, 0, 4, 4, 0.9), det(0, 0, 4, 4, 0.8)}, 0.3);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].score, 0.9);
  EXPECT_EQ(nms({det(0, 0, 1, 1, 0.2), det(5, 5, 1, 1, 0.9), det(9, 0, 1, 1, 0.5)}, 0.3).size(), 3u);
  EXPECT_THROW(nms({}, 1.5), Error);
}

TEST(Nms, TiesBrokenByCoordinates) {
  const auto k = nms({det(3, 0, 4, 4, 0.5), det(2, 0, 4, 4, 0.5)}, 0.3);
  ASSERT_EQ(k.size(), 1u);
  EXPECT_EQ(k[0].box.x, 2.0);
}

TEST(Nms, MatchesBruteForce) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> d;
    const int n = static_cast<int>(rng.integer(0, 25));
    for (int i = 0; i < n; ++i)
      d.push_back(det(rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(2, 15), rng.uniform(2, 15),
                      std::round(rng.uniform() * 10) / 10));
    const double t = rng.uniform(0.1, 0.7);
    const auto got = nms(d, t), want = nms_oracle(d, t);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].score, want[i].score);
      EXPECT_EQ(got[i].box.x, want[i].box.x);
      EXPECT_EQ(got[i].box.y, want[i].box.y);
    }
  }
}

TEST(Froc, PerfectAndEmpty) {
  const std::vector<std::vector<Box>> gts{{Box{0, 0, 10, 10}}, {Box{20, 20, 10, 10}}};
  const auto perfect = evaluate_froc({{det(0, 0, 10, 10, 0.9)}, {det(20, 20, 10, 10, 0.8)}}, gts);
  for (const auto& p : perfect.points) EXPECT_EQ(p.recall, 1.0);
  const auto none = evaluate_froc({{}, {}}, gts);
  for (const auto& p : none.points) EXPECT_EQ(p.recall, 0.0);
  EXPECT_THROW(evaluate_froc({{}, {}}, {{}, {}}), Error);
  EXPECT_THROW(evaluate_froc({{}}, gts), Error);
}

// Hand enumeration. Two images, one mass each.
// Ranked: TP(img0) .9, FP .8, FP .7, TP(img1) .6.
// Before the first FP recall is 1/2; after two FPs (1.0 FPI) both are found.
// Operating points (fpi, recall): (0, .5), (.5, .5), (1, 1).
TEST(Froc, MicroCaseInterleaved) {
  const std::vector<std::vector<Box>> gts{{Box{0, 0, 10, 10}}, {Box{50, 50, 10, 10}}};
  const auto c = evaluate_froc({{det(0, 0, 10, 10, 0.9), det(30, 0, 10, 10, 0.8)},
                                {det(0, 30, 10, 10, 0.7), det(50, 50, 10, 10, 0.6)}},
                               gts);
  EXPECT_DOUBLE_EQ(c.recall_at(0.5), 0.5);
  EXPECT_DOUBLE_EQ(c.recall_at(1.0), 1.0);
  EXPECT_DOUBLE_EQ(c.recall_at(4.0), 1.0);
}

// Four images, 4 masses. FPs ranked between the hits:
//   TP .95, FP .9, FP .85, TP .8, FP .7, FP .6, FP .5, FP .4, TP .3
// Points: (0, .25), (.25, .25), (.5, .5), (.75, .5), (1, .5), (1.25, .5), (1.5, .75).
// The fourth mass is never detected.
// R@0.5 = .5, R@1 = .5, R@2..4 = .75 (held).
TEST(Froc, MicroCaseWithMiss) {
  std::vector<std::vector<Box>> gts{{Box{0, 0, 8, 8}}, {Box{0, 0, 8, 8}}, {Box{0, 0, 8, 8}}, {Box{0, 0, 8, 8}}};
  std::vector<std::vector<Detection>> p(4);
  p[0] = {det(0, 0, 8, 8, 0.95), det(40, 40, 8, 8, 0.9)};
  p[1] = {det(40, 40, 8, 8, 0.85), det(1, 1, 8, 8, 0.8), det(20, 20, 8, 8, 0.7)};
  p[2] = {det(40, 0, 8, 8, 0.6), det(0, 40, 8, 8, 0.5), det(0, 0, 9, 9, 0.3)};
  p[3] = {det(30, 30, 8, 8, 0.4)};
  const auto c = evaluate_froc(p, gts);
  EXPECT_DOUBLE_EQ(c.recall_at(0.5), 0.5);
  EXPECT_DOUBLE_EQ(c.recall_at(1.0), 0.5);
  EXPECT_DOUBLE_EQ(c.recall_at(2.0), 0.75);
  EXPECT_DOUBLE_EQ(c.recall_at(4.0), 0.75);
}

// One image, 2 masses; a duplicate hit and a weak overlap (IoU exactly 0.2
// does not count). Ranked: TP(a) .9, dup(a) .8, FP(IoU .2) .7, TP(b) .6.
// Points: (0, .5), (1, 1). R@0.5 = .75 by interpolation.
TEST(Froc, MicroCaseDuplicateAndThreshold) {
  const std::vector<std::vector<Box>> gts{{Box{0, 0, 10, 10}, Box{50, 0, 10, 10}}};
  // Box{50, 0, 10, 10} vs {50, 0, 10, 2}: IoU = 20 / 100 = 0.2.
  const auto c = evaluate_froc({{det(0, 0, 10, 10, 0.9), det(1, 0, 10, 10, 0.8), det(50, 0, 10, 2, 0.7),
                                 det(50, 0, 10, 10, 0.6)}},
                               gts);
  EXPECT_DOUBLE_EQ(c.recall_at(0.5), 0.75);
  EXPECT_DOUBLE_EQ(c.recall_at(1.0), 1.0);
  EXPECT_DOUBLE_EQ(c.recall_at(3.0), 1.0);
}

TEST(Froc, MonotoneOnRandomEvaluations) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(rng.integer(1, 6));
    std::vector<std::vector<Detection>> p(n);
    std::vector<std::vector<Box>> g(n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < rng.integer(0, 3); ++k) g[i].push_back({rng.uniform(0, 50), rng.uniform(0, 50), 10, 10});
      for (int k = 0; k < rng.integer(0, 8); ++k)
        p[i].push_back(det(rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(5, 15), rng.uniform(5, 15), rng.uniform()));
    }
    if (g[0].empty()) g[0].push_back({0, 0, 10, 10});
    const auto c = evaluate_froc(p, g);
    for (std::size_t i = 1; i < c.points.size(); ++i) EXPECT_GE(c.points[i].recall, c.points[i - 1].recall);
    for (std::size_t i = 1; i < c.raw.size(); ++i) {
      EXPECT_GT(c.raw[i].fpi, c.raw[i - 1].fpi);
      EXPECT_GE(c.raw[i].recall, c.raw[i - 1].recall);
    }
  }
}

TEST(Froc, CsvLayout) {
  const auto path = std::filesystem::temp_directory_path() / "agn_test_froc.csv";
  const auto c = evaluate_froc({{det(0, 0, 10, 10, 0.9)}}, {{Box{0, 0, 10, 10}}});
  write_froc_csv(path.string(), c);
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  EXPECT_EQ(ss.str(), "fpi,recall\n0.5,1\n1,1\n2,1\n3,1\n4,1\n");
  std::filesystem::remove(path);
}
