#include <gtest/gtest.h>

#include "agn/backbone.hpp"
#include "agn/head.hpp"
#include "test_util.hpp"

using namespace agn;
using agn::test::probe;
using agn::test::random_matrix;

namespace {

GrayImage random_image(Rng& rng, int w, int h) {
  GrayImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.integer(0, 255));
  return img;
}

}  // namespace

TEST(Conv, ZeroInputZeroBiasGivesZero) {
  Rng rng(1);
  Backbone bb;
  bb.init(rng);
  const FeatureMap f = bb.forward(GrayImage(16, 8, 100));  // flat image standardizes to zeros
  EXPECT_EQ(f.height, 2);
  EXPECT_EQ(f.width, 4);
  EXPECT_EQ(f.channels(), 16u);
  for (double v : f.values.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(bb.forward(GrayImage(10, 8)), Error);
}

TEST(Conv, HandComputedCenterTap) {
  // One channel, kernel with 1 at the centre tap and 0.5 at the right tap:
  // out(y, x) = relu(in(y, x) + 0.5 in(y, x + 1) - 1), zero padding.
  ConvLayer l{Param("w", 1, 9), Param("b", Matrix{{-1.0}}), 1};
  l.weight.value(0, 4) = 1.0;
  l.weight.value(0, 5) = 0.5;
  const Matrix in{{1}, {2}, {3}, {4}, {5}, {6}, {7}, {8}, {9}, {10}, {11}, {12}, {13}, {14}, {15}, {16}};
  const Matrix out = conv_forward(l, in, 4, 4, nullptr);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double v = in(y * 4 + x, 0) + (x < 3 ? 0.5 * in(y * 4 + x + 1, 0) : 0.0) - 1.0;
      EXPECT_DOUBLE_EQ(out(y * 4 + x, 0), std::max(0.0, v));
    }
  // Stride 2 samples the even positions.
  l.stride = 2;
  const Matrix s2 = conv_forward(l, in, 4, 4, nullptr);
  ASSERT_EQ(s2.rows(), 4u);
  EXPECT_DOUBLE_EQ(s2(0, 0), 1 + 1.0 - 1);
  EXPECT_DOUBLE_EQ(s2(3, 0), 11 + 6.0 - 1);
}

TEST(Conv, MatchesDirectLoop) {
  Rng rng(2);
  const int h = 5, w = 6, cin = 3, cout = 4;
  for (int stride : {1, 2}) {
    ConvLayer l{Param("w", random_matrix(rng, cout, 9 * cin)), Param("b", random_matrix(rng, 1, cout)), stride};
    const Matrix in = random_matrix(rng, h * w, cin);
    const Matrix out = conv_forward(l, in, h, w, nullptr);
    const int oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
    for (int yo = 0; yo < oh; ++yo)
      for (int xo = 0; xo < ow; ++xo)
        for (int o = 0; o < cout; ++o) {
          double acc = l.bias.value(0, o);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int y = yo * stride + ky - 1, x = xo * stride + kx - 1;
              if (y < 0 || y >= h || x < 0 || x >= w) continue;
              for (int c = 0; c < cin; ++c) acc += in(y * w + x, c) * l.weight.value(o, (ky * 3 + kx) * cin + c);
            }
          EXPECT_NEAR(out(yo * ow + xo, o), std::max(0.0, acc), 1e-12);
        }
  }
}

TEST(Backbone, GradientsOn8x8) {
  Rng rng(3);
  Backbone bb(BackboneConfig{{3, 4, 4}, {1, 2, 2}});
  bb.init(rng);
  for (Param* p : bb.params())
    for (double& v : p->value.values()) v += rng.uniform(0.01, 0.05);  // keep units active
  const GrayImage img = random_image(rng, 8, 8);
  const Matrix r = random_matrix(rng, 4, 4);
  auto loss = [&](bool grads) {
    BackboneCache cache;
    const FeatureMap f = bb.forward(img, &cache);
    if (grads) bb.backward(cache, r);
    return probe(r, f.values);
  };
  agn::test::expect_grads_pass(loss, bb.params());
}

TEST(Head, ZeroWeightsGiveHalfScoresAndBaseBoxes) {
  Head head(4);
  const Matrix out = head.forward(Matrix(6, 4));
  for (std::size_t p = 0; p < 6; ++p) {
    EXPECT_EQ(sigmoid(out(p, 0)), 0.5);
    for (std::size_t k = 1; k < kHeadOutputs; ++k) EXPECT_EQ(out(p, k), 0.0);
  }
  const HeadConfig cfg{8.0, 4, 3, 2};
  const auto dets = decode_detections(out, cfg, 12, 8, {6, 1.0, 20});
  ASSERT_EQ(dets.size(), 6u);
  for (const auto& d : dets) {
    EXPECT_EQ(d.score, 0.5);
    EXPECT_EQ(d.box.w + d.box.h > 0, true);
  }
  // Cell 0 has its base box centred at (2, 2), clipped at the image border.
  EXPECT_EQ(cfg.base_box(0).x, -2.0);
  EXPECT_EQ(cfg.base_box(4).x, 2.0);
  EXPECT_EQ(cfg.base_box(4).y, 2.0);
  EXPECT_THROW(head.forward(Matrix(6, 3)), Error);
}

TEST(Head, GradientsIncludingLoss) {
  Rng rng(4);
  Head head(3);
  head.init(rng);
  head.b.value = random_matrix(rng, 1, kHeadOutputs);
  Param y("y", random_matrix(rng, 12, 3));
  const HeadConfig cfg{6.0, 2, 4, 3};
  const std::vector<Box> gts{{1.0, 1.0, 5.0, 7.0}};
  const auto targets = assign_targets(cfg, gts);
  auto loss = [&](bool grads) {
    const Matrix out = head.forward(y.value);
    const HeadLoss l = head_loss(out, targets, 0.7);
    if (grads) y.accumulate(head.backward(y.value, l.d_out));
    return l.loss;
  };
  Param* params[] = {&head.w, &head.b, &y};
  agn::test::expect_grads_pass(loss, params);
}

TEST(Head, TargetsAndBalancedLoss) {
  const HeadConfig cfg{8.0, 4, 4, 4};
  const std::vector<Box> gts{{2.0, 2.0, 8.0, 8.0}};  // exactly the base box of cell 5
  const auto t = assign_targets(cfg, gts);
  ASSERT_TRUE(t[5].positive);
  for (double o : t[5].offsets) EXPECT_EQ(o, 0.0);
  std::size_t n_pos = 0;
  for (std::size_t c = 0; c < t.size(); ++c)
    if (t[c].positive) {
      ++n_pos;
      EXPECT_GT(iou(cfg.base_box(c), gts[0]), kHitIou);
    }
  EXPECT_GE(n_pos, 1u);
  // Zero outputs: each class half contributes log 2 / 2.
  Matrix out(16, kHeadOutputs);
  const HeadLoss l = head_loss(out, t, 0.0);
  EXPECT_NEAR(l.cls, std::log(2.0), 1e-12);
  EXPECT_EQ(l.box, 0.0);
}

TEST(Head, OverfitSingleCellBecomesTopDetection) {
  Rng rng(5);
  Head head(4);
  head.init(rng);
  Matrix y(16, 4);
  y(9, 2) = 1.0;  // the only hot cell
  const HeadConfig cfg{8.0, 4, 4, 4};
  const std::vector<Box> gts{{3.0, 5.0, 8.0, 10.0}};  // near the base box of cell 9
  const auto t = assign_targets(cfg, gts);
  auto params = head.params();
  for (int step = 0; step < 300; ++step) {
    const HeadLoss l = head_loss(head.forward(y), t);
    head.backward(y, l.d_out);
    sgd_step(params, {0.5, 0.0, 0.9, true});
  }
  const auto dets = decode_detections(head.forward(y), cfg, 16, 16);
  ASSERT_FALSE(dets.empty());
  EXPECT_GT(iou(dets[0].box, gts[0]), 0.5);
  EXPECT_GT(dets[0].score, 0.5);
}
