#include <gtest/gtest.h>

#include "agn/train.hpp"
#include "fixture.hpp"
#include "test_util.hpp"

using namespace agn;
using agn::test::random_matrix;
using agn::test::tiny;

namespace {

Matrix run(Detector& d, const Sample& s, const Wiring& w = {}) {
  return d.forward(s, d.level_graph(s), w, false).out;
}

Detector make(Mode m, std::uint64_t seed = 7) {
  Detector d(tiny().cfg, m, tiny().hg);
  d.init(seed);
  return d;
}

LandmarkSet random_landmarks(Rng& rng, int n, double size) {
  LandmarkSet lm;
  for (int i = 0; i < n; ++i) {
    lm.points.push_back({rng.uniform(0, size), rng.uniform(0, size)});
    lm.line_index.push_back(0);
  }
  return lm;
}

}  // namespace

TEST(ModeWiring, SingleViewEqualsFullWithGraphAndAttentionCut) {
  Detector single = make(Mode::single_view), full = make(Mode::full_agn);
  const Wiring cut{.bgn_zero = true, .attention_one = true};
  for (const Sample* s : tiny().train) EXPECT_EQ(run(single, *s), run(full, *s, cut)) << s->case_id;
}

TEST(ModeWiring, BgnOnlyEqualsFullWithAttentionOne) {
  Detector bgn = make(Mode::bgn_only), full = make(Mode::full_agn);
  for (const Sample* s : tiny().train) EXPECT_EQ(run(bgn, *s), run(full, *s, {.attention_one = true})) << s->case_id;
}

TEST(ModeWiring, IgnOnlyEqualsFullWithFbZero) {
  Detector ign = make(Mode::ign_only), full = make(Mode::full_agn);
  // Share the F_e half of W_f; the F_B half is arbitrary.
  Matrix& wf = full.agn().p().wf.value;
  const Matrix& w1 = ign.agn().p().wf.value;
  for (std::size_t o = 0; o < w1.rows(); ++o)
    for (std::size_t k = 0; k < w1.cols(); ++k) wf(o, k) = w1(o, k);
  for (const Sample* s : tiny().train) EXPECT_EQ(run(ign, *s), run(full, *s, {.fb_zero = true})) << s->case_id;
}

TEST(ModeWiring, FusionFormulasHoldBitForBit) {
  const Sample& s = *tiny().train.front();
  for (Mode m : {Mode::bgn_only, Mode::ign_only, Mode::full_agn}) {
    Detector d = make(m);
    const auto f = d.forward(s, d.level_graph(s), {}, false);
    const Matrix& wf = d.agn().p().wf.value;
    // The AGN output is recomputed from the pass's own intermediate maps.
    const LevelGraph g = d.level_graph(s);
    LevelCache k;
    const LevelInputs in{&f.fe.values, f.have_a ? &f.fa.values : nullptr, f.have_c ? &f.fc.values : nullptr};
    const Matrix y = d.agn().forward(g, s.examined_view, in, {}, &k);
    EXPECT_EQ(y, f.y);
    Matrix want;
    if (m == Mode::bgn_only) want = enhance_bgn_only(f.fe.values, k.fb, wf);
    if (m == Mode::ign_only) want = enhance_ign_only(f.fe.values, k.fhat, wf);
    if (m == Mode::full_agn) want = enhance_full(f.fe.values, k.fb, k.fhat, wf);
    EXPECT_EQ(y, want) << to_string(m);
  }
}

TEST(ModeWiring, StepForStepLossesMatch) {
  std::vector<const Sample*> few(tiny().train.begin(), tiny().train.begin() + 3);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 1;
  Detector single = make(Mode::single_view), full = make(Mode::full_agn);
  const auto a = train(single, few, opt);
  opt.wiring = {.bgn_zero = true, .attention_one = true};
  const auto b = train(full, few, opt);
  ASSERT_EQ(a.step_losses.size(), 6u);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_GT(a.step_losses.front(), a.step_losses.back());
}

TEST(PerLevel, OneLevelIsTheSinglePass) {
  const Sample& s = *tiny().train.front();
  Detector d = make(Mode::full_agn);
  const auto f = d.forward(s, d.level_graph(s), {}, false);
  const LevelGraph g = d.level_graph(s);
  const LevelInputs in{&f.fe.values, &f.fa.values, &f.fc.values};
  const auto ys = d.agn().enhance_per_level(std::span(&g, 1), s.examined_view, std::span(&in, 1), {});
  ASSERT_EQ(ys.size(), 1u);
  EXPECT_EQ(ys[0], f.y);

  // Two identical levels give two identical outputs.
  const LevelGraph gs[] = {g, g};
  const LevelInputs ins[] = {in, in};
  const auto two = d.agn().enhance_per_level(gs, s.examined_view, ins, {});
  EXPECT_EQ(two[0], f.y);
  EXPECT_EQ(two[1], f.y);
}

TEST(PerLevel, FinerLevelUsesItsOwnMaps) {
  const Sample& s = *tiny().train.front();
  Detector d = make(Mode::full_agn);
  Rng rng(3);
  const int st = d.backbone().total_stride();
  const int h = s.examined.height / st, w = s.examined.width / st;
  const std::size_t c = static_cast<std::size_t>(d.backbone().out_channels());
  const LevelGraph coarse = build_level_graph(s.landmarks, h, w, st, d.config());
  const LevelGraph fine = build_level_graph(s.landmarks, 2 * h, 2 * w, st / 2.0, d.config());
  const Matrix fe1 = random_matrix(rng, h * w, c), fa1 = random_matrix(rng, h * w, c), fc1 = random_matrix(rng, h * w, c);
  const Matrix fe2 = random_matrix(rng, 4 * h * w, c), fa2 = random_matrix(rng, 4 * h * w, c),
               fc2 = random_matrix(rng, 4 * h * w, c);
  const LevelGraph gs[] = {coarse, fine};
  const LevelInputs ins[] = {{&fe1, &fa1, &fc1}, {&fe2, &fa2, &fc2}};
  const auto ys = d.agn().enhance_per_level(gs, s.examined_view, ins, {});
  ASSERT_EQ(ys[1].rows(), static_cast<std::size_t>(4 * h * w));
  EXPECT_EQ(ys[0], d.agn().forward(coarse, s.examined_view, ins[0], {}));
  EXPECT_EQ(ys[1], d.agn().forward(fine, s.examined_view, ins[1], {}));
  const Matrix narrow(4 * h * w, c - 1);
  const LevelInputs bad[] = {ins[0], {&narrow, &fa2, &fc2}};
  EXPECT_THROW(d.agn().enhance_per_level(gs, s.examined_view, bad, {}), Error);
}

TEST(EndToEnd, GradientsOn16x16Toy) {
  Rng rng(9);
  ModelConfig cfg;
  cfg.backbone = BackboneConfig{{3, 4, 4}, {1, 2, 2}};
  cfg.ign_branches = {1, 3};
  cfg.bgn_k = 2;
  cfg.base_side = 6.0;
  const Matrix hg = random_matrix(rng, 3, 4, 0.0, 0.5);

  for (ViewType ev : {ViewType::CC, ViewType::MLO}) {
    Sample s;
    s.examined_view = ev;
    for (GrayImage* img : {&s.examined, &s.auxiliary, &s.contralateral}) {
      *img = GrayImage(16, 16);
      for (auto& p : img->pixels) p = static_cast<std::uint8_t>(rng.integer(0, 255));
    }
    const int n_e = ev == ViewType::CC ? 3 : 4, n_a = 7 - n_e;
    s.landmarks = {random_landmarks(rng, n_e, 16), random_landmarks(rng, n_a, 16), random_landmarks(rng, n_e, 16)};
    s.gts = {{4.0, 5.0, 6.0, 6.0}};

    Detector det(cfg, Mode::full_agn, hg);
    det.init(5);
    for (Param* p : det.backbone().params())
      for (double& v : p->value.values()) v += rng.uniform(0.01, 0.05);
    // At zero head bias the balanced class gradient cancels to round-off.
    det.head().w.value = random_matrix(rng, kHeadOutputs, 4);
    det.head().b.value = random_matrix(rng, 1, kHeadOutputs);
    // Larger attention weights keep the IGN gradients well above round-off.
    det.agn().p().wi.value = random_matrix(rng, 4, 1, -2.0, 2.0);
    const auto targets = assign_targets(det.head_config(s.examined), s.gts);
    auto loss = [&](bool grads) {
      if (grads) return det.accumulate(s, {}).loss;
      const auto f = det.forward(s, det.level_graph(s), {}, false);
      return head_loss(f.out, targets).loss;
    };
    // Some entries are ~1e-6 in size; a wider step keeps round-off below them.
    agn::test::expect_grads_pass(loss, det.params(), 1e-4, 1e-5);
  }
}
