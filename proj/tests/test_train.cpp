#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "agn/train.hpp"
#include "fixture.hpp"

using namespace agn;
using agn::test::tiny;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Train, OneCaseOverfitsWithin200Steps) {
  Detector det(tiny().cfg, Mode::single_view, tiny().hg);
  det.init(1);
  TrainOptions opt;
  opt.epochs = 200;
  opt.batch_size = 1;
  const auto rep = train(det, {tiny().train.front()}, opt);
  ASSERT_EQ(rep.step_losses.size(), 200u);
  EXPECT_LT(rep.step_losses.back(), 0.05);
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  const auto dir = std::filesystem::temp_directory_path();
  std::vector<const Sample*> few(tiny().train.begin(), tiny().train.begin() + 3);
  std::string text[2];
  for (int run = 0; run < 2; ++run) {
    Detector det(tiny().cfg, Mode::full_agn, tiny().hg);
    det.init(4);
    TrainOptions opt;
    opt.epochs = 2;
    opt.seed = 4;
    train(det, few, opt);
    const auto path = dir / ("agn_test_ckpt" + std::to_string(run) + ".txt");
    det.save(path.string());
    text[run] = slurp(path);
    std::filesystem::remove(path);
  }
  EXPECT_FALSE(text[0].empty());
  EXPECT_EQ(text[0], text[1]);
}

TEST(Train, CheckpointRoundTripReproducesDetections) {
  const auto path = std::filesystem::temp_directory_path() / "agn_test_ckpt_rt.txt";
  Detector det(tiny().cfg, Mode::bgn_only, tiny().hg);
  det.init(2);
  det.save(path.string());
  const Detector back = load_detector(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.mode(), Mode::bgn_only);
  const Sample& s = *tiny().train.front();
  const auto a = det.detect(s), b = back.detect(s);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_EQ(a[i].box.x, b[i].box.x);
  }
}

TEST(Train, RejectsBadOptionsAndNonFiniteLoss) {
  Detector det(tiny().cfg, Mode::single_view, tiny().hg);
  det.init(1);
  TrainOptions opt;
  EXPECT_THROW(train(det, {}, opt), Error);
  opt.batch_size = 0;
  EXPECT_THROW(train(det, tiny().train, opt), Error);
  opt.batch_size = 1;
  opt.epochs = 1;
  det.head().b.value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train(det, {tiny().train.front()}, opt);
    FAIL() << "NaN loss not reported";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(tiny().train.front()->case_id), std::string::npos);
  }
}

TEST(Evaluate, SummaryAndDeterministicParallelism) {
  Detector det(tiny().cfg, Mode::ign_only, tiny().hg);
  det.init(3);
  const auto all = tiny().data.split("train");
  const auto one = evaluate(det, all, 1), two = evaluate(det, all, 2);
  ASSERT_EQ(one.froc.points.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(one.froc.points[i].recall, two.froc.points[i].recall);
  const std::string s = summary_text(Mode::ign_only, 3, one.froc);
  EXPECT_EQ(s.rfind("mode ign_only\nseed 3\nR@0.5 ", 0), 0u);
  EXPECT_NE(s.find("\nR@4 "), std::string::npos);
}

TEST(Dataset, GeometricGraphAndBaseSideFromTrainSplit) {
  const auto& t = tiny();
  EXPECT_EQ(t.data.samples.size() + t.data.warnings.size(), 10u);
  EXPECT_GE(t.train.size(), 6u);
  EXPECT_EQ(t.hg.rows(), static_cast<std::size_t>(LandmarkConfig::cc_default().expected_count()));
  EXPECT_EQ(t.hg.cols(), static_cast<std::size_t>(LandmarkConfig::mlo_default().expected_count()));
  EXPECT_GT(sum(t.hg), 0.0);
  const PhantomConfig pc;
  EXPECT_GE(t.cfg.base_side, 2.0 * pc.mass_radius_range.min);
  EXPECT_LE(t.cfg.base_side, 2.0 * pc.mass_radius_range.max);
}
