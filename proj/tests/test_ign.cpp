#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "agn/ign.hpp"
#include "test_util.hpp"

using namespace agn;
using agn::test::probe;
using agn::test::random_matrix;

namespace {

LandmarkSet random_landmarks(Rng& rng, int n) {
  LandmarkSet lm;
  for (int i = 0; i < n; ++i) {
    lm.points.push_back({rng.uniform(0, 100), rng.uniform(0, 100)});
    lm.line_index.push_back(0);
  }
  return lm;
}

IgnBranchParams branches(Rng& rng, std::initializer_list<int> sizes, std::size_t c, const std::string& prefix) {
  IgnBranchParams layer;
  for (int s : sizes) layer.push_back({s, Param(prefix + ".s" + std::to_string(s), random_matrix(rng, c, c))});
  return layer;
}

}  // namespace

TEST(CrossAdjacency, IdentityAndFull) {
  Rng rng(1);
  const LandmarkSet lm = random_landmarks(rng, 6);
  EXPECT_EQ(build_cross_adjacency(lm, lm, 1).j, Matrix::identity(6));
  Matrix ones(6, 6);
  ones.fill(1.0);
  EXPECT_EQ(build_cross_adjacency(lm, lm, 6).j, ones);
  EXPECT_THROW(build_cross_adjacency(lm, lm, 7), Error);
  EXPECT_THROW(build_cross_adjacency(lm, random_landmarks(rng, 5), 1), Error);
}

TEST(CrossAdjacency, MatchesFullSort) {
  Rng rng(2);
  const LandmarkSet e = random_landmarks(rng, 12);
  LandmarkSet c = e;
  for (auto& p : c.points) p = {p.x + rng.uniform(-4, 4), p.y + rng.uniform(-4, 4)};
  const CrossViewAdjacency cv = build_cross_adjacency(e, c, 3);
  for (std::size_t i = 0; i < 12; ++i) {
    std::vector<std::size_t> idx(12);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return squared_distance(e.points[i], c.points[a]) < squared_distance(e.points[i], c.points[b]);
    });
    double row = 0.0;
    for (std::size_t j = 0; j < 12; ++j) {
      const bool in = std::find(idx.begin(), idx.begin() + 3, j) != idx.begin() + 3;
      EXPECT_EQ(cv.j(i, j), in ? 1.0 : 0.0) << i << "," << j;
      row += cv.j(i, j);
    }
    EXPECT_EQ(row, 3.0);
  }
}

TEST(AugmentInception, Cases) {
  EXPECT_EQ(augment_inception({Matrix{{1.0}}, 1}), (Matrix{{1.0, 1.0}, {1.0, 1.0}}));
  EXPECT_EQ(augment_inception({Matrix(3, 3), 0}), Matrix::identity(6));
  EXPECT_EQ(augment_inception({Matrix{{1.0}}, 1}, false), (Matrix{{0.0, 1.0}, {1.0, 0.0}}));
  Rng rng(3);
  const LandmarkSet a = random_landmarks(rng, 8), b = random_landmarks(rng, 8);
  for (int s : {1, 3, 5}) {
    const Matrix jh = augment_inception(build_cross_adjacency(a, b, s));
    EXPECT_EQ(jh, transpose(jh));
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_EQ(jh(i, i), 1.0);
      EXPECT_EQ(std::accumulate(jh.row(i).begin(), jh.row(i).end(), 0.0), 1.0 + s);
    }
  }
}

TEST(IgnForward, HandCases) {
  IgnBranchParams one{{1, Param("w", Matrix(1, 1))}};
  std::vector<IgnBranchParams> layers{one};
  const Matrix id = Matrix::identity(2);
  const Matrix z0 = ign_forward(Matrix{{2.0}, {-1.0}}, layers, std::span(&id, 1));
  for (double v : z0.values()) EXPECT_EQ(v, 0.5);

  layers[0][0].w.value = Matrix{{1.0}};
  const Matrix jh = augment_inception({Matrix{{1.0}}, 1});
  const double a = 0.4, b = -1.1;
  const Matrix z = ign_forward(Matrix{{a}, {b}}, layers, std::span(&jh, 1));
  EXPECT_DOUBLE_EQ(z(0, 0), sigmoid(a + b));
  EXPECT_DOUBLE_EQ(z(1, 0), sigmoid(a + b));
}

TEST(IgnForward, BranchAdditivity) {
  Rng rng(4);
  const std::size_t c = 3;
  const LandmarkSet e = random_landmarks(rng, 5), k = random_landmarks(rng, 5);
  const Matrix j1 = augment_inception(build_cross_adjacency(e, k, 1));
  const Matrix j3 = augment_inception(build_cross_adjacency(e, k, 3));
  const Matrix j5 = augment_inception(build_cross_adjacency(e, k, 5));
  const Matrix x = random_matrix(rng, 10, c);
  const Matrix w = random_matrix(rng, c, c);

  // Same adjacency twice with weights W and 0 equals one branch with W.
  IgnBranchParams pair{{1, Param("a", w)}, {2, Param("b", Matrix(c, c))}};
  IgnBranchParams single{{1, Param("a", w)}};
  const Matrix twice[] = {j1, j1};
  EXPECT_EQ(ign_preactivation(x, pair, twice), ign_preactivation(x, single, std::span(&j1, 1)));

  // Multi-branch pre-activation is the sum of per-branch ones.
  const IgnBranchParams multi = branches(rng, {1, 3, 5}, c, "m");
  const Matrix all[] = {j1, j3, j5};
  Matrix parts(10, c);
  for (std::size_t b = 0; b < 3; ++b) parts += ign_preactivation(x, IgnBranchParams{multi[b]}, std::span(&all[b], 1));
  EXPECT_LT(max_abs_diff(ign_preactivation(x, multi, all), parts), 1e-12);

  std::vector<IgnBranchParams> layers{multi, multi};
  const Matrix z = ign_forward(x, layers, all);
  for (double v : z.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(IgnForward, RejectsMisalignedBranches) {
  Rng rng(5);
  const IgnBranchParams layer = branches(rng, {1, 3}, 2, "x");
  const Matrix jh = Matrix::identity(4);
  EXPECT_THROW(ign_forward(random_matrix(rng, 4, 2), {layer}, std::span(&jh, 1)), Error);
  IgnBranchParams unordered = branches(rng, {3, 1}, 2, "y");
  const Matrix two[] = {jh, jh};
  EXPECT_THROW(ign_forward(random_matrix(rng, 4, 2), {unordered}, two), Error);
}

TEST(IgnGradients, PassCentralDifferences) {
  Rng rng(6);
  const std::size_t c = 3, n = 4;
  const LandmarkSet e = random_landmarks(rng, n), k = random_landmarks(rng, n);
  const Matrix jh[] = {augment_inception(build_cross_adjacency(e, k, 1)),
                       augment_inception(build_cross_adjacency(e, k, 3))};
  std::vector<IgnBranchParams> layers{branches(rng, {1, 3}, c, "l1"), branches(rng, {1, 3}, c, "l2")};
  Param x("x", random_matrix(rng, 2 * n, c));
  const Matrix r = random_matrix(rng, 2 * n, c);
  auto loss = [&](bool grads) {
    IgnCache cache;
    const Matrix z = ign_forward(x.value, layers, jh, &cache);
    if (grads) x.accumulate(ign_backward(layers, jh, cache, r));
    return probe(r, z);
  };
  std::vector<Param*> params{&x};
  for (auto& l : layers)
    for (auto& b : l) params.push_back(&b.w);
  agn::test::expect_grads_pass(loss, params);
}
