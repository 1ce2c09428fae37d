#pragma once

// Inception graph over bilateral (examined, contralateral) node sets of the
// same view type. Stacked node features put examined nodes first.

#include <algorithm>
#include <span>
#include <utility>
#include <vector>

#include "agn/landmarks.hpp"
#include "agn/numcore.hpp"

namespace agn {

struct CrossViewAdjacency {
  Matrix j;  // n x n, row i marks the s nearest contralateral nodes of node i
  int s = 0;
};

/// Both landmark sets must already be in canonical (mirrored) coordinates.
inline CrossViewAdjacency build_cross_adjacency(const LandmarkSet& lm_e, const LandmarkSet& lm_c, int s) {
  const std::size_t n = lm_e.count();
  if (lm_c.count() != n) fail("build_cross_adjacency: bilateral node counts differ (", n, " vs ", lm_c.count(), ")");
  if (s < 1 || static_cast<std::size_t>(s) > n) fail("build_cross_adjacency: s=", s, " must lie in [1, ", n, "]");
  CrossViewAdjacency out{Matrix(n, n), s};
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[j] = {squared_distance(lm_e.points[i], lm_c.points[j]), j};
    std::partial_sort(d.begin(), d.begin() + s, d.end());
    for (int t = 0; t < s; ++t) out.j(i, d[t].second) = 1.0;
  }
  return out;
}

/// [[M, J], [J^T, M]] with M = I (self-loops) or M = 0.
inline Matrix augment_inception(const CrossViewAdjacency& cv, bool self_loops = true) {
  const std::size_t n = cv.j.rows();
  Matrix jh(2 * n, 2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (self_loops) {
      jh(i, i) = 1.0;
      jh(n + i, n + i) = 1.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
      jh(i, n + j) = cv.j(i, j);
      jh(n + j, i) = cv.j(i, j);
    }
  }
  return jh;
}

struct IgnBranch {
  int s = 1;
  Param w;  // C x C
};

/// Branches of one inception layer.
using IgnBranchParams = std::vector<IgnBranch>;

inline void validate_branches(const IgnBranchParams& layer, std::size_t n_adjacency) {
  if (layer.empty()) fail("ign: layer has no branches");
  if (layer.size() != n_adjacency)
    fail("ign: ", layer.size(), " branch weights but ", n_adjacency, " adjacency matrices");
  for (std::size_t b = 1; b < layer.size(); ++b)
    if (layer[b].s <= layer[b - 1].s) fail("ign: branch sizes must be distinct and ascending");
}

/// Sum over branches of Ĵ_b X W_b.
inline Matrix ign_preactivation(const Matrix& x, const IgnBranchParams& layer, std::span<const Matrix> jhats) {
  validate_branches(layer, jhats.size());
  Matrix pre(x.rows(), x.cols());
  for (std::size_t b = 0; b < layer.size(); ++b) {
    const Matrix& w = layer[b].w.value;
    if (jhats[b].rows() != x.rows() || jhats[b].cols() != x.rows())
      fail("ign: adjacency ", b, " is ", jhats[b].rows(), "x", jhats[b].cols(), " for ", x.rows(), " nodes");
    if (w.rows() != x.cols() || w.cols() != x.cols()) fail("ign: branch weight '", layer[b].w.name, "' has wrong shape");
    pre += matmul(matmul(jhats[b], x), w);
  }
  return pre;
}

struct IgnCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;
};

/// Z <- sigmoid(sum_b Ĵ_b Z W_b), once per layer.
inline Matrix ign_forward(const Matrix& xi, const std::vector<IgnBranchParams>& layers, std::span<const Matrix> jhats,
                          IgnCache* cache = nullptr) {
  if (layers.empty()) fail("ign_forward: no layers");
  if (cache) *cache = {};
  Matrix z = xi;
  for (const auto& layer : layers) {
    Matrix out = sigmoid(ign_preactivation(z, layer, jhats));
    if (cache) {
      cache->inputs.push_back(std::move(z));
      cache->outputs.push_back(out);
    }
    z = std::move(out);
  }
  return z;
}

/// Accumulates branch weight gradients; returns dL/dX^I.
inline Matrix ign_backward(std::vector<IgnBranchParams>& layers, std::span<const Matrix> jhats, const IgnCache& cache,
                           const Matrix& d_out) {
  if (cache.inputs.size() != layers.size()) fail("ign_backward: cache does not match layer count");
  Matrix d = d_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix d_pre = sigmoid_backward(cache.outputs[l], d);
    Matrix dx(d.rows(), d.cols());
    for (std::size_t b = 0; b < layers[l].size(); ++b) {
      Param& w = layers[l][b].w;
      w.accumulate(matmul_tn(matmul(jhats[b], cache.inputs[l]), d_pre));
      dx += matmul_tn(jhats[b], matmul_nt(d_pre, w.value));
    }
    d = std::move(dx);
  }
  return d;
}

}  // namespace agn
