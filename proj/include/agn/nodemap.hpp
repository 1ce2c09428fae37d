#pragma once

// kNN mappings between a pixel grid and graph nodes. Each pixel is linked to
// its k nearest landmarks; pooling averages a node's pixels, broadcasting
// averages a pixel's nodes.

#include <algorithm>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "agn/landmarks.hpp"
#include "agn/numcore.hpp"

namespace agn {

/// Sparse binary A (HW x |V|): neighbors[i*k .. i*k+k) are the k node indices
/// of pixel i, nearest first.
struct AssignmentMatrix {
  int height = 0;
  int width = 0;
  int k = 0;
  int n_nodes = 0;
  std::vector<int> neighbors;

  [[nodiscard]] int pixels() const noexcept { return height * width; }
  [[nodiscard]] const int* row(int pixel) const noexcept { return neighbors.data() + static_cast<std::size_t>(pixel) * k; }

  [[nodiscard]] Matrix dense() const {
    Matrix a(pixels(), n_nodes);
    for (int i = 0; i < pixels(); ++i)
      for (int t = 0; t < k; ++t) a(i, row(i)[t]) = 1.0;
    return a;
  }

  /// Pixel count per node (diagonal of Λ^f).
  [[nodiscard]] std::vector<int> region_sizes() const {
    std::vector<int> n(n_nodes, 0);
    for (int j : neighbors) ++n[j];
    return n;
  }
};

/// Pixel centers (x+0.5, y+0.5) of an h x w grid against node positions given
/// in the same coordinates.
inline AssignmentMatrix build_assignment(const std::vector<Point2>& nodes, int h, int w, int k) {
  const int v = static_cast<int>(nodes.size());
  if (v < 1) fail("build_assignment: no nodes");
  if (k < 1 || k > v) fail("build_assignment: k=", k, " must lie in [1, ", v, "]");
  if (h < 1 || w < 1) fail("build_assignment: empty grid ", h, "x", w);
  AssignmentMatrix a{h, w, k, v, {}};
  a.neighbors.resize(static_cast<std::size_t>(h) * w * k);
  // Running top-k by (distance, index); insertion keeps it sorted.
  std::vector<std::pair<double, int>> best(k);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Point2 c{x + 0.5, y + 0.5};
      int filled = 0;
      for (int j = 0; j < v; ++j) {
        const std::pair<double, int> cand{squared_distance(c, nodes[j]), j};
        if (filled == k && !(cand < best[k - 1])) continue;
        int pos = filled < k ? filled++ : k - 1;
        while (pos > 0 && cand < best[pos - 1]) {
          best[pos] = best[pos - 1];
          --pos;
        }
        best[pos] = cand;
      }
      int* out = a.neighbors.data() + (static_cast<std::size_t>(y) * w + x) * k;
      for (int t = 0; t < k; ++t) out[t] = best[t].second;
    }
  return a;
}

/// Landmarks given at image resolution, grid at feature resolution
/// (image size / stride).
inline AssignmentMatrix build_assignment(const LandmarkSet& lm, int h, int w, int k, double stride = 1.0) {
  if (stride <= 0.0) fail("build_assignment: stride must be positive");
  std::vector<Point2> nodes = lm.points;
  for (auto& p : nodes) {
    p.x /= stride;
    p.y /= stride;
  }
  return build_assignment(nodes, h, w, k);
}

/// φ_k: node features are the mean of their region's pixel features.
class ForwardMap {
 public:
  explicit ForwardMap(AssignmentMatrix a) : a_(std::move(a)), inv_size_(a_.n_nodes) {
    const auto sizes = a_.region_sizes();
    for (int j = 0; j < a_.n_nodes; ++j) {
      if (sizes[j] == 0) fail("ForwardMap: empty node region for node ", j);
      inv_size_[j] = 1.0 / sizes[j];
    }
  }

  [[nodiscard]] const AssignmentMatrix& assignment() const noexcept { return a_; }

  /// F (HW x C) -> X (|V| x C).
  [[nodiscard]] Matrix apply(const Matrix& f) const {
    check(f.rows(), "apply");
    Matrix x(a_.n_nodes, f.cols());
    for (int i = 0; i < a_.pixels(); ++i) {
      const auto fi = f.row(i);
      for (int t = 0; t < a_.k; ++t) {
        const int j = a_.row(i)[t];
        auto xj = x.row(j);
        for (std::size_t c = 0; c < fi.size(); ++c) xj[c] += fi[c];
      }
    }
    for (int j = 0; j < a_.n_nodes; ++j)
      for (auto& e : x.row(j)) e *= inv_size_[j];
    return x;
  }

  /// dX (|V| x C) -> dF (HW x C).
  [[nodiscard]] Matrix backward(const Matrix& dx) const {
    if (dx.rows() != static_cast<std::size_t>(a_.n_nodes)) fail("ForwardMap::backward: expected ", a_.n_nodes, " rows, got ", dx.rows());
    Matrix df(a_.pixels(), dx.cols());
    for (int i = 0; i < a_.pixels(); ++i) {
      auto dfi = df.row(i);
      for (int t = 0; t < a_.k; ++t) {
        const int j = a_.row(i)[t];
        const auto dxj = dx.row(j);
        for (std::size_t c = 0; c < dfi.size(); ++c) dfi[c] += dxj[c] * inv_size_[j];
      }
    }
    return df;
  }

  /// Q^f = A (Λ^f)^-1.
  [[nodiscard]] Matrix dense() const {
    Matrix q = a_.dense();
    for (std::size_t i = 0; i < q.rows(); ++i)
      for (std::size_t j = 0; j < q.cols(); ++j) q(i, j) *= inv_size_[j];
    return q;
  }

 private:
  void check(std::size_t rows, const char* what) const {
    if (rows != static_cast<std::size_t>(a_.pixels()))
      fail("ForwardMap::", what, ": expected ", a_.pixels(), " pixel rows, got ", rows);
  }

  AssignmentMatrix a_;
  std::vector<double> inv_size_;
};

/// Contiguous slice of a stacked node-feature matrix.
struct NodeRange {
  int begin = 0;
  int count = 0;
};

/// ψ_k: each pixel receives the mean of its k nodes' features.
class ReverseMap {
 public:
  explicit ReverseMap(AssignmentMatrix a) : a_(std::move(a)), inv_k_(1.0 / a_.k) {}

  [[nodiscard]] const AssignmentMatrix& assignment() const noexcept { return a_; }

  /// Z (stacked nodes x C), selector picks this view's rows -> HW x C.
  [[nodiscard]] Matrix apply(const Matrix& z, NodeRange sel) const {
    check(z, sel);
    Matrix f(a_.pixels(), z.cols());
    for (int i = 0; i < a_.pixels(); ++i) {
      auto fi = f.row(i);
      for (int t = 0; t < a_.k; ++t) {
        const auto zj = z.row(sel.begin + a_.row(i)[t]);
        for (std::size_t c = 0; c < fi.size(); ++c) fi[c] += inv_k_ * zj[c];
      }
    }
    return f;
  }

  [[nodiscard]] Matrix apply(const Matrix& z) const { return apply(z, {0, static_cast<int>(z.rows())}); }

  /// dF (HW x C) -> dZ with the shape of the stacked input; rows outside the
  /// selector receive zero.
  [[nodiscard]] Matrix backward(const Matrix& df, std::size_t z_rows, NodeRange sel) const {
    if (df.rows() != static_cast<std::size_t>(a_.pixels()))
      fail("ReverseMap::backward: expected ", a_.pixels(), " rows, got ", df.rows());
    if (sel.begin < 0 || sel.count != a_.n_nodes || static_cast<std::size_t>(sel.begin + sel.count) > z_rows)
      fail("ReverseMap::backward: bad selector");
    Matrix dz(z_rows, df.cols());
    for (int i = 0; i < a_.pixels(); ++i) {
      const auto dfi = df.row(i);
      for (int t = 0; t < a_.k; ++t) {
        auto dzj = dz.row(sel.begin + a_.row(i)[t]);
        for (std::size_t c = 0; c < dfi.size(); ++c) dzj[c] += inv_k_ * dfi[c];
      }
    }
    return dz;
  }

  /// Q^r = (Λ^r)^-1 A.
  [[nodiscard]] Matrix dense() const {
    Matrix q = a_.dense();
    q *= inv_k_;
    return q;
  }

 private:
  void check(const Matrix& z, NodeRange sel) const {
    if (sel.begin < 0 || sel.count < 0 || static_cast<std::size_t>(sel.begin + sel.count) > z.rows())
      fail("ReverseMap: selector [", sel.begin, ", ", sel.begin + sel.count, ") out of range for ", z.rows(), " nodes");
    if (sel.count != a_.n_nodes)
      fail("ReverseMap: selector covers ", sel.count, " nodes, map expects ", a_.n_nodes);
  }

  AssignmentMatrix a_;
  double inv_k_;
};

/// Triplet export, one "pixel node" pair per line.
inline void write_assignment_triplets(const std::string& path, const AssignmentMatrix& a) {
  std::ofstream os(path);
  if (!os) fail("write_assignment_triplets: cannot open '", path, "'");
  os << "# assignment " << a.height << 'x' << a.width << " k=" << a.k << " nodes=" << a.n_nodes << '\n';
  for (int i = 0; i < a.pixels(); ++i)
    for (int t = 0; t < a.k; ++t) os << i << ' ' << a.row(i)[t] << '\n';
}

}  // namespace agn
