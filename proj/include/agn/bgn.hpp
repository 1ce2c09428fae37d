#pragma once

// Bipartite graph over ipsilateral (CC, MLO) node sets. H is always indexed
// (CC, MLO); stacked node features put CC nodes first.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agn/landmarks.hpp"
#include "agn/numcore.hpp"
#include "agn/types.hpp"

namespace agn {

/// One mass instance with its box in each ipsilateral view (if annotated).
struct LinkedMass {
  std::string instance_id;
  std::optional<Box> cc;
  std::optional<Box> mlo;
};

/// Co-occurrence counts of mass-bearing node pairs, |V_CC| x |V_MLO|.
struct FrequencyMatrix {
  Matrix eps;
};

inline int nearest_node(const LandmarkSet& lm, Point2 p) {
  if (lm.count() == 0) fail("nearest_node: empty landmark set");
  int best = 0;
  double best_d = squared_distance(p, lm.points[0]);
  for (std::size_t j = 1; j < lm.count(); ++j) {
    const double d = squared_distance(p, lm.points[j]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

/// Adds one count per fully linked mass of a single case.
inline void accumulate_mass_links(FrequencyMatrix& f, const std::vector<LinkedMass>& masses, const LandmarkSet& lm_cc,
                                  const LandmarkSet& lm_mlo, Warnings* warnings = nullptr) {
  if (f.eps.rows() != lm_cc.count() || f.eps.cols() != lm_mlo.count())
    fail("accumulate_mass_links: frequency matrix is ", f.eps.rows(), "x", f.eps.cols(), " but landmarks give ",
         lm_cc.count(), "x", lm_mlo.count());
  for (const auto& m : masses) {
    if (!m.cc || !m.mlo) {
      if (warnings) warnings->push_back("mass '" + m.instance_id + "' lacks one ipsilateral view; skipped");
      continue;
    }
    f.eps(nearest_node(lm_cc, m.cc->center()), nearest_node(lm_mlo, m.mlo->center())) += 1.0;
  }
}

inline FrequencyMatrix accumulate_mass_links(const std::vector<LinkedMass>& masses, const LandmarkSet& lm_cc,
                                             const LandmarkSet& lm_mlo, Warnings* warnings = nullptr) {
  FrequencyMatrix f{Matrix(lm_cc.count(), lm_mlo.count())};
  accumulate_mass_links(f, masses, lm_cc, lm_mlo, warnings);
  return f;
}

/// H^g_ij = eps_ij / sqrt(D_i. * D_.j), with 0/0 taken as 0.
inline Matrix normalize_geometric(const FrequencyMatrix& f) {
  const Matrix& e = f.eps;
  std::vector<double> row(e.rows(), 0.0), col(e.cols(), 0.0);
  for (std::size_t i = 0; i < e.rows(); ++i)
    for (std::size_t j = 0; j < e.cols(); ++j) {
      if (e(i, j) < 0.0) fail("normalize_geometric: negative count at (", i, ", ", j, ")");
      row[i] += e(i, j);
      col[j] += e(i, j);
    }
  Matrix hg(e.rows(), e.cols());
  for (std::size_t i = 0; i < e.rows(); ++i)
    for (std::size_t j = 0; j < e.cols(); ++j)
      if (e(i, j) != 0.0) hg(i, j) = e(i, j) / std::sqrt(row[i] * col[j]);
  return hg;
}

// Geometric graph file:
//   agn-geograph 1
//   shape <rows> <cols>
//   eps            (rows lines of integer counts)
//   hg             (rows lines, 17 significant digits)
//   end
inline void write_geometric_graph(const std::string& path, const FrequencyMatrix& f, const Matrix& hg) {
  if (!f.eps.same_shape(hg)) fail("write_geometric_graph: eps and hg shapes differ");
  std::ofstream os(path);
  if (!os) fail("write_geometric_graph: cannot open '", path, "'");
  os << "agn-geograph 1\nshape " << hg.rows() << ' ' << hg.cols() << "\neps\n";
  for (std::size_t i = 0; i < hg.rows(); ++i) {
    for (std::size_t j = 0; j < hg.cols(); ++j) os << (j ? " " : "") << static_cast<long long>(f.eps(i, j));
    os << '\n';
  }
  os << "hg\n" << std::setprecision(17);
  for (std::size_t i = 0; i < hg.rows(); ++i) {
    for (std::size_t j = 0; j < hg.cols(); ++j) os << (j ? " " : "") << hg(i, j);
    os << '\n';
  }
  os << "end\n";
  if (!os) fail("write_geometric_graph: write failed for '", path, "'");
}

struct GeometricGraphFile {
  FrequencyMatrix eps;
  Matrix hg;
};

inline GeometricGraphFile read_geometric_graph(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("read_geometric_graph: cannot open '", path, "'");
  std::string tag;
  int version = 0;
  std::size_t rows = 0, cols = 0;
  if (!(is >> tag >> version) || tag != "agn-geograph" || version != 1) fail(path, ": missing 'agn-geograph 1' header");
  if (!(is >> tag >> rows >> cols) || tag != "shape") fail(path, ": missing shape");
  GeometricGraphFile g{{Matrix(rows, cols)}, Matrix(rows, cols)};
  auto read_block = [&](const char* name, Matrix& m) {
    if (!(is >> tag) || tag != name) fail(path, ": expected '", name, "' block");
    for (double& v : m.values()) {
      std::string tok;
      if (!(is >> tok)) fail(path, ": truncated '", name, "' block");
      v = std::stod(tok);
    }
  };
  read_block("eps", g.eps.eps);
  read_block("hg", g.hg);
  if (!(is >> tag) || tag != "end") fail(path, ": missing 'end'");
  return g;
}

// ---------------------------------------------------------------------------
// Semantic graph H^s_ij = sigmoid([X_i^CC, X_j^MLO] . w_s)

/// ws is a (2C x 1) param.
inline Matrix semantic_graph(const Matrix& x_cc, const Matrix& x_mlo, const Matrix& ws) {
  const std::size_t c = x_cc.cols();
  if (x_mlo.cols() != c) fail("semantic_graph: feature widths differ (", c, " vs ", x_mlo.cols(), ")");
  if (ws.rows() != 2 * c || ws.cols() != 1) fail("semantic_graph: ws must be ", 2 * c, "x1");
  std::vector<double> a(x_cc.rows(), 0.0), b(x_mlo.rows(), 0.0);
  for (std::size_t i = 0; i < x_cc.rows(); ++i)
    for (std::size_t k = 0; k < c; ++k) a[i] += x_cc(i, k) * ws(k, 0);
  for (std::size_t j = 0; j < x_mlo.rows(); ++j)
    for (std::size_t k = 0; k < c; ++k) b[j] += x_mlo(j, k) * ws(c + k, 0);
  Matrix hs(x_cc.rows(), x_mlo.rows());
  for (std::size_t i = 0; i < hs.rows(); ++i)
    for (std::size_t j = 0; j < hs.cols(); ++j) hs(i, j) = sigmoid(a[i] + b[j]);
  return hs;
}

struct SemanticGraphGrads {
  Matrix d_ws;
  Matrix d_x_cc;
  Matrix d_x_mlo;
};

/// Backward of semantic_graph given its output hs and dL/dhs.
inline SemanticGraphGrads semantic_graph_backward(const Matrix& x_cc, const Matrix& x_mlo, const Matrix& ws,
                                                  const Matrix& hs, const Matrix& d_hs) {
  const std::size_t c = x_cc.cols();
  const Matrix dz = sigmoid_backward(hs, d_hs);
  std::vector<double> da(hs.rows(), 0.0), db(hs.cols(), 0.0);
  for (std::size_t i = 0; i < hs.rows(); ++i)
    for (std::size_t j = 0; j < hs.cols(); ++j) {
      da[i] += dz(i, j);
      db[j] += dz(i, j);
    }
  SemanticGraphGrads g{Matrix(2 * c, 1), Matrix(x_cc.rows(), c), Matrix(x_mlo.rows(), c)};
  for (std::size_t i = 0; i < x_cc.rows(); ++i)
    for (std::size_t k = 0; k < c; ++k) {
      g.d_ws(k, 0) += x_cc(i, k) * da[i];
      g.d_x_cc(i, k) = da[i] * ws(k, 0);
    }
  for (std::size_t j = 0; j < x_mlo.rows(); ++j)
    for (std::size_t k = 0; k < c; ++k) {
      g.d_ws(c + k, 0) += x_mlo(j, k) * db[j];
      g.d_x_mlo(j, k) = db[j] * ws(c + k, 0);
    }
  return g;
}

/// H = H^g o H^s.
inline Matrix combine(const Matrix& hg, const Matrix& hs) {
  if (!hg.same_shape(hs)) fail("combine: H^g is ", hg.rows(), "x", hg.cols(), ", H^s is ", hs.rows(), "x", hs.cols());
  return hadamard(hg, hs);
}

/// [[0, H], [H^T, 0]].
inline Matrix augment_bipartite(const Matrix& h) {
  const std::size_t m = h.rows(), n = h.cols();
  Matrix hb(m + n, m + n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      hb(i, m + j) = h(i, j);
      hb(m + j, i) = h(i, j);
    }
  return hb;
}

/// Gradient w.r.t. H from a gradient w.r.t. its augmented form.
inline Matrix augment_bipartite_backward(const Matrix& d_hb, std::size_t n_cc, std::size_t n_mlo) {
  if (d_hb.rows() != n_cc + n_mlo || d_hb.cols() != n_cc + n_mlo) fail("augment_bipartite_backward: bad shape");
  Matrix dh(n_cc, n_mlo);
  for (std::size_t i = 0; i < n_cc; ++i)
    for (std::size_t j = 0; j < n_mlo; ++j) dh(i, j) = d_hb(i, n_cc + j) + d_hb(n_cc + j, i);
  return dh;
}

// ---------------------------------------------------------------------------
// Stacked bipartite convolution Z <- sigmoid(H^B Z W)

struct GraphConvCache {
  std::vector<Matrix> inputs;   // Z fed to each layer
  std::vector<Matrix> outputs;  // sigmoid outputs per layer
};

inline Matrix bgn_forward(const Matrix& xb, const Matrix& hb, std::span<Param* const> layers,
                          GraphConvCache* cache = nullptr) {
  if (hb.rows() != xb.rows() || hb.cols() != xb.rows())
    fail("bgn_forward: H^B is ", hb.rows(), "x", hb.cols(), " for ", xb.rows(), " nodes");
  if (cache) *cache = {};
  Matrix z = xb;
  for (const Param* w : layers) {
    if (w->value.rows() != z.cols() || w->value.cols() != z.cols())
      fail("bgn_forward: W^B '", w->name, "' must be ", z.cols(), "x", z.cols());
    Matrix out = sigmoid(matmul(matmul(hb, z), w->value));
    if (cache) {
      cache->inputs.push_back(std::move(z));
      cache->outputs.push_back(out);
    }
    z = std::move(out);
  }
  return z;
}

struct BgnGrads {
  Matrix d_xb;
  Matrix d_hb;
};

/// Accumulates W^B gradients into the params; returns input and H^B grads.
inline BgnGrads bgn_backward(const Matrix& hb, std::span<Param* const> layers, const GraphConvCache& cache,
                             const Matrix& d_out) {
  if (cache.inputs.size() != layers.size()) fail("bgn_backward: cache does not match layer count");
  Matrix d = d_out;
  Matrix d_hb(hb.rows(), hb.cols());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix d_pre = sigmoid_backward(cache.outputs[l], d);
    const Matrix hz = matmul(hb, cache.inputs[l]);
    layers[l]->accumulate(matmul_tn(hz, d_pre));
    const Matrix d_hz = matmul_nt(d_pre, layers[l]->value);
    d_hb += matmul_nt(d_hz, cache.inputs[l]);
    d = matmul_tn(hb, d_hz);
  }
  return {std::move(d), std::move(d_hb)};
}

}  // namespace agn
