#pragma once

// Bilateral attention, feature fusion and the two visualisation maps.
// Feature maps here are plain (HW x C) matrices at feature resolution.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "agn/image.hpp"
#include "agn/nodemap.hpp"
#include "agn/numcore.hpp"

namespace agn {

/// F̂ = sigmoid(F_I w_I), one scalar per pixel. wi is C x 1.
inline Matrix attention_map(const Matrix& fi, const Matrix& wi) {
  if (wi.rows() != fi.cols() || wi.cols() != 1)
    fail("attention_map: w_I is ", wi.rows(), "x", wi.cols(), ", features have ", fi.cols(), " channels");
  Matrix out(fi.rows(), 1);
  for (std::size_t p = 0; p < fi.rows(); ++p) {
    const auto r = fi.row(p);
    double acc = 0.0;
    for (std::size_t c = 0; c < r.size(); ++c) acc += r[c] * wi(c, 0);
    out(p, 0) = sigmoid(acc);
  }
  return out;
}

struct AttentionGrads {
  Matrix d_fi;
  Matrix d_wi;
};

inline AttentionGrads attention_backward(const Matrix& fi, const Matrix& wi, const Matrix& fhat, const Matrix& d_fhat) {
  const Matrix dz = sigmoid_backward(fhat, d_fhat);
  AttentionGrads g{Matrix(fi.rows(), fi.cols()), Matrix(wi.rows(), 1)};
  for (std::size_t p = 0; p < fi.rows(); ++p) {
    const auto r = fi.row(p);
    auto d = g.d_fi.row(p);
    for (std::size_t c = 0; c < r.size(); ++c) {
      g.d_wi(c, 0) += r[c] * dz(p, 0);
      d[c] = dz(p, 0) * wi(c, 0);
    }
  }
  return g;
}

namespace detail {
/// Shared fusion kernel. Y[p][o] = sum_c g[p][c] W[o][c] + sum_c fb[p][c] W[o][C+c]
/// where g = fhat * fe (or fe when fhat is null). The two sums always run in
/// this order so that wired-off variants reproduce the full result bit for bit.
inline Matrix fuse(const Matrix& fe, const Matrix* fb, const Matrix* fhat, const Matrix& wf) {
  const std::size_t c = fe.cols(), hw = fe.rows();
  const std::size_t in_w = fb ? 2 * c : c;
  if (wf.cols() != in_w || wf.rows() != c)
    fail("fusion: W_f is ", wf.rows(), "x", wf.cols(), ", expected ", c, "x", in_w);
  if (fb && !fb->same_shape(fe)) fail("fusion: F_B is ", fb->rows(), "x", fb->cols(), ", F_e is ", hw, "x", c);
  if (fhat && (fhat->rows() != hw || fhat->cols() != 1)) fail("fusion: attention map must be ", hw, "x1");
  Matrix y(hw, c);
  std::vector<double> g(c);
  for (std::size_t p = 0; p < hw; ++p) {
    const auto e = fe.row(p);
    for (std::size_t k = 0; k < c; ++k) g[k] = fhat ? (*fhat)(p, 0) * e[k] : e[k];
    auto out = y.row(p);
    for (std::size_t o = 0; o < c; ++o) {
      const auto w = wf.row(o);
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += g[k] * w[k];
      if (fb) {
        const auto b = fb->row(p);
        for (std::size_t k = 0; k < c; ++k) acc += b[k] * w[c + k];
      }
      out[o] = acc;
    }
  }
  return y;
}
}  // namespace detail

/// Y = [F̂ . F_e, F_B] W_f^T with W_f C x 2C.
inline Matrix enhance_full(const Matrix& fe, const Matrix& fb, const Matrix& fhat, const Matrix& wf) {
  return detail::fuse(fe, &fb, &fhat, wf);
}

/// Y = [F_e, F_B] W_f^T.
inline Matrix enhance_bgn_only(const Matrix& fe, const Matrix& fb, const Matrix& wf) {
  return detail::fuse(fe, &fb, nullptr, wf);
}

/// Y = (F̂ . F_e) W_f^T with W_f C x C.
inline Matrix enhance_ign_only(const Matrix& fe, const Matrix& fhat, const Matrix& wf) {
  return detail::fuse(fe, nullptr, &fhat, wf);
}

struct FusionGrads {
  Matrix d_fe;
  Matrix d_fb;    // empty without F_B
  Matrix d_fhat;  // empty without attention
  Matrix d_wf;
};

/// Backward of any fusion variant; pass null for the absent inputs.
inline FusionGrads fuse_backward(const Matrix& fe, const Matrix* fb, const Matrix* fhat, const Matrix& wf,
                                 const Matrix& dy) {
  const std::size_t c = fe.cols(), hw = fe.rows();
  if (dy.rows() != hw || dy.cols() != c) fail("fuse_backward: dY shape mismatch");
  FusionGrads g{Matrix(hw, c), fb ? Matrix(hw, c) : Matrix(), fhat ? Matrix(hw, 1) : Matrix(),
                Matrix(wf.rows(), wf.cols())};
  std::vector<double> gv(c), dg(c);
  for (std::size_t p = 0; p < hw; ++p) {
    const auto e = fe.row(p);
    const double a = fhat ? (*fhat)(p, 0) : 1.0;
    for (std::size_t k = 0; k < c; ++k) gv[k] = fhat ? a * e[k] : e[k];
    std::fill(dg.begin(), dg.end(), 0.0);
    const auto d = dy.row(p);
    for (std::size_t o = 0; o < c; ++o) {
      const auto w = wf.row(o);
      auto dw = g.d_wf.row(o);
      for (std::size_t k = 0; k < c; ++k) {
        dw[k] += d[o] * gv[k];
        dg[k] += d[o] * w[k];
      }
      if (fb) {
        const auto b = fb->row(p);
        auto db = g.d_fb.row(p);
        for (std::size_t k = 0; k < c; ++k) {
          dw[c + k] += d[o] * b[k];
          db[k] += d[o] * w[c + k];
        }
      }
    }
    auto de = g.d_fe.row(p);
    double da = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      de[k] = a * dg[k];
      da += dg[k] * e[k];
    }
    if (fhat) g.d_fhat(p, 0) = da;
  }
  return g;
}

/// Min-max normalisation to 8 bit; a constant input maps to all zeros.
inline GrayImage to_gray_minmax(std::span<const double> v, int width, int height) {
  if (v.size() != static_cast<std::size_t>(width) * height) fail("to_gray_minmax: ", v.size(), " values for ", width, "x", height);
  GrayImage img(width, height);
  if (v.empty()) return img;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (!(*hi > *lo)) return img;
  const double s = 255.0 / (*hi - *lo);
  for (std::size_t i = 0; i < v.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(std::lround((v[i] - *lo) * s));
  return img;
}

/// Channel-wise max, normalised.
inline GrayImage response_map(const Matrix& f, int width, int height) {
  if (f.rows() != static_cast<std::size_t>(width) * height) fail("response_map: ", f.rows(), " pixels for ", width, "x", height);
  if (f.cols() == 0) fail("response_map: no channels");
  std::vector<double> m(f.rows());
  for (std::size_t p = 0; p < f.rows(); ++p) {
    const auto r = f.row(p);
    m[p] = *std::max_element(r.begin(), r.end());
  }
  return to_gray_minmax(m, width, height);
}

/// Broadcasts a one-hot query on node `node` (stacked index) through H^B and
/// reverse-maps the other view's block `sel`. H^B has zero diagonal blocks, so
/// the response of a query always lives in the opposite view.
inline GrayImage visualize_correspondence(const Matrix& hb, const ReverseMap& rm, int node, NodeRange sel) {
  if (hb.rows() != hb.cols()) fail("visualize_correspondence: H^B must be square");
  if (node < 0 || static_cast<std::size_t>(node) >= hb.rows())
    fail("visualize_correspondence: node ", node, " out of range [0, ", hb.rows(), ")");
  Matrix z(hb.rows(), 1);
  for (std::size_t i = 0; i < hb.rows(); ++i) z(i, 0) = hb(i, node);
  const Matrix o = rm.apply(z, sel);
  const auto& a = rm.assignment();
  return to_gray_minmax(o.values(), a.width, a.height);
}

}  // namespace agn
