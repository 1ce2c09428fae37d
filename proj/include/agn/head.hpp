#pragma once

// Dense detection head: a 1x1 convolution giving, per feature cell, a score
// logit and four offsets relative to a fixed square base box centred on the
// cell. Also the training loss and box decoding.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "agn/detection.hpp"
#include "agn/numcore.hpp"
#include "agn/types.hpp"

namespace agn {

inline constexpr std::size_t kHeadOutputs = 5;  // logit, dx, dy, log w, log h

struct HeadConfig {
  double base_side = 20.0;  // pixels at input resolution
  int stride = 4;           // feature cell size in pixels
  int feat_width = 0;
  int feat_height = 0;

  [[nodiscard]] Box base_box(std::size_t cell) const {
    const double cx = (static_cast<double>(cell % feat_width) + 0.5) * stride;
    const double cy = (static_cast<double>(cell / feat_width) + 0.5) * stride;
    return {cx - base_side / 2, cy - base_side / 2, base_side, base_side};
  }
};

struct Head {
  Param w;  // 5 x C
  Param b;  // 1 x 5

  Head() = default;
  explicit Head(std::size_t channels) : w("head.w", kHeadOutputs, channels), b("head.b", 1, kHeadOutputs) {}

  void init(Rng& rng) {
    const double a = std::sqrt(1.0 / static_cast<double>(w.value.cols()));
    for (double& v : w.value.values()) v = rng.uniform(-a, a) * 0.1;
    b.value.fill(0.0);
  }

  std::vector<Param*> params() { return {&w, &b}; }

  /// Y (HW x C) -> raw outputs (HW x 5).
  [[nodiscard]] Matrix forward(const Matrix& y) const {
    if (y.cols() != w.value.cols()) fail("head: features have ", y.cols(), " channels, head expects ", w.value.cols());
    Matrix out = matmul_nt(y, w.value);
    for (std::size_t p = 0; p < out.rows(); ++p)
      for (std::size_t o = 0; o < kHeadOutputs; ++o) out(p, o) += b.value(0, o);
    return out;
  }

  /// Accumulates parameter grads, returns dL/dY.
  Matrix backward(const Matrix& y, const Matrix& d_out) {
    w.accumulate(matmul_tn(d_out, y));
    Matrix db(1, kHeadOutputs);
    for (std::size_t p = 0; p < d_out.rows(); ++p)
      for (std::size_t o = 0; o < kHeadOutputs; ++o) db(0, o) += d_out(p, o);
    b.accumulate(db);
    return matmul(d_out, w.value);
  }
};

struct CellTarget {
  bool positive = false;
  std::array<double, 4> offsets{};  // dx, dy, log w, log h in base-box units
};

/// Positive cells: base box IoU > 0.2 with some ground truth; the best
/// overlapping box supplies the regression target.
inline std::vector<CellTarget> assign_targets(const HeadConfig& cfg, std::span<const Box> gts) {
  const std::size_t n = static_cast<std::size_t>(cfg.feat_width) * cfg.feat_height;
  std::vector<CellTarget> t(n);
  for (std::size_t cell = 0; cell < n; ++cell) {
    const Box base = cfg.base_box(cell);
    double best = kHitIou;
    for (const auto& g : gts) {
      const double o = iou(base, g);
      if (o > best) {
        best = o;
        const Point2 bc = base.center(), gc = g.center();
        t[cell].positive = true;
        t[cell].offsets = {(gc.x - bc.x) / cfg.base_side, (gc.y - bc.y) / cfg.base_side, std::log(g.w / cfg.base_side),
                           std::log(g.h / cfg.base_side)};
      }
    }
  }
  return t;
}

struct HeadLoss {
  double loss = 0.0;
  double cls = 0.0;
  double box = 0.0;
  Matrix d_out;  // HW x 5
};

/// Class-balanced binary cross-entropy (positives and negatives each averaged,
/// then weighted equally) plus mean L1 box error over positive cells.
inline HeadLoss head_loss(const Matrix& out, const std::vector<CellTarget>& targets, double box_weight = 1.0) {
  if (out.rows() != targets.size() || out.cols() != kHeadOutputs) fail("head_loss: output/target shape mismatch");
  std::size_t n_pos = 0;
  for (const auto& t : targets) n_pos += t.positive;
  const std::size_t n_neg = targets.size() - n_pos;
  const double w_pos = n_pos ? (n_neg ? 0.5 : 1.0) / static_cast<double>(n_pos) : 0.0;
  const double w_neg = n_neg ? (n_pos ? 0.5 : 1.0) / static_cast<double>(n_neg) : 0.0;
  HeadLoss r{0.0, 0.0, 0.0, Matrix(out.rows(), kHeadOutputs)};
  for (std::size_t p = 0; p < out.rows(); ++p) {
    const double z = out(p, 0);
    const double y = targets[p].positive ? 1.0 : 0.0;
    const double wt = targets[p].positive ? w_pos : w_neg;
    // log(1 + e^z) - y z, stable for both signs.
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    r.cls += wt * (softplus - y * z);
    r.d_out(p, 0) = wt * (sigmoid(z) - y);
    if (targets[p].positive) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double e = out(p, 1 + k) - targets[p].offsets[k];
        r.box += box_weight * w_pos * std::abs(e);
        r.d_out(p, 1 + k) = box_weight * w_pos * (e > 0 ? 1.0 : e < 0 ? -1.0 : 0.0);
      }
    }
  }
  r.loss = r.cls + r.box;
  return r;
}

struct DecodeOptions {
  std::size_t pre_nms = 100;
  double nms_iou = 0.3;
  std::size_t max_detections = 20;
};

/// Top-scoring cells to boxes, clipped to the image, then NMS.
inline std::vector<Detection> decode_detections(const Matrix& out, const HeadConfig& cfg, int img_w, int img_h,
                                                const DecodeOptions& opt = {}) {
  std::vector<std::size_t> order(out.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t k = std::min(opt.pre_nms, order.size());
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t a, std::size_t b) {
    return out(a, 0) != out(b, 0) ? out(a, 0) > out(b, 0) : a < b;
  });
  std::vector<Detection> dets;
  for (std::size_t t = 0; t < k; ++t) {
    const std::size_t p = order[t];
    const Box base = cfg.base_box(p);
    const Point2 c = base.center();
    const double lw = std::clamp(out(p, 3), -4.0, 4.0), lh = std::clamp(out(p, 4), -4.0, 4.0);
    const double w = cfg.base_side * std::exp(lw), h = cfg.base_side * std::exp(lh);
    const double cx = c.x + out(p, 1) * cfg.base_side, cy = c.y + out(p, 2) * cfg.base_side;
    const Box b = clip_box({cx - w / 2, cy - h / 2, w, h}, img_w, img_h);
    if (b.w > 0.0 && b.h > 0.0) dets.push_back({b, sigmoid(out(p, 0))});
  }
  auto kept = nms(std::move(dets), opt.nms_iou);
  if (kept.size() > opt.max_detections) kept.resize(opt.max_detections);
  return kept;
}

}  // namespace agn
