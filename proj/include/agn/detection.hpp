#pragma once

// Box overlap, greedy NMS and FROC evaluation (recall at fixed false
// positives per image, a hit needing IoU > 0.2).

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>
#include <tuple>
#include <vector>

#include "agn/numcore.hpp"
#include "agn/types.hpp"

namespace agn {

struct Detection {
  Box box;
  double score = 0.0;
};

inline double iou(const Box& a, const Box& b) {
  if (!(a.w > 0.0 && a.h > 0.0) || !(b.w > 0.0 && b.h > 0.0)) fail("iou: zero-area box");
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

namespace detail {
/// Score descending, then box coordinates ascending.
inline bool detection_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.box.x, a.box.y, a.box.w, a.box.h) < std::tie(b.box.x, b.box.y, b.box.w, b.box.h);
}
}  // namespace detail

/// Greedy suppression: keep the best remaining box, drop everything with
/// IoU above the threshold against it.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  if (!(iou_thresh >= 0.0 && iou_thresh <= 1.0)) fail("nms: threshold ", iou_thresh, " outside [0, 1]");
  std::sort(dets.begin(), dets.end(), detail::detection_before);
  std::vector<Detection> keep;
  for (const auto& d : dets) {
    bool ok = true;
    for (const auto& k : keep)
      if (iou(d.box, k.box) > iou_thresh) {
        ok = false;
        break;
      }
    if (ok) keep.push_back(d);
  }
  return keep;
}

inline constexpr double kHitIou = 0.2;
inline constexpr std::array<double, 5> kFrocFpi = {0.5, 1.0, 2.0, 3.0, 4.0};

struct FrocPoint {
  double fpi = 0.0;
  double recall = 0.0;
};

struct FrocCurve {
  std::vector<FrocPoint> points;  // at kFrocFpi
  std::vector<FrocPoint> raw;     // achieved operating points, fpi ascending
  std::size_t n_images = 0;
  std::size_t n_gt = 0;

  [[nodiscard]] double recall_at(double fpi) const {
    for (const auto& p : points)
      if (p.fpi == fpi) return p.recall;
    fail("FrocCurve: no operating point at ", fpi);
  }
};

/// Recall at an arbitrary FPI by linear interpolation over the raw curve; the
/// last achieved recall is held beyond the largest FPI reached.
inline double interpolate_froc(const std::vector<FrocPoint>& raw, double fpi) {
  if (raw.empty()) return 0.0;
  if (fpi >= raw.back().fpi) return raw.back().recall;
  for (std::size_t i = 1; i < raw.size(); ++i)
    if (fpi <= raw[i].fpi) {
      const auto& a = raw[i - 1];
      const auto& b = raw[i];
      if (fpi == b.fpi || b.fpi == a.fpi) return b.recall;
      // Clamped so round-off cannot break monotonicity between knots.
      const double r = a.recall + (b.recall - a.recall) * (fpi - a.fpi) / (b.fpi - a.fpi);
      return std::clamp(r, a.recall, b.recall);
    }
  return raw.back().recall;
}

/// preds[i] and gts[i] belong to image i. A detection is a false positive
/// when it overlaps no ground truth with IoU > 0.2; extra hits on a ground
/// truth are not counted as false positives.
inline FrocCurve evaluate_froc(const std::vector<std::vector<Detection>>& preds,
                               const std::vector<std::vector<Box>>& gts) {
  if (preds.size() != gts.size()) fail("evaluate_froc: ", preds.size(), " prediction lists for ", gts.size(), " images");
  if (preds.empty()) fail("evaluate_froc: no images");
  struct Entry {
    double score;
    int gt;  // global gt index hit first (best IoU), -1 for a false positive
  };
  std::vector<Entry> entries;
  std::size_t n_gt = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (const auto& d : preds[i]) {
      if (!(d.score >= 0.0 && d.score <= 1.0)) fail("evaluate_froc: score ", d.score, " outside [0, 1]");
      // A detection may overlap several ground truths; it recalls all of them.
      bool hit = false;
      for (std::size_t g = 0; g < gts[i].size(); ++g)
        if (iou(d.box, gts[i][g]) > kHitIou) {
          entries.push_back({d.score, static_cast<int>(n_gt + g)});
          hit = true;
        }
      if (!hit) entries.push_back({d.score, -1});
    }
    n_gt += gts[i].size();
  }
  if (n_gt == 0) fail("evaluate_froc: no ground-truth masses, recall undefined");
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });

  FrocCurve curve;
  curve.n_images = preds.size();
  curve.n_gt = n_gt;
  const double n_img = static_cast<double>(preds.size());
  std::vector<char> found(n_gt, 0);
  std::size_t n_found = 0, n_fp = 0;
  // Points are recorded just before each new false positive enters, i.e. the
  // best recall reachable at each FP count.
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    std::size_t fp_here = 0;
    const double s = entries[i].score;
    while (j < entries.size() && entries[j].score == s) {
      if (entries[j].gt < 0)
        ++fp_here;
      j++;
    }
    if (fp_here > 0) curve.raw.push_back({static_cast<double>(n_fp) / n_img, static_cast<double>(n_found) / n_gt});
    for (std::size_t t = i; t < j; ++t)
      if (entries[t].gt >= 0 && !found[entries[t].gt]) {
        found[entries[t].gt] = 1;
        ++n_found;
      }
    n_fp += fp_here;
    i = j;
  }
  curve.raw.push_back({static_cast<double>(n_fp) / n_img, static_cast<double>(n_found) / n_gt});
  // Collapse repeated FPI values to their best recall.
  std::vector<FrocPoint> merged;
  for (const auto& p : curve.raw) {
    if (!merged.empty() && merged.back().fpi == p.fpi)
      merged.back().recall = std::max(merged.back().recall, p.recall);
    else
      merged.push_back(p);
  }
  curve.raw = std::move(merged);
  for (double t : kFrocFpi) curve.points.push_back({t, interpolate_froc(curve.raw, t)});
  return curve;
}

inline void write_froc_csv(const std::string& path, const FrocCurve& c) {
  std::ofstream os(path);
  if (!os) fail("write_froc_csv: cannot open '", path, "'");
  os << "fpi,recall\n" << std::setprecision(6);
  for (const auto& p : c.points) os << p.fpi << ',' << p.recall << '\n';
  if (!os) fail("write_froc_csv: write failed for '", path, "'");
}

}  // namespace agn
