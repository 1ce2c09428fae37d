#pragma once

// Per-view preprocessing: breast mask, reference line, nipple and landmarks.
// Errors are re-raised with the failing stage name in front.

#include <string>

#include "agn/geometry.hpp"
#include "agn/landmarks.hpp"

namespace agn {

struct PreprocessOptions {
  CannyOptions canny;
  LandmarkConfig cc = LandmarkConfig::cc_default();
  LandmarkConfig mlo = LandmarkConfig::mlo_default();
};

struct ViewGeometry {
  BreastMask mask;
  PectoralLine line;
  NippleLocation nipple;
  LandmarkSet landmarks;
  Warnings warnings;
};

namespace detail {
template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail("preprocess stage '", name, "': ", e.what());
  }
}
}  // namespace detail

/// `img` must already be in canonical orientation (chest wall left).
inline ViewGeometry preprocess_view(const GrayImage& img, ViewType view, const PreprocessOptions& opt = {}) {
  ViewGeometry g;
  g.mask = detail::stage("otsu", [&] { return otsu_threshold(img); });
  g.line = detail::stage("pectoral", [&] {
    if (view == ViewType::CC) return chest_wall_line();
    const EdgeMap e = canny_edges(img, opt.canny.low, opt.canny.high, opt.canny.sigma);
    return hough_pectoral_line(e, PectoralPrior::mlo_default(img.width, img.height));
  });
  g.nipple = detail::stage("nipple", [&] { return detect_nipple(g.mask, g.line); });
  g.landmarks = detail::stage("landmarks", [&] {
    return embed_landmarks(g.mask, g.line, g.nipple, view == ViewType::CC ? opt.cc : opt.mlo, view, &g.warnings);
  });
  return g;
}

}  // namespace agn
