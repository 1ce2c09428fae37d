#pragma once

// Synthetic four-view phantom cases. A breast is a half ellipsoid with depth
// axis d (from the chest wall), lateral axis u and thickness axis v. CC images
// show (d, u); MLO images show (p, q) with p = d measured from the pectoral
// line and q = u cos(theta) + v sin(theta) along it, so one 3-D point lands at
// equal depth in both views.
//
// Round blobs come in three kinds with identical appearance:
//   masses     3-D, both views of the examined breast only (annotated),
//   nodules    3-D, both views of both breasts (symmetric decoys),
//   artifacts  2-D, examined image only (decoys without an ipsilateral match).

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "agn/image.hpp"
#include "agn/numcore.hpp"
#include "agn/parallel.hpp"
#include "agn/types.hpp"

namespace agn {

struct IntRange {
  int min = 0;
  int max = 0;
};
struct RealRange {
  double min = 0.0;
  double max = 0.0;
};

struct PhantomConfig {
  int image_size = 256;
  double mlo_angle = 50.0;            // degrees
  double gland_texture_scale = 32.0;  // coarsest noise period, pixels
  double distortion_amplitude = 3.0;  // contralateral warp, pixels
  IntRange mass_count_range = {1, 2};
  RealRange mass_radius_range = {4.0, 7.0};
  RealRange mass_contrast_range = {40.0, 55.0};
  IntRange nodule_count_range = {1, 2};
  IntRange artifact_count_range = {1, 2};
  double occlusion_prob = 0.3;
  double noise_sigma = 2.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (image_size < 64 || image_size % 4 != 0) fail("PhantomConfig: image_size must be a multiple of 4 and >= 64");
    if (!(mlo_angle > 20.0 && mlo_angle < 70.0)) fail("PhantomConfig: mlo_angle must lie in (20, 70) degrees");
    if (!(gland_texture_scale >= 4.0)) fail("PhantomConfig: gland_texture_scale must be >= 4");
    if (!(distortion_amplitude >= 0.0)) fail("PhantomConfig: distortion_amplitude must be >= 0");
    for (const auto& [name, r] : {std::pair{"mass_count_range", mass_count_range},
                                  std::pair{"nodule_count_range", nodule_count_range},
                                  std::pair{"artifact_count_range", artifact_count_range}})
      if (r.min < 0 || r.max < r.min) fail("PhantomConfig: invalid ", name, " [", r.min, ", ", r.max, "]");
    if (!(mass_radius_range.min > 0.0 && mass_radius_range.max >= mass_radius_range.min))
      fail("PhantomConfig: invalid mass_radius_range");
    if (!(mass_contrast_range.min > 0.0 && mass_contrast_range.max >= mass_contrast_range.min))
      fail("PhantomConfig: invalid mass_contrast_range");
    if (!(occlusion_prob >= 0.0 && occlusion_prob <= 1.0)) fail("PhantomConfig: occlusion_prob must be in [0, 1]");
    if (!(noise_sigma >= 0.0)) fail("PhantomConfig: noise_sigma must be >= 0");
  }
};

enum class Side { L, R };
inline char side_char(Side s) { return s == Side::L ? 'l' : 'r'; }

/// Image names on disk.
inline std::string view_file_stem(Side s, ViewType v) {
  return std::string(1, side_char(s)) + (v == ViewType::CC ? "_cc" : "_mlo");
}

struct MassAnnotation {
  std::string view;  // image stem, e.g. "l_cc"
  Box box;           // on-disk pixel coordinates
  std::string instance_id;
};

/// Per-case anatomy, in canonical (chest wall left) image coordinates.
struct BreastGeometry {
  double rd = 150, ru = 100, rv = 50;
  double cc_center_y = 128;
  double alpha = 50 * std::numbers::pi / 180;  // pectoral line normal angle
  double rho = 60;
  double lambda0 = 0;                           // attachment offset along the line
  double theta = 50 * std::numbers::pi / 180;  // MLO projection angle

  [[nodiscard]] Point2 normal() const { return {std::cos(alpha), std::sin(alpha)}; }
  [[nodiscard]] Point2 tangent() const { return {-std::sin(alpha), std::cos(alpha)}; }
  [[nodiscard]] Point2 attach() const {
    const Point2 n = normal(), t = tangent();
    return {rho * n.x + lambda0 * t.x, rho * n.y + lambda0 * t.y};
  }
  [[nodiscard]] double rq() const {
    return std::sqrt(ru * ru * std::cos(theta) * std::cos(theta) + rv * rv * std::sin(theta) * std::sin(theta));
  }
  [[nodiscard]] double q_of(double u, double v) const { return u * std::cos(theta) + v * std::sin(theta); }

  [[nodiscard]] Point2 cc_point(double d, double u) const { return {d, cc_center_y + u}; }
  [[nodiscard]] Point2 mlo_point(double p, double q) const {
    const Point2 c = attach(), n = normal(), t = tangent();
    return {c.x + p * n.x + q * t.x, c.y + p * n.y + q * t.y};
  }
  /// Image point -> (p, q); p is the signed distance from the pectoral line.
  [[nodiscard]] Point2 mlo_coords(Point2 img) const {
    const Point2 c = attach(), n = normal(), t = tangent();
    const double dx = img.x - c.x, dy = img.y - c.y;
    return {dx * n.x + dy * n.y, dx * t.x + dy * t.y};
  }

  /// Relative ray-sum thickness in [0, 1] (0 outside the breast).
  [[nodiscard]] double cc_thickness(double d, double u) const {
    if (d < 0) return 0.0;
    const double k = 1 - (d / rd) * (d / rd) - (u / ru) * (u / ru);
    return k > 0 ? std::sqrt(k) : 0.0;
  }
  [[nodiscard]] double mlo_thickness(double p, double q) const {
    if (p < 0) return 0.0;
    const double r = rq();
    const double k = 1 - (p / rd) * (p / rd) - (q / r) * (q / r);
    return k > 0 ? std::sqrt(k) : 0.0;
  }
  [[nodiscard]] bool in_muscle(Point2 img) const {
    const Point2 n = normal();
    return img.x * n.x + img.y * n.y < rho;
  }
};

/// A round blob; positions in canonical image coordinates for each view.
struct Blob {
  Point2 cc;
  Point2 mlo;
  double radius = 10;
  double contrast = 45;
};

struct PhantomCase {
  std::string case_id;
  Side examined_side = Side::L;
  ViewType examined_view = ViewType::CC;
  /// Indexed [side][view] with side L=0, R=1 and view CC=0, MLO=1, as on disk.
  std::array<std::array<GrayImage, 2>, 2> images;
  std::vector<MassAnnotation> annotations;
  BreastGeometry geometry;

  [[nodiscard]] const GrayImage& image(Side s, ViewType v) const {
    return images[s == Side::L ? 0 : 1][v == ViewType::CC ? 0 : 1];
  }
  GrayImage& image(Side s, ViewType v) { return images[s == Side::L ? 0 : 1][v == ViewType::CC ? 0 : 1]; }
};

namespace detail {
/// Smooth lattice noise in [-1, 1] with 3 octaves.
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int size, double period) : period_(period) {
    for (int o = 0; o < 3; ++o) {
      const double per = period / (1 << o);
      const int n = static_cast<int>(std::ceil(size / per)) + 3;
      Octave oct{per, n, std::vector<double>(static_cast<std::size_t>(n) * n)};
      for (double& v : oct.lattice) v = rng.uniform(-1.0, 1.0);
      octaves_.push_back(std::move(oct));
    }
  }

  [[nodiscard]] double operator()(double x, double y) const {
    double s = 0.0, amp = 1.0, norm = 0.0;
    for (const auto& o : octaves_) {
      s += amp * o.at(x / o.period + 1.0, y / o.period + 1.0);
      norm += amp;
      amp *= 0.5;
    }
    return s / norm;
  }

 private:
  struct Octave {
    double period;
    int n;
    std::vector<double> lattice;
    [[nodiscard]] double get(int i, int j) const {
      i = std::clamp(i, 0, n - 1);
      j = std::clamp(j, 0, n - 1);
      return lattice[static_cast<std::size_t>(j) * n + i];
    }
    [[nodiscard]] double at(double x, double y) const {
      const int i = static_cast<int>(std::floor(x)), j = static_cast<int>(std::floor(y));
      const double fx = x - i, fy = y - j;
      const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
      const double a = get(i, j) + sx * (get(i + 1, j) - get(i, j));
      const double b = get(i, j + 1) + sx * (get(i + 1, j + 1) - get(i, j + 1));
      return a + sy * (b - a);
    }
  };
  double period_;
  std::vector<Octave> octaves_;
};

using Canvas = std::vector<double>;

inline constexpr double kAir = 4.0;
inline constexpr double kTissueBase = 70.0;
inline constexpr double kTissueGain = 60.0;
inline constexpr double kTextureAmp = 18.0;
inline constexpr double kMuscle = 185.0;

/// Breast tissue (and muscle wedge for MLO) without blobs.
inline Canvas render_background(const BreastGeometry& g, ViewType view, const ValueNoise& tex, int size) {
  Canvas c(static_cast<std::size_t>(size) * size, kAir);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Point2 px{x + 0.5, y + 0.5};
      double t = 0.0;
      if (view == ViewType::CC) {
        t = g.cc_thickness(px.x, px.y - g.cc_center_y);
      } else {
        if (g.in_muscle(px)) {
          c[static_cast<std::size_t>(y) * size + x] = kMuscle + 6.0 * tex(px.x, px.y);
          continue;
        }
        const Point2 pq = g.mlo_coords(px);
        t = g.mlo_thickness(pq.x, pq.y);
      }
      if (t <= 0.0) continue;
      // Soft rim: texture fades in over the outermost tissue.
      const double rim = std::min(1.0, t / 0.15);
      c[static_cast<std::size_t>(y) * size + x] =
          kTissueBase * std::min(1.0, 0.6 + t) + kTissueGain * t + rim * kTextureAmp * tex(px.x, px.y);
    }
  return c;
}

inline void add_blob(Canvas& c, int size, Point2 center, double r, double contrast) {
  const int x0 = std::max(0, static_cast<int>(std::floor(center.x - r))), x1 = std::min(size - 1, static_cast<int>(std::ceil(center.x + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(center.y - r))), y1 = std::min(size - 1, static_cast<int>(std::ceil(center.y + r)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d2 = squared_distance({x + 0.5, y + 0.5}, center);
      if (d2 < r * r) c[static_cast<std::size_t>(y) * size + x] += contrast * std::sqrt(1.0 - d2 / (r * r));
    }
}

/// Smooth displacement resample (bilinear) of a canvas.
inline Canvas warp(const Canvas& src, int size, const ValueNoise& wx, const ValueNoise& wy, double amp) {
  Canvas out(src.size());
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, size - 1);
    y = std::clamp(y, 0, size - 1);
    return src[static_cast<std::size_t>(y) * size + x];
  };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double sx = x + amp * wx(x + 0.5, y + 0.5), sy = y + amp * wy(x + 0.5, y + 0.5);
      const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
      const double fx = sx - ix, fy = sy - iy;
      const double a = at(ix, iy) + fx * (at(ix + 1, iy) - at(ix, iy));
      const double b = at(ix, iy + 1) + fx * (at(ix + 1, iy + 1) - at(ix, iy + 1));
      out[static_cast<std::size_t>(y) * size + x] = a + fy * (b - a);
    }
  return out;
}

inline GrayImage quantize(const Canvas& c, int size, Rng& rng, double sigma) {
  GrayImage img(size, size);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double v = c[i] + (sigma > 0 ? sigma * rng.normal() : 0.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return img;
}

inline bool far_from_all(Point2 p, const std::vector<Point2>& others, double min_dist) {
  for (const auto& o : others)
    if (squared_distance(p, o) < min_dist * min_dist) return false;
  return true;
}

inline bool inside_image(Point2 p, double margin, int size) {
  return p.x >= margin && p.y >= margin && p.x <= size - margin && p.y <= size - margin;
}
}  // namespace detail

inline constexpr double kBlobSpacing = 34.0;

/// Samples a 3-D point inside the breast whose projections are comfortably
/// inside both images and away from existing blobs.
inline std::optional<Blob> sample_blob_3d(const BreastGeometry& g, const PhantomConfig& cfg, Rng& rng,
                                          const std::vector<Point2>& taken_cc, const std::vector<Point2>& taken_mlo) {
  for (int attempt = 0; attempt < 500; ++attempt) {
    const double r = rng.uniform(cfg.mass_radius_range.min, cfg.mass_radius_range.max);
    const double d = rng.uniform(0.0, g.rd), u = rng.uniform(-g.ru, g.ru), v = rng.uniform(-g.rv, g.rv);
    const double k = (d / g.rd) * (d / g.rd) + (u / g.ru) * (u / g.ru) + (v / g.rv) * (v / g.rv);
    if (k > 0.75 || d < r + 12.0) continue;
    const Point2 cc = g.cc_point(d, u), mlo = g.mlo_point(d, g.q_of(u, v));
    if (!detail::inside_image(cc, r + 2, cfg.image_size) || !detail::inside_image(mlo, r + 2, cfg.image_size)) continue;
    if (g.mlo_thickness(d, g.q_of(u, v)) < 0.3 || g.cc_thickness(d, u) < 0.3) continue;
    if (!detail::far_from_all(cc, taken_cc, kBlobSpacing) || !detail::far_from_all(mlo, taken_mlo, kBlobSpacing)) continue;
    return Blob{cc, mlo, r, rng.uniform(cfg.mass_contrast_range.min, cfg.mass_contrast_range.max)};
  }
  return std::nullopt;
}

inline BreastGeometry sample_geometry(const PhantomConfig& cfg, Rng& rng) {
  const double s = cfg.image_size / 256.0;
  constexpr double deg = std::numbers::pi / 180.0;
  BreastGeometry g;
  g.rd = rng.uniform(135, 165) * s;
  g.ru = rng.uniform(95, 115) * s;
  g.rv = rng.uniform(40, 55) * s;
  g.cc_center_y = cfg.image_size / 2.0 + rng.uniform(-6, 6) * s;
  g.alpha = (cfg.mlo_angle + rng.uniform(-5, 5)) * deg;
  g.rho = rng.uniform(52, 68) * s;
  g.lambda0 = rng.uniform(-8, 8) * s;
  g.theta = cfg.mlo_angle * deg;
  return g;
}

/// Mass / decoy positions of one case, before rendering.
struct CaseLayout {
  std::vector<Blob> masses;
  std::vector<Blob> nodules;
  std::vector<Point2> artifacts;  // examined view only
  std::vector<double> artifact_radius;
  std::vector<double> artifact_contrast;
};

inline std::string format_case_id(std::size_t index) {
  std::ostringstream os;
  os << "case_" << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

/// Renders one case. Throws if masses cannot be placed after bounded retries.
inline PhantomCase generate_case(const PhantomConfig& cfg, std::uint64_t case_seed, const std::string& case_id = "case") {
  cfg.validate();
  Rng rng(case_seed);
  const int n = cfg.image_size;
  PhantomCase pc;
  pc.case_id = case_id;
  pc.examined_side = rng.uniform() < 0.5 ? Side::L : Side::R;
  pc.examined_view = rng.uniform() < 0.5 ? ViewType::CC : ViewType::MLO;
  const BreastGeometry g = sample_geometry(cfg, rng);
  pc.geometry = g;

  CaseLayout lay;
  std::vector<Point2> taken_cc, taken_mlo;
  // Masses must fit; decoys that do not fit are dropped.
  auto place = [&](std::vector<Blob>& out, int count, bool required) {
    for (int i = 0; i < count; ++i) {
      auto b = sample_blob_3d(g, cfg, rng, taken_cc, taken_mlo);
      if (!b) {
        if (required) fail("generate_case ", case_id, ": could not place mass ", i, " inside the breast");
        return;
      }
      taken_cc.push_back(b->cc);
      taken_mlo.push_back(b->mlo);
      out.push_back(*b);
    }
  };
  place(lay.masses, static_cast<int>(rng.integer(cfg.mass_count_range.min, cfg.mass_count_range.max)), true);
  place(lay.nodules, static_cast<int>(rng.integer(cfg.nodule_count_range.min, cfg.nodule_count_range.max)), false);
  // Artifacts: a 2-D blob in the examined image whose 3-D counterpart would
  // be somewhere else; sampled like a 3-D blob, but only one projection kept.
  const int n_art = static_cast<int>(rng.integer(cfg.artifact_count_range.min, cfg.artifact_count_range.max));
  std::vector<Point2>& taken_e = pc.examined_view == ViewType::CC ? taken_cc : taken_mlo;
  for (int i = 0; i < n_art; ++i) {
    std::vector<Point2> none;
    auto b = sample_blob_3d(g, cfg, rng, pc.examined_view == ViewType::CC ? taken_cc : none,
                            pc.examined_view == ViewType::MLO ? taken_mlo : none);
    if (!b) break;
    const Point2 p = pc.examined_view == ViewType::CC ? b->cc : b->mlo;
    taken_e.push_back(p);
    lay.artifacts.push_back(p);
    lay.artifact_radius.push_back(b->radius);
    lay.artifact_contrast.push_back(b->contrast);
  }

  // Independent textures per view; the contralateral breast reuses them.
  const detail::ValueNoise tex_cc(rng, n, cfg.gland_texture_scale), tex_mlo(rng, n, cfg.gland_texture_scale);
  std::array<detail::Canvas, 2> base = {detail::render_background(g, ViewType::CC, tex_cc, n),
                                        detail::render_background(g, ViewType::MLO, tex_mlo, n)};
  for (const auto& b : lay.nodules) {
    detail::add_blob(base[0], n, b.cc, b.radius, b.contrast);
    detail::add_blob(base[1], n, b.mlo, b.radius, b.contrast);
  }
  std::array<detail::Canvas, 2> exam = base;
  for (const auto& b : lay.masses) {
    detail::add_blob(exam[0], n, b.cc, b.radius, b.contrast);
    detail::add_blob(exam[1], n, b.mlo, b.radius, b.contrast);
  }
  const int ev = pc.examined_view == ViewType::CC ? 0 : 1;
  for (std::size_t i = 0; i < lay.artifacts.size(); ++i)
    detail::add_blob(exam[ev], n, lay.artifacts[i], lay.artifact_radius[i], lay.artifact_contrast[i]);

  // Occluding gland sheet over one mass in the examined view.
  if (!lay.masses.empty() && rng.uniform() < cfg.occlusion_prob) {
    const Blob& m = lay.masses[static_cast<std::size_t>(rng.integer(0, static_cast<long long>(lay.masses.size()) - 1))];
    const Point2 mc = ev == 0 ? m.cc : m.mlo;
    const double ang = rng.uniform(0, std::numbers::pi);
    const double off = rng.uniform(0.3, 0.8) * m.radius;
    const Point2 c{mc.x + off * std::cos(ang + std::numbers::pi / 2), mc.y + off * std::sin(ang + std::numbers::pi / 2)};
    const double a = rng.uniform(1.5, 2.5) * m.radius, b = rng.uniform(0.5, 0.8) * m.radius;
    double peak = 0.0;
    for (double v : base[ev]) peak = std::max(peak, v);
    const double level = 1.2 * std::min(peak, detail::kTissueBase + detail::kTissueGain + detail::kTextureAmp);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x + 0.5 - c.x, dy = y + 0.5 - c.y;
        const double s = (dx * std::cos(ang) + dy * std::sin(ang)) / a, t = (-dx * std::sin(ang) + dy * std::cos(ang)) / b;
        const double r2 = s * s + t * t;
        if (r2 < 1.0) {
          double& px = exam[ev][static_cast<std::size_t>(y) * n + x];
          px = std::max(px, level * (1.0 - r2 * r2));
        }
      }
  }

  // Contralateral breast: warped copy of the background, no masses.
  const detail::ValueNoise wcx(rng, n, 64.0), wcy(rng, n, 64.0), wmx(rng, n, 64.0), wmy(rng, n, 64.0);
  std::array<detail::Canvas, 2> contra = {detail::warp(base[0], n, wcx, wcy, cfg.distortion_amplitude),
                                          detail::warp(base[1], n, wmx, wmy, cfg.distortion_amplitude)};

  const Side es = pc.examined_side, cs = es == Side::L ? Side::R : Side::L;
  for (int v = 0; v < 2; ++v) {
    const ViewType vt = v == 0 ? ViewType::CC : ViewType::MLO;
    GrayImage ie = detail::quantize(exam[v], n, rng, cfg.noise_sigma);
    GrayImage ic = detail::quantize(contra[v], n, rng, cfg.noise_sigma);
    // Right-breast images are stored mirrored (chest wall on the right).
    pc.image(es, vt) = es == Side::R ? mirror_horizontal(ie) : std::move(ie);
    pc.image(cs, vt) = cs == Side::R ? mirror_horizontal(ic) : std::move(ic);
  }

  for (std::size_t i = 0; i < lay.masses.size(); ++i) {
    const auto& m = lay.masses[i];
    for (int v = 0; v < 2; ++v) {
      const ViewType vt = v == 0 ? ViewType::CC : ViewType::MLO;
      const Point2 c = v == 0 ? m.cc : m.mlo;
      Box b = clip_box({c.x - m.radius, c.y - m.radius, 2 * m.radius, 2 * m.radius}, n, n);
      if (es == Side::R) b.x = n - b.x - b.w;
      pc.annotations.push_back({view_file_stem(es, vt), b, "m" + std::to_string(i)});
    }
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Disk format
//
// {case_id}/annotations.txt:
//   agn-case 1
//   examined l CC
//   mass <instance_id> <view stem> <x> <y> <w> <h>
//   end

inline void write_case(const std::filesystem::path& dir, const PhantomCase& pc) {
  std::filesystem::create_directories(dir);
  for (Side s : {Side::L, Side::R})
    for (ViewType v : {ViewType::CC, ViewType::MLO})
      write_pgm((dir / (view_file_stem(s, v) + ".pgm")).string(), pc.image(s, v));
  std::ofstream os(dir / "annotations.txt");
  if (!os) fail("write_case: cannot write annotations in '", dir.string(), "'");
  os << "agn-case 1\nexamined " << side_char(pc.examined_side) << ' ' << to_string(pc.examined_view) << '\n'
     << std::setprecision(10);
  for (const auto& a : pc.annotations)
    os << "mass " << a.instance_id << ' ' << a.view << ' ' << a.box.x << ' ' << a.box.y << ' ' << a.box.w << ' '
       << a.box.h << '\n';
  os << "end\n";
  if (!os) fail("write_case: write failed in '", dir.string(), "'");
}

struct CaseAnnotations {
  Side examined_side = Side::L;
  ViewType examined_view = ViewType::CC;
  std::vector<MassAnnotation> masses;
};

inline CaseAnnotations read_annotations(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) fail("read_annotations: cannot open '", file.string(), "'");
  std::string tag, side, view;
  int version = 0;
  if (!(is >> tag >> version) || tag != "agn-case" || version != 1) fail(file.string(), ": missing 'agn-case 1' header");
  if (!(is >> tag >> side >> view) || tag != "examined" || (side != "l" && side != "r"))
    fail(file.string(), ": bad 'examined' line");
  CaseAnnotations a{side == "l" ? Side::L : Side::R, parse_view_type(view), {}};
  while (is >> tag) {
    if (tag == "end") return a;
    if (tag != "mass") fail(file.string(), ": unexpected token '", tag, "'");
    MassAnnotation m;
    if (!(is >> m.instance_id >> m.view >> m.box.x >> m.box.y >> m.box.w >> m.box.h))
      fail(file.string(), ": malformed mass line");
    a.masses.push_back(std::move(m));
  }
  fail(file.string(), ": missing 'end'");
}

/// The three views of a stored case, mirrored into canonical orientation,
/// plus canonical mass boxes per ipsilateral view.
struct CanonicalCase {
  std::string case_id;
  ViewType examined_view = ViewType::CC;
  GrayImage examined, auxiliary, contralateral;
  std::vector<Box> examined_boxes;
  /// Masses linked across the ipsilateral views: (instance, CC box, MLO box).
  std::vector<std::tuple<std::string, std::optional<Box>, std::optional<Box>>> linked;
};

inline CanonicalCase load_canonical_case(const std::filesystem::path& dir) {
  const CaseAnnotations ann = read_annotations(dir / "annotations.txt");
  const Side es = ann.examined_side, cs = es == Side::L ? Side::R : Side::L;
  const ViewType ev = ann.examined_view, av = ev == ViewType::CC ? ViewType::MLO : ViewType::CC;
  auto load = [&](Side s, ViewType v) {
    GrayImage img = read_pgm((dir / (view_file_stem(s, v) + ".pgm")).string());
    return s == Side::R ? mirror_horizontal(img) : img;
  };
  CanonicalCase c;
  c.case_id = dir.filename().string();
  c.examined_view = ev;
  c.examined = load(es, ev);
  c.auxiliary = load(es, av);
  c.contralateral = load(cs, ev);
  const int w = c.examined.width;
  for (const auto& m : ann.masses) {
    Box b = m.box;
    if (m.view.size() < 2 || (m.view[0] != 'l' && m.view[0] != 'r')) fail(dir.string(), ": bad view '", m.view, "'");
    const Side s = m.view[0] == 'l' ? Side::L : Side::R;
    const ViewType v = parse_view_type(m.view.substr(2));
    if (s != es) fail(dir.string(), ": mass '", m.instance_id, "' annotated on the contralateral breast");
    if (s == Side::R) b.x = w - b.x - b.w;
    if (v == ev) c.examined_boxes.push_back(b);
    auto it = std::find_if(c.linked.begin(), c.linked.end(), [&](const auto& t) { return std::get<0>(t) == m.instance_id; });
    if (it == c.linked.end()) {
      c.linked.emplace_back(m.instance_id, std::nullopt, std::nullopt);
      it = std::prev(c.linked.end());
    }
    (v == ViewType::CC ? std::get<1>(*it) : std::get<2>(*it)) = b;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Datasets

struct ManifestEntry {
  std::string path;  // case directory, relative to the manifest
  std::string split;
};

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

/// Deterministic per-case seed.
inline std::uint64_t case_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + index + 1;
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Split membership of n cases: a seeded shuffle cut at rounded ratios.
inline std::vector<std::string> assign_splits(std::size_t n, const SplitRatios& r, std::uint64_t seed) {
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    fail("split ratios must be non-negative and sum to 1");
  const auto n_train = static_cast<std::size_t>(std::llround(n * r.train));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(n * r.val)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed ^ 0x5eed5eedULL);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.integer(0, static_cast<long long>(i) - 1))]);
  std::vector<std::string> split(n);
  for (std::size_t k = 0; k < n; ++k) split[idx[k]] = k < n_train ? "train" : k < n_train + n_val ? "val" : "test";
  return split;
}

inline void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(file);
  if (!os) fail("write_manifest: cannot open '", file.string(), "'");
  for (const auto& e : entries) os << e.path << ' ' << e.split << '\n';
  if (!os) fail("write_manifest: write failed for '", file.string(), "'");
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) fail("read_manifest: cannot open '", file.string(), "'");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.path >> e.split) || (e.split != "train" && e.split != "val" && e.split != "test"))
      fail(file.string(), ":", lineno, ": expected '<case path> <train|val|test>'");
    out.push_back(std::move(e));
  }
  return out;
}

/// Generates n cases under out_dir/cases and writes out_dir/manifest.txt.
/// Case i uses case_seed(cfg.seed, i), so output does not depend on `jobs`.
inline std::filesystem::path generate_dataset(const PhantomConfig& cfg, std::size_t n, const SplitRatios& ratios,
                                              const std::filesystem::path& out_dir, int jobs = 1) {
  cfg.validate();
  if (n == 0) fail("generate_dataset: n must be >= 1");
  const auto split = assign_splits(n, ratios, cfg.seed);
  std::vector<ManifestEntry> entries(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const std::string id = format_case_id(i);
    write_case(out_dir / "cases" / id, generate_case(cfg, case_seed(cfg.seed, i), id));
    entries[i] = {"cases/" + id, split[i]};
  });
  const auto manifest = out_dir / "manifest.txt";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace agn
