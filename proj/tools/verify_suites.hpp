#pragma once

// Self-checks behind `agn verify` and the acceptance runner. Every oracle
// here is written independently of the code it checks: dense matrices,
// brute-force scans, exhaustive enumeration.

#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "agn/train.hpp"

namespace agn::verify {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;
  double seconds = 0.0;

  [[nodiscard]] bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
};

struct Options {
  std::uint64_t seed = 1;
  /// Adds a small error to one analytic gradient (BGN layer weight).
  bool inject_fault = false;
  /// Scratch directory for generated phantom cases.
  std::filesystem::path work_dir = std::filesystem::temp_directory_path() / "agn_verify";
  /// Cases generated for the geometric-graph suite.
  std::size_t geograph_cases = 300;
  int jobs = 1;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"grad", "mapping", "graph", "wiring", "preprocess", "froc", "geograph"};
  return names;
}

namespace detail {

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline LandmarkSet random_landmarks(Rng& rng, int n, double size) {
  LandmarkSet lm;
  for (int i = 0; i < n; ++i) {
    lm.points.push_back({rng.uniform(0, size), rng.uniform(0, size)});
    lm.line_index.push_back(0);
  }
  return lm;
}

// ---------------------------------------------------------------------------
// grad

/// Maps parameter names of the composed model to the operation they feed.
inline std::string op_of(const std::string& param) {
  if (param.rfind("backbone", 0) == 0) return "backbone";
  if (param.rfind("head", 0) == 0) return "head";
  if (param == "bgn.ws") return "semantic graph";
  if (param.rfind("bgn.w", 0) == 0) return "bgn layers";
  if (param.rfind("ign", 0) == 0) return "ign branches";
  if (param == "fusion.wi") return "attention";
  if (param == "fusion.wf") return "fusion";
  return param;
}

/// Central differences through backbone -> AGN -> head -> loss on a 16x16
/// toy case, for one mode and examined view.
inline std::vector<GradCheckReport> composed_gradcheck(Mode mode, ViewType ev, std::uint64_t seed, bool inject) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.backbone = BackboneConfig{{3, 4, 4}, {1, 2, 2}};
  cfg.ign_branches = {1, 3};
  cfg.bgn_layers = 2;
  cfg.bgn_k = 2;
  cfg.base_side = 6.0;
  const Matrix hg = random_matrix(rng, 3, 4, 0.0, 0.5);
  Sample s;
  s.examined_view = ev;
  for (GrayImage* img : {&s.examined, &s.auxiliary, &s.contralateral}) {
    *img = GrayImage(16, 16);
    for (auto& p : img->pixels) p = static_cast<std::uint8_t>(rng.integer(0, 255));
  }
  const int n_e = ev == ViewType::CC ? 3 : 4;
  // Nodes sit on distinct feature-cell centres so every node owns a cell.
  auto cell_landmarks = [&](int n) {
    std::vector<int> cells(16);
    for (int i = 0; i < 16; ++i) cells[i] = i;
    for (int i = 15; i > 0; --i) std::swap(cells[i], cells[static_cast<std::size_t>(rng.integer(0, i))]);
    LandmarkSet lm;
    for (int i = 0; i < n; ++i) {
      lm.points.push_back({4.0 * (cells[i] % 4) + 2.0 + rng.uniform(-0.5, 0.5), 4.0 * (cells[i] / 4) + 2.0 + rng.uniform(-0.5, 0.5)});
      lm.line_index.push_back(0);
    }
    return lm;
  };
  s.landmarks = {cell_landmarks(n_e), cell_landmarks(7 - n_e), cell_landmarks(n_e)};
  s.gts = {{4.0, 5.0, 6.0, 6.0}};

  Detector det(cfg, mode, hg);
  det.init(seed);
  // Generic operating point: active ReLUs, non-cancelling head gradient,
  // attention away from 0.5.
  for (Param* p : det.backbone().params())
    for (double& v : p->value.values()) v += rng.uniform(0.01, 0.05);
  det.head().w.value = random_matrix(rng, kHeadOutputs, 4);
  det.head().b.value = random_matrix(rng, 1, kHeadOutputs);
  det.agn().p().wi.value = random_matrix(rng, 4, 1, -2.0, 2.0);
  det.agn().p().ws.value = random_matrix(rng, 8, 1, -0.5, 0.5);

  const auto targets = assign_targets(det.head_config(s.examined), s.gts);
  auto loss = [&](bool grads) {
    if (grads) {
      const double l = det.accumulate(s, {}).loss;
      if (inject) det.agn().p().wb[0].grad[0] += 1e-3;
      return l;
    }
    const auto f = det.forward(s, det.level_graph(s), {}, false);
    return head_loss(f.out, targets).loss;
  };
  auto params = det.params();
  if (mode == Mode::single_view) {
    // Graph and attention weights receive no gradient in this mode.
    std::erase_if(params, [](Param* p) { return p->name.rfind("bgn", 0) == 0 || p->name.rfind("ign", 0) == 0 || p->name == "fusion.wi"; });
  }
  // Entries as small as 1e-6 occur; a 1e-5 step keeps round-off below them.
  return grad_check(loss, params, 1e-5, 1e-4);
}

inline void suite_grad(SuiteReport& r, const Options& o) {
  std::map<std::string, double> worst;
  const Mode modes[] = {Mode::full_agn, Mode::bgn_only, Mode::ign_only, Mode::single_view};
  std::uint64_t k = 0;
  for (Mode m : modes)
    for (ViewType ev : {ViewType::CC, ViewType::MLO})
      for (const auto& rep : composed_gradcheck(m, ev, o.seed * 31 + k++, o.inject_fault)) {
        const std::string op = op_of(rep.param_name) + (rep.param_name == "fusion.wf" ? " (" + to_string(m) + ")" : "");
        worst[op] = std::max(worst[op], rep.max_rel_error);
      }
  for (const auto& [op, err] : worst) r.checks.push_back({op, err < 1e-4, "max rel error " + fmt(err)});
}

// ---------------------------------------------------------------------------
// mapping

inline void suite_mapping(SuiteReport& r, const Options& o) {
  Rng rng(o.seed + 100);
  double worst_col = 0.0, worst_row = 0.0;
  bool voronoi_exact = true;
  std::string first_bad;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = static_cast<int>(rng.integer(2, 16)), w = static_cast<int>(rng.integer(2, 16));
    const int n = static_cast<int>(rng.integer(1, std::min(24, h * w)));
    const int k = static_cast<int>(rng.integer(1, std::min(5, n)));
    // Nodes on distinct pixel centres so that no region is empty.
    std::vector<int> cells(h * w);
    for (int i = 0; i < h * w; ++i) cells[i] = i;
    for (int i = h * w; i > 1; --i) std::swap(cells[i - 1], cells[static_cast<std::size_t>(rng.integer(0, i - 1))]);
    std::vector<Point2> nodes;
    for (int j = 0; j < n; ++j) nodes.push_back({cells[j] % w + 0.5, cells[j] / w + 0.5});

    const AssignmentMatrix a = build_assignment(nodes, h, w, k);
    const Matrix qf = ForwardMap(a).dense(), qr = ReverseMap(a).dense();
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < h * w; ++i) s += qf(i, j);
      worst_col = std::max(worst_col, std::abs(s - 1.0));
    }
    for (int i = 0; i < h * w; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += qr(i, j);
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }

    // k = 1: every node feature is the plain mean over its Voronoi cell.
    const std::size_t c = 3;
    const Matrix f = random_matrix(rng, static_cast<std::size_t>(h * w), c);
    const Matrix x = ForwardMap(build_assignment(nodes, h, w, 1)).apply(f);
    std::vector<std::vector<double>> sum(n, std::vector<double>(c, 0.0));
    std::vector<int> count(n, 0);
    for (int i = 0; i < h * w; ++i) {
      const Point2 p{i % w + 0.5, i / w + 0.5};
      int best = 0;
      for (int j = 1; j < n; ++j)
        if (squared_distance(p, nodes[j]) < squared_distance(p, nodes[best])) best = j;
      ++count[best];
      for (std::size_t ch = 0; ch < c; ++ch) sum[best][ch] += f(i, ch);
    }
    for (int j = 0; j < n && voronoi_exact; ++j)
      for (std::size_t ch = 0; ch < c; ++ch)
        if (x(j, ch) != sum[j][ch] * (1.0 / count[j])) {
          voronoi_exact = false;
          first_bad = "trial " + std::to_string(trial) + " node " + std::to_string(j);
        }
  }
  r.checks.push_back({"forward map columns sum to 1", worst_col <= 1e-12, "max deviation " + fmt(worst_col) + " over 100 configs"});
  r.checks.push_back({"reverse map rows sum to 1", worst_row <= 1e-12, "max deviation " + fmt(worst_row) + " over 100 configs"});
  r.checks.push_back({"k=1 forward map equals Voronoi cell means", voronoi_exact, voronoi_exact ? "exact on 100 configs" : first_bad});
}

// ---------------------------------------------------------------------------
// graph

/// Bipartite normalization computed the long way: build the augmented
/// (n_cc + n_mlo) square adjacency, scale by D^-1/2 on both sides, read off
/// the CC x MLO block.
inline Matrix normalize_dense(const Matrix& eps) {
  const std::size_t a = eps.rows(), b = eps.cols(), n = a + b;
  Matrix big(n, n);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) big(i, a + j) = big(a + j, i) = eps(i, j);
  std::vector<double> dinv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += big(i, j);
    dinv[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Matrix out(a, b);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) out(i, j) = dinv[i] * big(i, a + j) * dinv[a + j];
  return out;
}

inline void suite_graph(SuiteReport& r, const Options& o) {
  Rng rng(o.seed + 200);
  double worst = 0.0;
  int with_empty = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t a = static_cast<std::size_t>(rng.integer(1, 12)), b = static_cast<std::size_t>(rng.integer(1, 12));
    Matrix eps(a, b);
    for (double& v : eps.values()) v = rng.uniform() < 0.6 ? 0.0 : static_cast<double>(rng.integer(1, 9));
    if (trial % 3 == 0) {
      const std::size_t zr = static_cast<std::size_t>(rng.integer(0, static_cast<long long>(a) - 1));
      for (std::size_t j = 0; j < b; ++j) eps(zr, j) = 0.0;
    }
    if (trial % 4 == 0) {
      const std::size_t zc = static_cast<std::size_t>(rng.integer(0, static_cast<long long>(b) - 1));
      for (std::size_t i = 0; i < a; ++i) eps(i, zc) = 0.0;
    }
    bool empty = false;
    for (std::size_t i = 0; i < a; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < b; ++j) s += eps(i, j);
      empty = empty || s == 0.0;
    }
    with_empty += empty;
    worst = std::max(worst, max_abs_diff(normalize_geometric({eps}), normalize_dense(eps)));
  }
  r.checks.push_back({"geometric normalization equals augmented dense form", worst <= 1e-12,
                      "max abs diff " + fmt(worst) + ", " + std::to_string(with_empty) + "/100 with an empty row"});

  bool sym = true, zero_diag = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t a = static_cast<std::size_t>(rng.integer(1, 9)), b = static_cast<std::size_t>(rng.integer(1, 9));
    const std::size_t c = 3;
    Matrix eps(a, b);
    for (double& v : eps.values()) v = static_cast<double>(rng.integer(0, 3));
    const Matrix hs = semantic_graph(random_matrix(rng, a, c), random_matrix(rng, b, c), random_matrix(rng, 2 * c, 1));
    const Matrix hb = augment_bipartite(combine(normalize_geometric({eps}), hs));
    for (std::size_t i = 0; i < a + b; ++i)
      for (std::size_t j = 0; j < a + b; ++j) {
        sym = sym && hb(i, j) == hb(j, i);
        if ((i < a) == (j < a)) zero_diag = zero_diag && hb(i, j) == 0.0;
      }
  }
  r.checks.push_back({"H^B symmetric", sym, "exact on 50 graphs"});
  r.checks.push_back({"H^B diagonal blocks zero", zero_diag, "exact on 50 graphs"});

  bool degrees = true;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = static_cast<int>(rng.integer(5, 20));
    const LandmarkSet e = random_landmarks(rng, n, 100), c = random_landmarks(rng, n, 100);
    for (int s : {1, 3, 5}) {
      const Matrix j = augment_inception(build_cross_adjacency(e, c, s));
      // Rows of the examined block carry the J rows; the contralateral
      // block sees J^T, whose row sums vary.
      for (std::size_t i = 0; i < j.rows(); ++i) {
        double d = 0.0;
        for (std::size_t k = 0; k < j.cols(); ++k) {
          d += j(i, k);
          degrees = degrees && j(i, k) == j(k, i);
        }
        if (i < static_cast<std::size_t>(n)) degrees = degrees && d == 1.0 + s;
      }
    }
  }
  r.checks.push_back({"inception adjacency symmetric with J-row degrees 1+s", degrees, "s in {1,3,5}, 30 landmark pairs"});
}

// ---------------------------------------------------------------------------
// Phantom samples shared by the wiring and geograph suites.

inline Dataset phantom_dataset(const Options& o, const std::string& name, std::size_t n, std::uint64_t seed) {
  const auto dir = o.work_dir / name;
  std::filesystem::remove_all(dir);
  PhantomConfig pc;
  pc.seed = seed;
  const auto manifest = generate_dataset(pc, n, {}, dir, o.jobs);
  Dataset d = load_dataset(manifest, o.jobs);
  std::filesystem::remove_all(dir);
  return d;
}

inline void suite_wiring(SuiteReport& r, const Options& o) {
  const Dataset d = phantom_dataset(o, "wiring", 6, o.seed + 300);
  const auto tr = d.split("train");
  const auto all = [&] {
    std::vector<const Sample*> v;
    for (const auto& s : d.samples) v.push_back(&s);
    return v;
  }();
  if (tr.empty()) {
    r.checks.push_back({"phantom cases", false, "no usable training case"});
    return;
  }
  ModelConfig cfg;
  cfg.base_side = median_mass_diameter(tr);
  const Matrix hg = normalize_geometric(build_frequency(tr));
  auto make = [&](Mode m) {
    Detector det(cfg, m, hg);
    det.init(o.seed);
    return det;
  };
  auto out = [](Detector& det, const Sample& s, const Wiring& w) { return det.forward(s, det.level_graph(s), w, false).out; };

  Detector single = make(Mode::single_view), bgn = make(Mode::bgn_only), ign = make(Mode::ign_only), full = make(Mode::full_agn);
  Detector full_ign = make(Mode::full_agn);
  {
    Matrix& wf = full_ign.agn().p().wf.value;
    const Matrix& w1 = ign.agn().p().wf.value;
    for (std::size_t a = 0; a < w1.rows(); ++a)
      for (std::size_t b = 0; b < w1.cols(); ++b) wf(a, b) = w1(a, b);
  }
  bool e1 = true, e2 = true, e3 = true, formulas = true;
  for (const Sample* s : all) {
    e1 = e1 && out(single, *s, {}) == out(full, *s, {.bgn_zero = true, .attention_one = true});
    e2 = e2 && out(bgn, *s, {}) == out(full, *s, {.attention_one = true});
    e3 = e3 && out(ign, *s, {}) == out(full_ign, *s, {.fb_zero = true});
    for (Detector* det : {&bgn, &ign, &full}) {
      const auto f = det->forward(*s, det->level_graph(*s), {}, true);
      const Matrix& wf = det->agn().p().wf.value;
      const Matrix& fe = f.fe.values;
      Matrix want;
      if (det->mode() == Mode::bgn_only) want = enhance_bgn_only(fe, f.agn.fb, wf);
      if (det->mode() == Mode::ign_only) want = enhance_ign_only(fe, f.agn.fhat, wf);
      if (det->mode() == Mode::full_agn) want = enhance_full(fe, f.agn.fb, f.agn.fhat, wf);
      formulas = formulas && f.y == want;
    }
  }
  const std::string n = std::to_string(all.size()) + " phantom cases";
  r.checks.push_back({"single_view == full_agn with H^B=0, attention=1", e1, "bit-identical outputs, " + n});
  r.checks.push_back({"bgn_only == full_agn with attention=1", e2, "bit-identical outputs, " + n});
  r.checks.push_back({"ign_only == full_agn with F_B=0", e3, "bit-identical outputs, " + n});
  r.checks.push_back({"fusion formulas per mode", formulas, "bit-identical to the closed forms, " + n});

  // Training trajectories, step for step.
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 1;
  opt.seed = o.seed;
  std::vector<const Sample*> few(tr.begin(), tr.begin() + std::min<std::size_t>(3, tr.size()));
  Detector a = make(Mode::single_view), b = make(Mode::full_agn);
  const auto la = train(a, few, opt);
  opt.wiring = {.bgn_zero = true, .attention_one = true};
  const auto lb = train(b, few, opt);
  r.checks.push_back({"single_view training == wired full_agn training", la.step_losses == lb.step_losses,
                      std::to_string(la.step_losses.size()) + " steps compared"});
}

// ---------------------------------------------------------------------------
// preprocess

/// Exhaustive between-class variance scan with exact integer arithmetic.
/// A plateau of maximal thresholds resolves to its midpoint.
inline int otsu_scan(const GrayImage& img) {
  std::array<long long, 256> h{};
  for (auto p : img.pixels) ++h[p];
  // sigma_b^2 * n^2 = (n * s0 - n0 * s)^2 / (n0 * n1); compare as fractions.
  long long n = 0, s = 0;
  for (int v = 0; v < 256; ++v) n += h[v], s += h[v] * v;
  struct Frac {
    __int128 num, den;
  };
  std::array<std::optional<Frac>, 256> score;
  long long n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += h[t];
    s0 += h[t] * t;
    const long long n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const __int128 d = static_cast<__int128>(n) * s0 - static_cast<__int128>(n0) * s;
    score[t] = Frac{d * d, static_cast<__int128>(n0) * n1};
  }
  auto greater = [](const Frac& a, const Frac& b) { return a.num * b.den > b.num * a.den; };
  auto equal = [](const Frac& a, const Frac& b) { return a.num * b.den == b.num * a.den; };
  int first = -1;
  for (int t = 0; t < 256; ++t)
    if (score[t] && (first < 0 || greater(*score[t], *score[first]))) first = t;
  if (first < 0) fail("otsu_scan: single-valued image");
  int last = first;
  while (last + 1 < 256 && score[last + 1] && equal(*score[last + 1], *score[first])) ++last;
  return (first + last) / 2;
}

inline void suite_preprocess(SuiteReport& r, const Options& o) {
  constexpr double deg = std::numbers::pi / 180.0;
  Rng rng(o.seed + 400);
  const int n = 256;
  int hough_ok = 0;
  double worst_rho = 0.0, worst_theta = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    // A bright wedge on the origin side of the line over darker tissue, with
    // noise; the line must come back out of Canny + Hough.
    const double theta = rng.uniform(35.0, 75.0) * deg, rho = rng.uniform(40.0, 140.0);
    const double hi = rng.uniform(170, 220), lo = rng.uniform(70, 120);
    GrayImage img(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double sd = (x + 0.5) * std::cos(theta) + (y + 0.5) * std::sin(theta) - rho;
        const double v = (sd < 0 ? hi : lo) + 4.0 * rng.normal();
        img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    const CannyOptions co;
    const PectoralLine l = hough_pectoral_line(canny_edges(img, co.low, co.high, co.sigma), PectoralPrior::mlo_default(n, n));
    const double dr = std::abs(l.rho - rho), dt = std::abs(l.theta - theta);
    worst_rho = std::max(worst_rho, dr);
    worst_theta = std::max(worst_theta, dt / deg);
    hough_ok += dr <= 2.0 && dt <= 2.0 * deg;
  }
  r.checks.push_back({"Hough recovers synthetic lines within (2 px, 2 deg)", hough_ok >= 95,
                      std::to_string(hough_ok) + "/100 (worst " + fmt(worst_rho) + " px, " + fmt(worst_theta) + " deg)"});

  int otsu_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    GrayImage img(64, 48);
    const int lo = static_cast<int>(rng.integer(5, 60)), hi = static_cast<int>(rng.integer(120, 230));
    const double cx = rng.uniform(0.3, 0.7) * 64, cy = rng.uniform(0.3, 0.7) * 48, rad = rng.uniform(8, 20);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 64; ++x) {
        const double v = (std::hypot(x - cx, y - cy) < rad ? hi : lo) + 12.0 * rng.normal();
        img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    otsu_ok += otsu_threshold(img).threshold == otsu_scan(img);
  }
  r.checks.push_back({"Otsu threshold equals exhaustive scan", otsu_ok == 100, std::to_string(otsu_ok) + "/100 images"});

  // Landmark counts on phantom views under the default configuration.
  const PreprocessOptions po;
  int cc_ok = 0, mlo_ok = 0, cases = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const PhantomCase c = generate_case(PhantomConfig{}, case_seed(o.seed + 401, i));
    ++cases;
    auto canon = [&](ViewType v) {
      const GrayImage& g = c.image(c.examined_side, v);
      return c.examined_side == Side::R ? mirror_horizontal(g) : g;
    };
    cc_ok += preprocess_view(canon(ViewType::CC), ViewType::CC, po).landmarks.count() == 66;
    mlo_ok += preprocess_view(canon(ViewType::MLO), ViewType::MLO, po).landmarks.count() == 71;
  }
  r.checks.push_back({"default landmark counts (66 CC, 71 MLO)",
                      po.cc.expected_count() == 66 && po.mlo.expected_count() == 71 && cc_ok == cases && mlo_ok == cases,
                      "CC " + std::to_string(cc_ok) + "/" + std::to_string(cases) + ", MLO " + std::to_string(mlo_ok) +
                          "/" + std::to_string(cases) + " phantom views"});
}

// ---------------------------------------------------------------------------
// froc

inline Detection det(double x, double y, double w, double h, double s) { return {{x, y, w, h}, s}; }

inline void suite_froc(SuiteReport& r, const Options& o) {
  const Box u{0, 0, 1, 1};
  r.checks.push_back({"IoU unit values", iou(u, u) == 1.0 && iou(u, Box{2, 2, 1, 1}) == 0.0 && iou(u, Box{0.5, 0, 1, 1}) == 1.0 / 3.0,
                      "identical 1, disjoint 0, half overlap 1/3"});

  struct Micro {
    std::string name;
    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<Box>> gts;
    std::array<double, 5> want;
  };
  // Hand enumerations; see README for the walk-throughs.
  const std::vector<Micro> micro{
      {"interleaved",
       {{det(0, 0, 10, 10, 0.9), det(30, 0, 10, 10, 0.8)}, {det(0, 30, 10, 10, 0.7), det(50, 50, 10, 10, 0.6)}},
       {{Box{0, 0, 10, 10}}, {Box{50, 50, 10, 10}}},
       {0.5, 1.0, 1.0, 1.0, 1.0}},
      {"with a missed mass",
       {{det(0, 0, 8, 8, 0.95), det(40, 40, 8, 8, 0.9)},
        {det(40, 40, 8, 8, 0.85), det(1, 1, 8, 8, 0.8), det(20, 20, 8, 8, 0.7)},
        {det(40, 0, 8, 8, 0.6), det(0, 40, 8, 8, 0.5), det(0, 0, 9, 9, 0.3)},
        {det(30, 30, 8, 8, 0.4)}},
       {{Box{0, 0, 8, 8}}, {Box{0, 0, 8, 8}}, {Box{0, 0, 8, 8}}, {Box{0, 0, 8, 8}}},
       {0.5, 0.5, 0.75, 0.75, 0.75}},
      {"duplicate and IoU exactly 0.2",
       {{det(0, 0, 10, 10, 0.9), det(1, 0, 10, 10, 0.8), det(50, 0, 10, 2, 0.7), det(50, 0, 10, 10, 0.6)}},
       {{Box{0, 0, 10, 10}, Box{50, 0, 10, 10}}},
       {0.75, 1.0, 1.0, 1.0, 1.0}},
  };
  for (const auto& m : micro) {
    const FrocCurve c = evaluate_froc(m.preds, m.gts);
    bool ok = c.points.size() == 5;
    std::string got;
    for (std::size_t i = 0; ok && i < 5; ++i) {
      ok = ok && std::abs(c.points[i].recall - m.want[i]) < 1e-12;
      got += (i ? " " : "") + fmt(c.points[i].recall);
    }
    r.checks.push_back({"micro-case: " + m.name, ok, "recalls " + got});
  }

  Rng rng(o.seed + 500);
  bool mono = true;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = static_cast<int>(rng.integer(1, 6));
    std::vector<std::vector<Detection>> p(n);
    std::vector<std::vector<Box>> g(n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0, m = static_cast<int>(rng.integer(0, 3)); k < m; ++k) g[i].push_back({rng.uniform(0, 50), rng.uniform(0, 50), 10, 10});
      for (int k = 0, m = static_cast<int>(rng.integer(0, 8)); k < m; ++k)
        p[i].push_back(det(rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(5, 15), rng.uniform(5, 15), rng.uniform(0.01, 0.99)));
    }
    if (g[0].empty()) g[0].push_back({0, 0, 10, 10});
    const FrocCurve c = evaluate_froc(p, g);
    for (std::size_t i = 1; i < c.points.size(); ++i) mono = mono && c.points[i].recall >= c.points[i - 1].recall;
  }
  r.checks.push_back({"recall non-decreasing in FPI", mono, "500 random evaluations"});
}

// ---------------------------------------------------------------------------
// geograph

struct LineMassReport {
  std::size_t nodes = 0;      // CC nodes with any geometric link
  std::size_t nodes_ok = 0;   // of which >= 90 % of mass lies near the line
  double min_fraction = 1.0;
  double mean_fraction = 0.0;
};

/// Share of each CC node's H^g row mass that falls on MLO nodes whose
/// parallel line lies within `tol_lines` lines of the CC node's own line.
/// Both views place line i at the same fraction of the nipple depth, so
/// line i in CC and line i in MLO sample the same depth from the chest wall.
inline LineMassReport line_mass(const Matrix& hg, const std::vector<int>& cc_line, const std::vector<int>& mlo_line,
                                int tol_lines, double need = 0.9) {
  LineMassReport r;
  for (std::size_t i = 0; i < hg.rows(); ++i) {
    double all = 0.0, near = 0.0;
    for (std::size_t j = 0; j < hg.cols(); ++j) {
      all += hg(i, j);
      if (std::abs(mlo_line[j] - cc_line[i]) <= tol_lines) near += hg(i, j);
    }
    if (all == 0.0) continue;
    const double f = near / all;
    ++r.nodes;
    r.nodes_ok += f >= need;
    r.min_fraction = std::min(r.min_fraction, f);
    r.mean_fraction += f;
  }
  if (r.nodes) r.mean_fraction /= static_cast<double>(r.nodes);
  return r;
}

inline LineMassReport geograph_sanity(const std::vector<const Sample*>& train) {
  const Matrix hg = normalize_geometric(build_frequency(train));
  const Sample& s = *train.front();
  const LandmarkSet& cc = s.examined_view == ViewType::CC ? s.landmarks.examined : s.landmarks.auxiliary;
  const LandmarkSet& mlo = s.examined_view == ViewType::CC ? s.landmarks.auxiliary : s.landmarks.examined;
  return line_mass(hg, cc.line_index, mlo.line_index, 2);
}

inline void suite_geograph(SuiteReport& r, const Options& o) {
  const Dataset d = phantom_dataset(o, "geograph", o.geograph_cases, o.seed + 600);
  const auto tr = d.split("train");
  if (tr.empty()) {
    r.checks.push_back({"geometric graph near the correspondence line", false, "no training cases"});
    return;
  }
  const LineMassReport m = geograph_sanity(tr);
  r.checks.push_back({"geometric graph near the correspondence line", m.nodes > 0 && m.nodes_ok == m.nodes,
                      std::to_string(m.nodes_ok) + "/" + std::to_string(m.nodes) + " linked CC nodes with >= 90% within 2 lines (min " +
                          fmt(m.min_fraction) + ", mean " + fmt(m.mean_fraction) + ", " + std::to_string(tr.size()) +
                          " training cases)"});
}

}  // namespace detail

inline SuiteReport run_suite(const std::string& name, const Options& o = {}) {
  using Fn = void (*)(SuiteReport&, const Options&);
  static const std::map<std::string, Fn> table{{"grad", detail::suite_grad},         {"mapping", detail::suite_mapping},
                                               {"graph", detail::suite_graph},       {"wiring", detail::suite_wiring},
                                               {"preprocess", detail::suite_preprocess}, {"froc", detail::suite_froc},
                                               {"geograph", detail::suite_geograph}};
  const auto it = table.find(name);
  if (it == table.end()) fail("unknown verify suite '", name, "'");
  SuiteReport r{name, {}, 0.0};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    it->second(r, o);
  } catch (const Error& e) {
    r.checks.push_back({"suite raised", false, e.what()});
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace agn::verify
