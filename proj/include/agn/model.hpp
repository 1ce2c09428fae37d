#pragma once

// The full detector: shared backbone over the three views, the graph
// enhancement (BGN + IGN + attention + fusion) and the dense head, with the
// four ablation modes and the wiring switches that relate them.

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agn/backbone.hpp"
#include "agn/bgn.hpp"
#include "agn/fusion.hpp"
#include "agn/head.hpp"
#include "agn/ign.hpp"
#include "agn/nodemap.hpp"

namespace agn {

enum class Mode { single_view, bgn_only, ign_only, full_agn };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::single_view: return "single_view";
    case Mode::bgn_only: return "bgn_only";
    case Mode::ign_only: return "ign_only";
    case Mode::full_agn: return "full_agn";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::single_view, Mode::bgn_only, Mode::ign_only, Mode::full_agn})
    if (s == to_string(m)) return m;
  fail("unknown mode '", s, "' (expected single_view, bgn_only, ign_only or full_agn)");
}

inline bool uses_bgn(Mode m) { return m == Mode::bgn_only || m == Mode::full_agn; }
inline bool uses_ign(Mode m) { return m == Mode::ign_only || m == Mode::full_agn; }

/// Test switches that cut parts of the full graph without changing the code
/// path: H^B forced to zero, attention forced to one, F_B forced to zero.
struct Wiring {
  bool bgn_zero = false;
  bool attention_one = false;
  bool fb_zero = false;
};

struct ModelConfig {
  BackboneConfig backbone;
  int bgn_layers = 1;
  int ign_layers = 2;
  std::vector<int> ign_branches = {1, 3, 5};
  int bgn_k = 3;
  int ign_k = 1;
  bool ign_self_loops = true;
  double base_side = 20.0;

  void validate() const {
    if (bgn_layers < 1 || ign_layers < 1) fail("ModelConfig: layer counts must be >= 1");
    if (ign_branches.empty()) fail("ModelConfig: no IGN branches");
    for (std::size_t i = 1; i < ign_branches.size(); ++i)
      if (ign_branches[i] <= ign_branches[i - 1]) fail("ModelConfig: IGN branches must be ascending and distinct");
    if (ign_branches.front() < 1) fail("ModelConfig: IGN branch sizes must be >= 1");
    if (bgn_k < 1 || ign_k < 1) fail("ModelConfig: k must be >= 1");
    if (!(base_side > 0.0)) fail("ModelConfig: base_side must be positive");
  }
};

/// Per-level, per-case node structure. Landmarks are given at image
/// resolution; maps live on the feature grid.
struct LevelGraph {
  int height = 0;
  int width = 0;
  ForwardMap fwd_e_b, fwd_a_b;  // k = bgn_k
  ReverseMap rev_e_b;
  ForwardMap fwd_e_i, fwd_c_i;  // k = ign_k
  ReverseMap rev_e_i;
  std::vector<Matrix> jhats;    // one per IGN branch
};

/// Landmarks of one case in canonical orientation.
struct CaseLandmarks {
  LandmarkSet examined;
  LandmarkSet auxiliary;
  LandmarkSet contralateral;
};

inline LevelGraph build_level_graph(const CaseLandmarks& lm, int feat_h, int feat_w, double stride,
                                    const ModelConfig& cfg) {
  auto assign = [&](const LandmarkSet& l, int k) { return build_assignment(l, feat_h, feat_w, k, stride); };
  AssignmentMatrix e_b = assign(lm.examined, cfg.bgn_k);
  AssignmentMatrix e_i = assign(lm.examined, cfg.ign_k);
  std::vector<Matrix> jhats;
  for (int s : cfg.ign_branches)
    jhats.push_back(augment_inception(build_cross_adjacency(lm.examined, lm.contralateral, s), cfg.ign_self_loops));
  return {feat_h,
          feat_w,
          ForwardMap(e_b),
          ForwardMap(assign(lm.auxiliary, cfg.bgn_k)),
          ReverseMap(std::move(e_b)),
          ForwardMap(e_i),
          ForwardMap(assign(lm.contralateral, cfg.ign_k)),
          ReverseMap(std::move(e_i)),
          std::move(jhats)};
}

/// Learned parameters of the graph enhancement.
struct AgnParams {
  Param ws;                          // 2C x 1
  std::vector<Param> wb;             // C x C per BGN layer
  std::vector<IgnBranchParams> ign;  // per IGN layer
  Param wi;                          // C x 1
  Param wf;                          // C x 2C, or C x C for ign_only

  std::vector<Param*> params() {
    std::vector<Param*> p{&ws};
    for (auto& w : wb) p.push_back(&w);
    for (auto& l : ign)
      for (auto& b : l) p.push_back(&b.w);
    p.push_back(&wi);
    p.push_back(&wf);
    return p;
  }
};

/// Intermediate values of one level's enhancement, kept for backward.
struct LevelCache {
  Matrix x_e_b, x_a_b;  // BGN node features of examined / auxiliary
  Matrix hs, hb, xb;
  bool hb_forced = false;
  GraphConvCache bgn;
  Matrix zb, fb;
  Matrix xi;
  IgnCache ign;
  Matrix zi, fi, fhat;
  bool have_attention = false;
  bool have_fb = false;
};

struct LevelInputs {
  const Matrix* fe = nullptr;
  const Matrix* fa = nullptr;  // required by BGN modes
  const Matrix* fc = nullptr;  // required by IGN modes
};

struct LevelGrads {
  Matrix d_fe, d_fa, d_fc;  // d_fa / d_fc empty when unused
};

class AgnModule {
 public:
  AgnModule(std::size_t channels, const ModelConfig& cfg, Mode mode, const Matrix& hg)
      : c_(channels), cfg_(cfg), mode_(mode), hg_(hg) {
    cfg_.validate();
    p_.ws = Param("bgn.ws", 2 * c_, 1);
    for (int l = 0; l < cfg_.bgn_layers; ++l) p_.wb.emplace_back("bgn.w" + std::to_string(l + 1), c_, c_);
    for (int l = 0; l < cfg_.ign_layers; ++l) {
      IgnBranchParams layer;
      for (int s : cfg_.ign_branches)
        layer.push_back({s, Param("ign.l" + std::to_string(l + 1) + ".s" + std::to_string(s), c_, c_)});
      p_.ign.push_back(std::move(layer));
    }
    p_.wi = Param("fusion.wi", c_, 1);
    p_.wf = Param("fusion.wf", c_, mode_ == Mode::ign_only ? c_ : 2 * c_);
  }

  /// Draw order is the same in every mode; W_f comes last so its shape
  /// cannot shift the other parameters.
  void init(Rng& rng) {
    for (double& v : p_.ws.value.values()) v = rng.uniform(-0.1, 0.1);
    for (auto& w : p_.wb) glorot_uniform(w, rng, c_, c_);
    for (auto& l : p_.ign)
      for (auto& b : l) glorot_uniform(b.w, rng, c_, c_);
    for (double& v : p_.wi.value.values()) v = rng.uniform(-0.1, 0.1);
    // W_f starts near [I | 0]: the enhanced map begins as the examined features.
    for (std::size_t o = 0; o < p_.wf.value.rows(); ++o)
      for (std::size_t k = 0; k < p_.wf.value.cols(); ++k)
        p_.wf.value(o, k) = (o == k ? 1.0 : 0.0) + rng.uniform(-0.05, 0.05);
  }

  [[nodiscard]] Mode mode() const noexcept { return mode_; }
  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const Matrix& hg() const noexcept { return hg_; }
  AgnParams& p() noexcept { return p_; }
  [[nodiscard]] const AgnParams& p() const noexcept { return p_; }
  std::vector<Param*> params() { return p_.params(); }

  /// Node selector of the examined view inside the stacked (CC, MLO) set.
  [[nodiscard]] NodeRange examined_block(ViewType ev) const {
    const int n_cc = static_cast<int>(hg_.rows()), n_mlo = static_cast<int>(hg_.cols());
    return ev == ViewType::CC ? NodeRange{0, n_cc} : NodeRange{n_cc, n_mlo};
  }
  [[nodiscard]] NodeRange auxiliary_block(ViewType ev) const {
    return examined_block(ev == ViewType::CC ? ViewType::MLO : ViewType::CC);
  }

  Matrix forward(const LevelGraph& g, ViewType ev, const LevelInputs& in, const Wiring& wiring,
                 LevelCache* cache = nullptr) const {
    LevelCache local;
    LevelCache& k = cache ? *cache : local;
    k = {};
    const Matrix& fe = *in.fe;
    if (fe.cols() != c_) fail("agn: feature width ", fe.cols(), " differs from configured ", c_);
    const bool single = mode_ == Mode::single_view;

    if (mode_ != Mode::ign_only) {
      const std::size_t n_cc = hg_.rows(), n_mlo = hg_.cols();
      const NodeRange sel_e = examined_block(ev), sel_a = auxiliary_block(ev);
      if (static_cast<std::size_t>(g.fwd_e_b.assignment().n_nodes) != static_cast<std::size_t>(sel_e.count) ||
          g.fwd_a_b.assignment().n_nodes != sel_a.count)
        fail("agn: landmark counts do not match the geometric graph (", n_cc, " CC x ", n_mlo, " MLO)");
      k.hb_forced = single || wiring.bgn_zero;
      if (single) {
        // No auxiliary view: H^B = 0 makes the node input irrelevant.
        k.xb = Matrix(n_cc + n_mlo, c_);
        k.hb = Matrix(n_cc + n_mlo, n_cc + n_mlo);
      } else {
        if (!in.fa) fail("agn: mode ", to_string(mode_), " needs auxiliary features");
        k.x_e_b = g.fwd_e_b.apply(fe);
        k.x_a_b = g.fwd_a_b.apply(*in.fa);
        k.xb = stack(ev == ViewType::CC ? k.x_e_b : k.x_a_b, ev == ViewType::CC ? k.x_a_b : k.x_e_b);
        if (k.hb_forced) {
          k.hb = Matrix(n_cc + n_mlo, n_cc + n_mlo);
        } else {
          const Matrix& x_cc = ev == ViewType::CC ? k.x_e_b : k.x_a_b;
          const Matrix& x_mlo = ev == ViewType::CC ? k.x_a_b : k.x_e_b;
          k.hs = semantic_graph(x_cc, x_mlo, p_.ws.value);
          k.hb = augment_bipartite(combine(hg_, k.hs));
        }
      }
      auto wb = const_cast<AgnModule*>(this)->bgn_layers();
      k.zb = bgn_forward(k.xb, k.hb, wb, &k.bgn);
      k.fb = g.rev_e_b.apply(k.zb, sel_e);
      if (wiring.fb_zero) k.fb.fill(0.0);
      k.have_fb = true;
    }

    const bool want_attention = uses_ign(mode_) && !wiring.attention_one;
    if (want_attention) {
      if (!in.fc) fail("agn: mode ", to_string(mode_), " needs contralateral features");
      const Matrix x_e = g.fwd_e_i.apply(fe);
      k.xi = stack(x_e, g.fwd_c_i.apply(*in.fc));
      k.zi = ign_forward(k.xi, p_.ign, g.jhats, &k.ign);
      k.fi = g.rev_e_i.apply(k.zi, {0, static_cast<int>(x_e.rows())});
      k.fhat = attention_map(k.fi, p_.wi.value);
      k.have_attention = true;
    } else if (mode_ == Mode::full_agn || mode_ == Mode::ign_only) {
      k.fhat = Matrix(fe.rows(), 1, 1.0);
      k.have_attention = true;
    }

    const Matrix* fb = k.have_fb ? &k.fb : nullptr;
    const Matrix* fh = k.have_attention ? &k.fhat : nullptr;
    return detail::fuse(fe, fb, fh, p_.wf.value);
  }

  /// Accumulates parameter gradients; returns gradients of the view features.
  LevelGrads backward(const LevelGraph& g, ViewType ev, const LevelInputs& in, const Wiring& wiring,
                      const LevelCache& k, const Matrix& dy) {
    const Matrix& fe = *in.fe;
    const Matrix* fb = k.have_fb ? &k.fb : nullptr;
    const Matrix* fh = k.have_attention ? &k.fhat : nullptr;
    FusionGrads fg = fuse_backward(fe, fb, fh, p_.wf.value, dy);
    p_.wf.accumulate(fg.d_wf);
    LevelGrads out{std::move(fg.d_fe), {}, {}};

    if (k.have_attention && uses_ign(mode_) && !wiring.attention_one) {
      AttentionGrads ag = attention_backward(k.fi, p_.wi.value, k.fhat, fg.d_fhat);
      p_.wi.accumulate(ag.d_wi);
      const int n_e = g.fwd_e_i.assignment().n_nodes;
      const Matrix dzi = g.rev_e_i.backward(ag.d_fi, k.zi.rows(), {0, n_e});
      const Matrix dxi = ign_backward(p_.ign, g.jhats, k.ign, dzi);
      const auto [dxe, dxc] = split(dxi, static_cast<std::size_t>(n_e));
      out.d_fe += g.fwd_e_i.backward(dxe);
      out.d_fc = g.fwd_c_i.backward(dxc);
    }

    if (k.have_fb) {
      Matrix d_fb = std::move(fg.d_fb);
      if (wiring.fb_zero) d_fb.fill(0.0);
      const NodeRange sel_e = examined_block(ev);
      const Matrix dzb = g.rev_e_b.backward(d_fb, k.zb.rows(), sel_e);
      auto wb = bgn_layers();
      const BgnGrads bg = bgn_backward(k.hb, wb, k.bgn, dzb);
      if (mode_ != Mode::single_view) {
        const std::size_t n_cc = hg_.rows();
        auto [dx_cc, dx_mlo] = split(bg.d_xb, n_cc);
        if (!k.hb_forced) {
          const Matrix dh = augment_bipartite_backward(bg.d_hb, n_cc, hg_.cols());
          const Matrix dhs = hadamard(dh, hg_);
          const Matrix& x_cc = ev == ViewType::CC ? k.x_e_b : k.x_a_b;
          const Matrix& x_mlo = ev == ViewType::CC ? k.x_a_b : k.x_e_b;
          SemanticGraphGrads sg = semantic_graph_backward(x_cc, x_mlo, p_.ws.value, k.hs, dhs);
          p_.ws.accumulate(sg.d_ws);
          dx_cc += sg.d_x_cc;
          dx_mlo += sg.d_x_mlo;
        }
        const Matrix& dxe = ev == ViewType::CC ? dx_cc : dx_mlo;
        const Matrix& dxa = ev == ViewType::CC ? dx_mlo : dx_cc;
        out.d_fe += g.fwd_e_b.backward(dxe);
        out.d_fa = g.fwd_a_b.backward(dxa);
      }
    }
    return out;
  }

  std::vector<Param*> bgn_layers() {
    std::vector<Param*> v;
    for (auto& w : p_.wb) v.push_back(&w);
    return v;
  }

  /// Same parameters applied to every level; each level brings its own maps.
  std::vector<Matrix> enhance_per_level(std::span<const LevelGraph> graphs, ViewType ev,
                                        std::span<const LevelInputs> levels, const Wiring& wiring,
                                        std::vector<LevelCache>* caches = nullptr) const {
    if (graphs.size() != levels.size()) fail("enhance_per_level: ", graphs.size(), " graphs for ", levels.size(), " levels");
    std::vector<Matrix> ys;
    if (caches) caches->assign(levels.size(), {});
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (!levels[l].fe || levels[l].fe->cols() != c_)
        fail("enhance_per_level: level ", l, " has channel width ", levels[l].fe ? levels[l].fe->cols() : 0,
             ", expected ", c_);
      ys.push_back(forward(graphs[l], ev, levels[l], wiring, caches ? &(*caches)[l] : nullptr));
    }
    return ys;
  }

 private:
  static Matrix stack(const Matrix& top, const Matrix& bottom) {
    if (top.cols() != bottom.cols()) fail("agn: cannot stack node features of widths ", top.cols(), " and ", bottom.cols());
    Matrix s(top.rows() + bottom.rows(), top.cols());
    std::copy(top.values().begin(), top.values().end(), s.values().begin());
    std::copy(bottom.values().begin(), bottom.values().end(), s.values().begin() + top.size());
    return s;
  }

  static std::pair<Matrix, Matrix> split(const Matrix& m, std::size_t top_rows) {
    Matrix a(top_rows, m.cols()), b(m.rows() - top_rows, m.cols());
    std::copy(m.values().begin(), m.values().begin() + a.size(), a.values().begin());
    std::copy(m.values().begin() + a.size(), m.values().end(), b.values().begin());
    return {std::move(a), std::move(b)};
  }

  std::size_t c_;
  ModelConfig cfg_;
  Mode mode_;
  Matrix hg_;
  AgnParams p_;
};

}  // namespace agn
