#pragma once

// Dataset preparation, geometric-graph statistics, training and evaluation
// of the detector in any of the four modes.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "agn/detection.hpp"
#include "agn/model.hpp"
#include "agn/parallel.hpp"
#include "agn/phantom.hpp"
#include "agn/preprocess.hpp"

namespace agn {

/// One examined image with its two context views, canonical orientation.
struct Sample {
  std::string case_id;
  std::string split;
  ViewType examined_view = ViewType::CC;
  GrayImage examined, auxiliary, contralateral;
  CaseLandmarks landmarks;
  std::vector<Box> gts;
  std::vector<LinkedMass> linked;
};

struct Dataset {
  std::vector<Sample> samples;
  Warnings warnings;

  [[nodiscard]] std::vector<const Sample*> split(const std::string& name) const {
    std::vector<const Sample*> out;
    for (const auto& s : samples)
      if (s.split == name) out.push_back(&s);
    return out;
  }
};

/// Loads and preprocesses every case of a manifest. Cases whose landmark
/// sets come out incomplete are dropped with a warning.
inline Dataset load_dataset(const std::filesystem::path& manifest, int jobs = 1, const PreprocessOptions& opt = {},
                            const std::string& only_split = "") {
  const auto entries = read_manifest(manifest);
  const auto root = manifest.parent_path();
  std::vector<std::optional<Sample>> slots(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    if (!only_split.empty() && entries[i].split != only_split) return;
    try {
      CanonicalCase c = load_canonical_case(root / entries[i].path);
      Sample s;
      s.case_id = c.case_id;
      s.split = entries[i].split;
      s.examined_view = c.examined_view;
      const ViewType av = c.examined_view == ViewType::CC ? ViewType::MLO : ViewType::CC;
      const auto ge = preprocess_view(c.examined, c.examined_view, opt);
      const auto ga = preprocess_view(c.auxiliary, av, opt);
      const auto gc = preprocess_view(c.contralateral, c.examined_view, opt);
      const auto& cfg_e = c.examined_view == ViewType::CC ? opt.cc : opt.mlo;
      const auto& cfg_a = av == ViewType::CC ? opt.cc : opt.mlo;
      if (ge.landmarks.count() != static_cast<std::size_t>(cfg_e.expected_count()) ||
          gc.landmarks.count() != ge.landmarks.count() ||
          ga.landmarks.count() != static_cast<std::size_t>(cfg_a.expected_count())) {
        errors[i] = c.case_id + ": incomplete landmark sets, case skipped";
        return;
      }
      s.landmarks = {ge.landmarks, ga.landmarks, gc.landmarks};
      s.gts = c.examined_boxes;
      for (auto& [id, cc, mlo] : c.linked) s.linked.push_back({id, cc, mlo});
      s.examined = std::move(c.examined);
      s.auxiliary = std::move(c.auxiliary);
      s.contralateral = std::move(c.contralateral);
      slots[i] = std::move(s);
    } catch (const Error& e) {
      errors[i] = entries[i].path + ": " + e.what();
    }
  });
  Dataset d;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!errors[i].empty()) d.warnings.push_back(errors[i]);
    if (slots[i]) d.samples.push_back(std::move(*slots[i]));
  }
  return d;
}

/// Co-occurrence counts over the training split, CC x MLO.
inline FrequencyMatrix build_frequency(const std::vector<const Sample*>& train, Warnings* warnings = nullptr) {
  if (train.empty()) fail("build_frequency: empty training split");
  FrequencyMatrix f;
  for (const Sample* s : train) {
    const LandmarkSet& cc = s->examined_view == ViewType::CC ? s->landmarks.examined : s->landmarks.auxiliary;
    const LandmarkSet& mlo = s->examined_view == ViewType::CC ? s->landmarks.auxiliary : s->landmarks.examined;
    if (f.eps.size() == 0) f.eps = Matrix(cc.count(), mlo.count());
    accumulate_mass_links(f, s->linked, cc, mlo, warnings);
  }
  return f;
}


/// Median ground-truth box side (mean of w and h) over a split.
inline double median_mass_diameter(const std::vector<const Sample*>& samples) {
  std::vector<double> d;
  for (const Sample* s : samples)
    for (const auto& b : s->gts) d.push_back(0.5 * (b.w + b.h));
  if (d.empty()) fail("median_mass_diameter: no annotated masses");
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

// ---------------------------------------------------------------------------

class Detector {
 public:
  Detector(const ModelConfig& cfg, Mode mode, const Matrix& hg)
      : cfg_(cfg), mode_(mode), backbone_(cfg.backbone),
        agn_(static_cast<std::size_t>(backbone_.out_channels()), cfg, mode, hg),
        head_(static_cast<std::size_t>(backbone_.out_channels())) {}

  void init(std::uint64_t seed) {
    Rng rng(seed);
    backbone_.init(rng);
    head_.init(rng);
    agn_.init(rng);
  }

  [[nodiscard]] Mode mode() const noexcept { return mode_; }
  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  Backbone& backbone() noexcept { return backbone_; }
  AgnModule& agn() noexcept { return agn_; }
  Head& head() noexcept { return head_; }

  std::vector<Param*> params() {
    auto p = backbone_.params();
    for (Param* q : agn_.params()) p.push_back(q);
    for (Param* q : head_.params()) p.push_back(q);
    return p;
  }

  [[nodiscard]] HeadConfig head_config(const GrayImage& img) const {
    const int s = backbone_.total_stride();
    return {cfg_.base_side, s, img.width / s, img.height / s};
  }

  [[nodiscard]] LevelGraph level_graph(const Sample& s) const {
    const int st = backbone_.total_stride();
    return build_level_graph(s.landmarks, s.examined.height / st, s.examined.width / st, st, cfg_);
  }

  struct Forward {
    BackboneCache ce, ca, cc;
    FeatureMap fe, fa, fc;
    bool have_a = false, have_c = false;
    LevelCache agn;
    Matrix y;
    Matrix out;
  };

  /// Runs the views this mode needs. Under a wiring that cuts a branch the
  /// corresponding views still run, so wired and unwired passes do the same
  /// arithmetic on what remains.
  Forward forward(const Sample& s, const LevelGraph& g, const Wiring& w, bool keep_cache) const {
    Forward f;
    f.fe = backbone_.forward(s.examined, keep_cache ? &f.ce : nullptr);
    if (mode_ == Mode::bgn_only || mode_ == Mode::full_agn) {
      f.fa = backbone_.forward(s.auxiliary, keep_cache ? &f.ca : nullptr);
      f.have_a = true;
    }
    if (mode_ == Mode::ign_only || mode_ == Mode::full_agn) {
      f.fc = backbone_.forward(s.contralateral, keep_cache ? &f.cc : nullptr);
      f.have_c = true;
    }
    const LevelInputs in{&f.fe.values, f.have_a ? &f.fa.values : nullptr, f.have_c ? &f.fc.values : nullptr};
    f.y = agn_.forward(g, s.examined_view, in, w, &f.agn);
    f.out = head_.forward(f.y);
    return f;
  }

  /// Forward + backward of one sample; gradients are added to the params,
  /// scaled by `scale`. Returns the loss.
  HeadLoss accumulate(const Sample& s, const Wiring& w, double scale = 1.0) {
    const LevelGraph g = level_graph(s);
    Forward f = forward(s, g, w, true);
    const auto targets = assign_targets(head_config(s.examined), s.gts);
    HeadLoss l = head_loss(f.out, targets);
    if (!std::isfinite(l.loss)) return l;
    if (scale != 1.0) l.d_out *= scale;
    const Matrix dy = head_.backward(f.y, l.d_out);
    const LevelInputs in{&f.fe.values, f.have_a ? &f.fa.values : nullptr, f.have_c ? &f.fc.values : nullptr};
    LevelGrads lg = agn_.backward(g, s.examined_view, in, w, f.agn, dy);
    backbone_.backward(f.ce, lg.d_fe);
    if (f.have_a && lg.d_fa.size()) backbone_.backward(f.ca, lg.d_fa);
    if (f.have_c && lg.d_fc.size()) backbone_.backward(f.cc, lg.d_fc);
    return l;
  }

  std::vector<Detection> detect(const Sample& s, const DecodeOptions& opt = {}) const {
    const LevelGraph g = level_graph(s);
    const Forward f = forward(s, g, {}, false);
    return decode_detections(f.out, head_config(s.examined), s.examined.width, s.examined.height, opt);
  }

  // Checkpoint: model shape, trainable params and the frozen geometric graph.
  void save(const std::string& path) {
    auto ps = params();
    Param hg("frozen.hg", agn_.hg());
    std::vector<const Param*> all(ps.begin(), ps.end());
    all.push_back(&hg);
    std::ofstream os(path);
    if (!os) fail("save checkpoint: cannot open '", path, "'");
    write_model_header(os, mode_, cfg_);
    write_params(os, all);
    if (!os) fail("save checkpoint: write failed for '", path, "'");
  }

  static void write_model_header(std::ostream& os, Mode mode, const ModelConfig& c) {
    auto list = [](const auto& v) {
      std::string s;
      for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
      return s;
    };
    os << std::setprecision(17) << "# mode " << to_string(mode) << "\n# base_side " << c.base_side << "\n# bgn_layers "
       << c.bgn_layers << "\n# bgn_k " << c.bgn_k << "\n# ign_layers " << c.ign_layers << "\n# ign_k " << c.ign_k
       << "\n# ign_branches " << list(c.ign_branches) << "\n# ign_self_loops " << (c.ign_self_loops ? 1 : 0)
       << "\n# backbone_widths " << list(c.backbone.widths) << "\n# backbone_strides " << list(c.backbone.strides) << '\n';
  }

 private:
  ModelConfig cfg_;
  Mode mode_;
  Backbone backbone_;
  AgnModule agn_;
  Head head_;
};

struct Checkpoint {
  Mode mode = Mode::single_view;
  ModelConfig config;
  Matrix hg;
  std::vector<NamedMatrix> params;
};

namespace detail {
inline std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(what, ": bad integer list '", s, "'");
    }
  }
  return out;
}
}  // namespace detail

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("read checkpoint: cannot open '", path, "'");
  Checkpoint c;
  bool have_mode = false;
  while (is.peek() == '#') {
    std::string line, hash, key, value;
    std::getline(is, line);
    std::istringstream ls(line);
    if (!(ls >> hash >> key >> value)) fail(path, ": malformed header line '", line, "'");
    auto num = [&] {
      try {
        return std::stod(value);
      } catch (const std::exception&) {
        fail(path, ": bad value for '", key, "'");
      }
    };
    auto triple = [&](std::array<int, 3>& dst) {
      const auto v = detail::parse_int_list(value, path + " " + key);
      if (v.size() != 3) fail(path, ": '", key, "' needs 3 entries");
      std::copy(v.begin(), v.end(), dst.begin());
    };
    if (key == "mode") {
      c.mode = parse_mode(value);
      have_mode = true;
    } else if (key == "base_side") c.config.base_side = num();
    else if (key == "bgn_layers") c.config.bgn_layers = static_cast<int>(num());
    else if (key == "bgn_k") c.config.bgn_k = static_cast<int>(num());
    else if (key == "ign_layers") c.config.ign_layers = static_cast<int>(num());
    else if (key == "ign_k") c.config.ign_k = static_cast<int>(num());
    else if (key == "ign_self_loops") c.config.ign_self_loops = num() != 0.0;
    else if (key == "ign_branches") c.config.ign_branches = detail::parse_int_list(value, path + " ign_branches");
    else if (key == "backbone_widths") triple(c.config.backbone.widths);
    else if (key == "backbone_strides") triple(c.config.backbone.strides);
    else fail(path, ": unknown header key '", key, "'");
  }
  if (!have_mode) fail(path, ": missing '# mode' line");
  c.config.validate();
  c.params = read_params(is);
  for (const auto& p : c.params)
    if (p.name == "frozen.hg") c.hg = p.value;
  if (c.hg.size() == 0) fail(path, ": checkpoint has no geometric graph");
  return c;
}

inline Detector load_detector(const std::string& path) {
  const Checkpoint c = read_checkpoint(path);
  Detector d(c.config, c.mode, c.hg);
  for (Param* p : d.params()) {
    auto it = std::find_if(c.params.begin(), c.params.end(), [&](const NamedMatrix& nm) { return nm.name == p->name; });
    if (it == c.params.end()) fail(path, ": missing param '", p->name, "'");
    if (!it->value.same_shape(p->value)) fail(path, ": shape mismatch for '", p->name, "'");
    p->value = it->value;
  }
  return d;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  int epochs = 30;
  int batch_size = 1;
  SgdOptions sgd{};
  std::uint64_t seed = 1;
  Wiring wiring{};
  bool verbose = false;
};

struct TrainReport {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
};

/// Plain SGD over the given samples. Each epoch visits them in a seeded
/// shuffled order; batch gradients are summed in that order.
inline TrainReport train(Detector& det, const std::vector<const Sample*>& samples, const TrainOptions& opt,
                         std::ostream* log = nullptr) {
  if (samples.empty()) fail("train: no training samples");
  if (opt.batch_size < 1 || opt.epochs < 0) fail("train: invalid batch size or epoch count");
  auto params = det.params();
  for (Param* p : params) {
    p->zero_grad();
    p->velocity.fill(0.0);
  }
  TrainReport rep;
  Rng order_rng(opt.seed ^ 0x0dd5eedULL);
  std::vector<std::size_t> order(samples.size());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.integer(0, static_cast<long long>(i) - 1))]);
    double sum = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
      const std::size_t e = std::min(order.size(), b + opt.batch_size);
      double batch_loss = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const Sample& s = *samples[order[i]];
        const HeadLoss l = det.accumulate(s, opt.wiring, 1.0 / static_cast<double>(e - b));
        if (!std::isfinite(l.loss))
          fail("train: non-finite loss (cls ", l.cls, ", box ", l.box, ") on case '", s.case_id, "' in epoch ", epoch,
               ", step ", b / opt.batch_size, ", mode ", to_string(det.mode()));
        batch_loss += l.loss;
      }
      batch_loss /= static_cast<double>(e - b);
      rep.step_losses.push_back(batch_loss);
      sum += batch_loss * static_cast<double>(e - b);
      sgd_step(params, opt.sgd);
    }
    rep.epoch_losses.push_back(sum / static_cast<double>(order.size()));
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *log << "[train " << to_string(det.mode()) << " seed " << opt.seed << "] epoch " << epoch + 1 << "/"
           << opt.epochs << " loss " << rep.epoch_losses.back() << " (" << secs << " s)\n"
           << std::flush;
    }
  }
  return rep;
}

struct EvalResult {
  FrocCurve froc;
  std::vector<std::vector<Detection>> detections;
};

inline EvalResult evaluate(const Detector& det, const std::vector<const Sample*>& samples, int jobs = 1,
                           const DecodeOptions& opt = {}) {
  EvalResult r;
  r.detections.resize(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) { r.detections[i] = det.detect(*samples[i], opt); });
  std::vector<std::vector<Box>> gts;
  for (const Sample* s : samples) gts.push_back(s->gts);
  r.froc = evaluate_froc(r.detections, gts);
  return r;
}

/// "mode <m>\nseed <s>\nR@0.5 <r>\n..." summary text.
inline std::string summary_text(Mode mode, std::uint64_t seed, const FrocCurve& c) {
  std::ostringstream os;
  os << "mode " << to_string(mode) << "\nseed " << seed << '\n';
  for (const auto& p : c.points) os << "R@" << p.fpi << ' ' << p.recall << '\n';
  return os.str();
}

}  // namespace agn
