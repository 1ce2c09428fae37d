// agn: phantom generation, preprocessing, graph building, training,
// evaluation, visualization and self-verification.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include "agn/train.hpp"
#include "verify_suites.hpp"

namespace fs = std::filesystem;
using namespace agn;

namespace {

// ---------------------------------------------------------------------------
// Shared option groups

struct ModelFlags {
  int bgn_layers = ModelConfig{}.bgn_layers;
  int bgn_k = ModelConfig{}.bgn_k;
  int ign_layers = ModelConfig{}.ign_layers;
  int ign_k = ModelConfig{}.ign_k;
  std::vector<int> ign_branches = ModelConfig{}.ign_branches;
  double base_side = 0.0;  // 0: median mass diameter of the training split

  void add(CLI::App* c) {
    c->add_option("--bgn-layers", bgn_layers, "Bipartite graph convolution layers")->capture_default_str();
    c->add_option("--bgn-k", bgn_k, "Nearest landmarks per pixel for the bipartite graph maps")->capture_default_str();
    c->add_option("--ign-layers", ign_layers, "Inception graph convolution layers")->capture_default_str();
    c->add_option("--ign-k", ign_k, "Nearest landmarks per pixel for the inception graph maps")->capture_default_str();
    c->add_option("--ign-branches", ign_branches, "Neighbourhood sizes of the inception branches")->capture_default_str();
    c->add_option("--base-side", base_side, "Base box side in pixels (0 = median training mass diameter)")
        ->capture_default_str();
  }

  [[nodiscard]] ModelConfig config() const {
    ModelConfig m;
    m.bgn_layers = bgn_layers;
    m.bgn_k = bgn_k;
    m.ign_layers = ign_layers;
    m.ign_k = ign_k;
    m.ign_branches = ign_branches;
    if (base_side > 0.0) m.base_side = base_side;
    return m;
  }
};

int g_jobs = 1;

/// Global options plus the chosen command's, in config-file syntax.
void log_resolved(const CLI::App& app) {
  std::cerr << "# resolved config (flags > config file > defaults)\n";
  std::cerr << "jobs=" << g_jobs << '\n';
  for (const CLI::App* sub : app.get_subcommands())
    std::cerr << '[' << sub->get_name() << "]\n" << sub->config_to_str(true, false);
  std::cerr << std::flush;
}

std::string mode_list() {
  return "single_view, bgn_only, ign_only, full_agn";
}

CLI::Option* add_mode(CLI::App* c, std::string& mode) {
  return c->add_option("--mode", mode, "Detector mode: " + mode_list())
      ->check(CLI::IsMember({"single_view", "bgn_only", "ign_only", "full_agn"}))
      ->capture_default_str();
}

/// Training samples of a manifest, with dataset warnings on stderr.
Dataset load(const fs::path& manifest, const std::string& only_split = "") {
  Dataset d = load_dataset(manifest, g_jobs, {}, only_split);
  for (const auto& w : d.warnings) std::cerr << "warning: " << w << '\n';
  return d;
}

// ---------------------------------------------------------------------------
// phantom

void cmd_phantom(std::size_t n, std::uint64_t seed, const fs::path& out, bool force, PhantomConfig cfg) {
  if (n == 0) fail("phantom: --n must be >= 1");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) fail("phantom: output directory '", out.string(), "' is not empty (use --force to replace it)");
    fs::remove_all(out);
  }
  cfg.seed = seed;
  const fs::path manifest = generate_dataset(cfg, n, {}, out, g_jobs);
  std::cout << manifest.string() << '\n';
}

// ---------------------------------------------------------------------------
// landmarks

void draw_disc(GrayImage& img, Point2 c, double r, std::uint8_t v) {
  for (int y = static_cast<int>(c.y - r - 1); y <= static_cast<int>(c.y + r + 1); ++y)
    for (int x = static_cast<int>(c.x - r - 1); x <= static_cast<int>(c.x + r + 1); ++x)
      if (x >= 0 && y >= 0 && x < img.width && y < img.height && std::hypot(x + 0.5 - c.x, y + 0.5 - c.y) <= r)
        img.at(x, y) = v;
}

void draw_line(GrayImage& img, const PectoralLine& l, std::uint8_t v) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (std::abs(l.signed_distance(x + 0.5, y + 0.5)) < 0.75) img.at(x, y) = v;
}

void cmd_landmarks(const fs::path& image, std::string view_s, std::string side_s, const fs::path& out_prefix) {
  const std::string stem = image.stem().string();
  if (view_s == "auto") view_s = stem.find("mlo") != std::string::npos ? "MLO" : "CC";
  if (side_s == "auto") side_s = !stem.empty() && stem[0] == 'r' ? "r" : "l";
  const ViewType view = parse_view_type(view_s);
  const bool right = side_s == "r";
  GrayImage img = read_pgm(image.string());
  if (right) img = mirror_horizontal(img);
  const ViewGeometry g = preprocess_view(img, view);
  for (const auto& w : g.warnings) std::cerr << "warning: " << w << '\n';

  GrayImage overlay = img;
  if (view == ViewType::MLO) draw_line(overlay, g.line, 255);
  for (const auto& p : g.landmarks.points) draw_disc(overlay, p, 1.6, 255);
  draw_disc(overlay, {g.nipple.x + 0.5, g.nipple.y + 0.5}, 2.5, 0);
  if (right) overlay = mirror_horizontal(overlay);

  if (!out_prefix.parent_path().empty()) fs::create_directories(out_prefix.parent_path());
  const std::string lm_path = out_prefix.string() + ".landmarks.txt", ov_path = out_prefix.string() + ".overlay.pgm";
  write_landmarks(lm_path, g.landmarks);
  write_pgm(ov_path, overlay);
  std::cout << g.landmarks.count() << " landmarks (" << to_string(view) << ", canonical orientation)\n"
            << lm_path << '\n'
            << ov_path << '\n';
}

// ---------------------------------------------------------------------------
// build-geograph

void cmd_build_geograph(const fs::path& manifest, const std::string& split, const fs::path& out) {
  if (split != "train") fail("build-geograph: the geometric graph is built from the training split only (got '", split, "')");
  const Dataset d = load(manifest, "train");
  const auto tr = d.split("train");
  if (tr.empty()) fail("build-geograph: manifest '", manifest.string(), "' has no usable training cases");
  Warnings w;
  const FrequencyMatrix f = build_frequency(tr, &w);
  for (const auto& s : w) std::cerr << "warning: " << s << '\n';
  const Matrix hg = normalize_geometric(f);
  write_geometric_graph(out.string(), f, hg);
  std::cout << out.string() << " (" << hg.rows() << " CC x " << hg.cols() << " MLO nodes, " << sum(f.eps)
            << " links from " << tr.size() << " training cases)\n";
}

// ---------------------------------------------------------------------------
// train

Matrix graph_for(Mode mode, const std::string& geograph) {
  if (!geograph.empty()) return read_geometric_graph(geograph).hg;
  if (uses_bgn(mode))
    fail("train: mode ", to_string(mode), " needs a geometric graph; run 'agn build-geograph' and pass --geograph");
  // The shape alone matters when no bipartite graph is used.
  return Matrix(static_cast<std::size_t>(LandmarkConfig::cc_default().expected_count()),
                static_cast<std::size_t>(LandmarkConfig::mlo_default().expected_count()));
}

void cmd_train(const fs::path& manifest, Mode mode, std::uint64_t seed, const std::string& geograph, ModelConfig mc,
               bool auto_base, TrainOptions opt, const fs::path& out) {
  const Matrix hg = graph_for(mode, geograph);
  const Dataset d = load(manifest, "train");
  const auto tr = d.split("train");
  if (tr.empty()) fail("train: no usable training cases in '", manifest.string(), "'");
  if (auto_base) mc.base_side = median_mass_diameter(tr);
  Detector det(mc, mode, hg);
  det.init(seed);
  opt.seed = seed;
  std::cerr << "training " << to_string(mode) << " on " << tr.size() << " cases, base box " << mc.base_side << " px\n";
  train(det, tr, opt, &std::cerr);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  det.save(out.string());
  std::cout << out.string() << '\n';
}

// ---------------------------------------------------------------------------
// eval

/// "case_id x y w h score" per line.
std::map<std::string, std::vector<Detection>> read_detections(const fs::path& file) {
  std::ifstream is(file);
  if (!is) fail("eval: cannot open detections '", file.string(), "'");
  std::map<std::string, std::vector<Detection>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    Detection d;
    if (!(ls >> id >> d.box.x >> d.box.y >> d.box.w >> d.box.h >> d.score))
      fail(file.string(), ":", n, ": expected 'case_id x y w h score'");
    out[id].push_back(d);
  }
  return out;
}

void cmd_eval(const fs::path& manifest, const std::string& split, const std::string& checkpoint,
              const std::string& detections, std::uint64_t seed, const fs::path& out_csv, std::string summary) {
  if (checkpoint.empty() == detections.empty()) fail("eval: pass exactly one of --checkpoint or --detections");
  const Dataset d = load(manifest, split);
  const auto samples = d.split(split);
  if (samples.empty()) fail("eval: no usable '", split, "' cases in '", manifest.string(), "'");
  FrocCurve froc;
  Mode mode = Mode::single_view;
  if (!checkpoint.empty()) {
    const Detector det = load_detector(checkpoint);
    mode = det.mode();
    froc = evaluate(det, samples, g_jobs).froc;
  } else {
    const auto by_case = read_detections(detections);
    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<Box>> gts;
    for (const Sample* s : samples) {
      const auto it = by_case.find(s->case_id);
      preds.push_back(it == by_case.end() ? std::vector<Detection>{} : it->second);
      gts.push_back(s->gts);
    }
    froc = evaluate_froc(preds, gts);
  }
  if (!out_csv.parent_path().empty()) fs::create_directories(out_csv.parent_path());
  write_froc_csv(out_csv.string(), froc);
  if (summary.empty()) summary = (out_csv.parent_path() / (out_csv.stem().string() + ".summary.txt")).string();
  {
    std::ofstream os(summary);
    if (!os) fail("eval: cannot write summary '", summary, "'");
    os << summary_text(mode, seed, froc);
  }
  for (const auto& p : froc.points) {
    std::ostringstream r;
    r << std::fixed << std::setprecision(4) << p.recall;
    std::cout << "R@" << p.fpi << ' ' << r.str() << '\n';
  }
  std::cout << out_csv.string() << '\n' << summary << '\n';
}

// ---------------------------------------------------------------------------
// visualize

void cmd_visualize(const std::string& checkpoint, const fs::path& manifest, const std::string& case_id, int node,
                   const fs::path& out_dir, bool overlay) {
  Detector det = load_detector(checkpoint);
  const Dataset d = load(manifest);
  const Sample* s = nullptr;
  for (const auto& x : d.samples)
    if (x.case_id == case_id) s = &x;
  if (!s) fail("visualize: case '", case_id, "' not found (or dropped) in '", manifest.string(), "'");
  const int n_e = static_cast<int>(s->landmarks.examined.count());
  if (node < 0 || node >= n_e) fail("visualize: node index ", node, " out of range [0, ", n_e, ") for the examined view");

  const LevelGraph g = det.level_graph(*s);
  const auto f = det.forward(*s, g, {}, true);
  const int st = det.backbone().total_stride();
  const int h = g.height, w = g.width;
  const AgnModule& agn = det.agn();

  // Correspondence: one-hot query on an examined node through H^B, read out
  // over the auxiliary view's pixels.
  Matrix hb = f.agn.hb;
  const std::size_t n_nodes = agn.hg().rows() + agn.hg().cols();
  if (hb.rows() != n_nodes) hb = Matrix(n_nodes, n_nodes);  // ign_only runs no bipartite graph
  const ReverseMap rev_a(build_assignment(s->landmarks.auxiliary, h, w, det.config().bgn_k, st));
  const NodeRange sel_e = agn.examined_block(s->examined_view), sel_a = agn.auxiliary_block(s->examined_view);
  const GrayImage corr = visualize_correspondence(hb, rev_a, sel_e.begin + node, sel_a);

  Matrix att = f.agn.have_attention ? f.agn.fhat : Matrix(static_cast<std::size_t>(h * w), 1, 1.0);
  const GrayImage att_img = to_gray_minmax(att.values(), w, h);

  fs::create_directories(out_dir);
  const auto up = [&](const GrayImage& gi) { return upscale_nearest(gi, st); };
  const std::vector<std::pair<std::string, GrayImage>> files{
      {"correspondence.pgm", up(corr)},
      {"attention.pgm", up(att_img)},
      {"response_fe.pgm", up(response_map(f.fe.values, w, h))},
      {"response_y.pgm", up(response_map(f.y, w, h))},
  };
  for (const auto& [name, img] : files) {
    write_pgm((out_dir / name).string(), img);
    std::cout << (out_dir / name).string() << '\n';
  }
  if (overlay) {
    const auto p = out_dir / "attention_overlay.ppm";
    write_ppm(p.string(), overlay_red(s->examined, up(att_img), 0.5));
    std::cout << p.string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// verify

int cmd_verify(std::vector<std::string> suites, const verify::Options& o) {
  if (suites.empty()) suites = verify::suite_names();
  bool all = true;
  for (const auto& name : suites) {
    const auto r = verify::run_suite(name, o);
    for (const auto& c : r.checks)
      std::cout << (c.passed ? "PASS " : "FAIL ") << name << ": " << c.name << " (" << c.detail << ")\n";
    std::ostringstream t;
    t << std::fixed << std::setprecision(1) << r.seconds;
    std::cout << "suite " << name << ' ' << (r.passed() ? "passed" : "FAILED") << " in " << t.str() << " s" << std::endl;
    all = all && r.passed();
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view graph mass detection on synthetic mammograms", "agn"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML-style config file; [<command>] sections hold that command's flags");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--jobs", g_jobs, "Worker threads for per-case work")->check(CLI::PositiveNumber)->capture_default_str();

  // phantom
  auto* ph = app.add_subcommand("phantom", "Generate a phantom dataset");
  std::size_t ph_n = 0;
  std::uint64_t ph_seed = 1;
  std::string ph_out;
  bool ph_force = false;
  PhantomConfig pc;
  std::vector<int> mass_count{pc.mass_count_range.min, pc.mass_count_range.max};
  std::vector<int> nodules{pc.nodule_count_range.min, pc.nodule_count_range.max};
  std::vector<int> artifacts{pc.artifact_count_range.min, pc.artifact_count_range.max};
  std::vector<double> radius{pc.mass_radius_range.min, pc.mass_radius_range.max};
  std::vector<double> contrast{pc.mass_contrast_range.min, pc.mass_contrast_range.max};
  ph->add_option("--n", ph_n, "Number of cases")->required();
  ph->add_option("--seed", ph_seed, "Dataset seed")->capture_default_str();
  ph->add_option("out_dir,--out", ph_out, "Output directory")->required();
  ph->add_flag("--force", ph_force, "Replace a non-empty output directory");
  ph->add_option("--image-size", pc.image_size, "Image side in pixels")->capture_default_str();
  ph->add_option("--mlo-angle", pc.mlo_angle, "MLO projection angle, degrees")->capture_default_str();
  ph->add_option("--texture-scale", pc.gland_texture_scale, "Coarsest gland texture period, pixels")->capture_default_str();
  ph->add_option("--distortion", pc.distortion_amplitude, "Contralateral warp amplitude, pixels")->capture_default_str();
  ph->add_option("--mass-count", mass_count, "Masses per case: min max")->expected(2)->capture_default_str();
  ph->add_option("--mass-radius", radius, "Blob radius range, pixels")->expected(2)->capture_default_str();
  ph->add_option("--mass-contrast", contrast, "Blob contrast range")->expected(2)->capture_default_str();
  ph->add_option("--nodules", nodules, "Bilateral decoys per case: min max")->expected(2)->capture_default_str();
  ph->add_option("--artifacts", artifacts, "Single-view decoys per case: min max")->expected(2)->capture_default_str();
  ph->add_option("--occlusion-prob", pc.occlusion_prob, "Probability of a gland sheet over a mass")->capture_default_str();
  ph->add_option("--noise-sigma", pc.noise_sigma, "Pixel noise standard deviation")->capture_default_str();

  // landmarks
  auto* lm = app.add_subcommand("landmarks", "Preprocess one view and embed its landmarks");
  std::string lm_image, lm_view = "auto", lm_side = "auto", lm_out;
  lm->add_option("--image", lm_image, "PGM image")->required()->check(CLI::ExistingFile);
  lm->add_option("--view", lm_view, "CC, MLO or auto (from the file name)")
      ->check(CLI::IsMember({"auto", "CC", "MLO", "cc", "mlo"}))
      ->capture_default_str();
  lm->add_option("--side", lm_side, "l, r or auto (from the file name); right images are mirrored first")
      ->check(CLI::IsMember({"auto", "l", "r"}))
      ->capture_default_str();
  lm->add_option("--out", lm_out, "Output prefix")->required();

  // build-geograph
  auto* bg = app.add_subcommand("build-geograph", "Count mass co-occurrences on the training split");
  std::string bg_manifest, bg_out, bg_split = "train";
  bg->add_option("--manifest", bg_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  bg->add_option("--split", bg_split, "Split to count (training only)")->capture_default_str();
  bg->add_option("--out", bg_out, "Geometric graph file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a detector");
  std::string tr_manifest, tr_mode = "full_agn", tr_graph, tr_out;
  std::uint64_t tr_seed = 1;
  TrainOptions topt;
  ModelFlags tr_model;
  tr->add_option("--manifest", tr_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  add_mode(tr, tr_mode);
  tr->add_option("--seed", tr_seed, "Initialisation and shuffling seed")->capture_default_str();
  tr->add_option("--geograph", tr_graph, "Geometric graph file (required by bgn_only and full_agn)");
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--epochs", topt.epochs, "Epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
  tr->add_option("--batch", topt.batch_size, "Cases per SGD step")->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--lr", topt.sgd.lr, "Learning rate")->capture_default_str();
  tr->add_option("--momentum", topt.sgd.momentum, "Momentum")->capture_default_str();
  tr->add_option("--weight-decay", topt.sgd.weight_decay, "L2 weight decay")->capture_default_str();
  tr->add_option("--nesterov", topt.sgd.nesterov, "Nesterov momentum")->capture_default_str();
  tr_model.add(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "FROC evaluation of a checkpoint or of a detections file");
  std::string ev_manifest, ev_split = "test", ev_ckpt, ev_dets, ev_out, ev_summary;
  std::uint64_t ev_seed = 1;
  ev->add_option("--manifest", ev_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  ev->add_option("--checkpoint", ev_ckpt, "Trained checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--detections", ev_dets, "Detections file instead of a checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--seed", ev_seed, "Seed recorded in the summary")->capture_default_str();
  ev->add_option("--out", ev_out, "FROC CSV path")->required();
  ev->add_option("--summary", ev_summary, "Summary path (default: <out stem>.summary.txt)");

  // visualize
  auto* vz = app.add_subcommand("visualize", "Export correspondence, attention and response maps for one case");
  std::string vz_ckpt, vz_manifest, vz_case, vz_out;
  int vz_node = 0;
  bool vz_overlay = false;
  vz->add_option("--checkpoint", vz_ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  vz->add_option("--manifest", vz_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  vz->add_option("--case", vz_case, "Case id")->required();
  vz->add_option("--node", vz_node, "Examined-view node to query")->capture_default_str();
  vz->add_option("--out-dir", vz_out, "Output directory")->required();
  vz->add_flag("--overlay", vz_overlay, "Also write the attention map blended over the image (PPM)");

  // verify
  auto* vf = app.add_subcommand("verify", "Run self-check suites");
  std::vector<std::string> vf_suites;
  verify::Options vopt;
  vf->add_option("--suite", vf_suites, "Suites to run (default: all)")->check(CLI::IsMember(verify::suite_names()));
  vf->add_flag("--inject-fault", vopt.inject_fault, "Perturb one analytic gradient; the grad suite must fail");
  vf->add_option("--seed", vopt.seed, "Seed for the random cases")->capture_default_str();
  vf->add_option("--geograph-cases", vopt.geograph_cases, "Phantom cases for the geograph suite")->capture_default_str();

  // A misspelt command would otherwise surface as a stray positional.
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.starts_with("-")) {
      if (a == "--jobs" || a == "--config") ++i;
      continue;
    }
    if (!app.get_subcommand_no_throw(a)) {
      std::cerr << "error: unknown command '" << a << "'\n" << app.help();
      return static_cast<int>(CLI::ExitCodes::ExtrasError);
    }
    break;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  log_resolved(app);

  try {
    if (*ph) {
      auto range = [](const std::vector<int>& v) { return IntRange{v[0], v[1]}; };
      pc.mass_count_range = range(mass_count);
      pc.nodule_count_range = range(nodules);
      pc.artifact_count_range = range(artifacts);
      pc.mass_radius_range = {radius[0], radius[1]};
      pc.mass_contrast_range = {contrast[0], contrast[1]};
      cmd_phantom(ph_n, ph_seed, ph_out, ph_force, pc);
    } else if (*lm) {
      cmd_landmarks(lm_image, lm_view, lm_side, lm_out);
    } else if (*bg) {
      cmd_build_geograph(bg_manifest, bg_split, bg_out);
    } else if (*tr) {
      cmd_train(tr_manifest, parse_mode(tr_mode), tr_seed, tr_graph, tr_model.config(), tr_model.base_side <= 0.0, topt, tr_out);
    } else if (*ev) {
      cmd_eval(ev_manifest, ev_split, ev_ckpt, ev_dets, ev_seed, ev_out, ev_summary);
    } else if (*vz) {
      cmd_visualize(vz_ckpt, vz_manifest, vz_case, vz_node, vz_out, vz_overlay);
    } else if (*vf) {
      vopt.jobs = g_jobs;
      return cmd_verify(vf_suites, vopt);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
