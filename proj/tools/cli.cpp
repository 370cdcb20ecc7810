#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "nucseg/assignment.hpp"
#include "nucseg/config.hpp"
#include "nucseg/error.hpp"
#include "nucseg/gradcheck.hpp"
#include "nucseg/io.hpp"
#include "nucseg/losses.hpp"
#include "nucseg/metrics.hpp"
#include "nucseg/pipeline.hpp"
#include "nucseg/prompter_geom.hpp"
#include "nucseg/segmentors.hpp"

namespace nucseg::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Options shared by every subcommand plus the config fields it exposes as flags.
struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  int jobs = 1;
  std::vector<std::function<void(RunConfig&)>> overrides;
  std::function<int(const RunConfig&, std::ostream&)> action;

  // The flag shows the built-in default and only wins when given.
  template <typename T>
  void flag(const std::string& name, T& (*field)(RunConfig&), const std::string& help) {
    static const RunConfig defaults;
    auto value = std::make_shared<T>(field(const_cast<RunConfig&>(defaults)));
    CLI::Option* opt = app->add_option(name, *value, help)->capture_default_str();
    overrides.push_back([opt, value, field](RunConfig& cfg) {
      if (opt->count() > 0) field(cfg) = *value;
    });
  }
};

std::uint64_t parse_seed_env(const char* text) {
  std::uint64_t v = 0;
  const char* end = text + std::char_traits<char>::length(text);
  auto [ptr, ec] = std::from_chars(text, end, v);
  if (ec != std::errc() || ptr != end || ptr == text) {
    throw DataError(std::string("NUCSEG_SEED is not an unsigned integer: '") + text + "'");
  }
  return v;
}

RunConfig effective_config(const Command& cmd) {
  RunConfig cfg = cmd.config_path.empty() ? RunConfig{} : RunConfig::from_file(cmd.config_path);
  if (const char* env = std::getenv("NUCSEG_SEED"); env && *env) cfg.synth.seed = parse_seed_env(env);
  for (const auto& apply : cmd.overrides) apply(cfg);
  cfg.validate();
  return cfg;
}

json header(const RunConfig& cfg) {
  json j;
  j["version"] = NUCSEG_VERSION;
  j["config"] = cfg.to_json();
  return j;
}

void emit(const json& j, const std::string& out_path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    io::write_text(out_path, text);
  }
}

json counts_json(const DetectionCounts& c) {
  json j;
  j["precision"] = c.precision();
  j["recall"] = c.recall();
  j["f1"] = c.f1();
  j["tp"] = c.tp;
  j["fp"] = c.fp;
  j["fn"] = c.fn;
  return j;
}

json loss_report_json(const LossReport& r, bool with_gradients) {
  json j;
  j["total"] = r.total;
  json terms = json::array();
  for (const auto& t : r.terms) terms.push_back({{"name", t.name}, {"weight", t.weight}, {"value", t.value}});
  j["terms"] = terms;
  if (with_gradients) {
    json g = json::object();
    for (const auto& [name, values] : r.gradients) g[name] = values;
    j["gradients"] = g;
  }
  return j;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().filename());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Runs body(i) for i in [0, n) on `jobs` threads; rethrows the first failure by index.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (std::size_t i = cursor++; i < n; i = cursor++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void add_common(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "JSON run configuration");
  cmd.app->add_option("--jobs", cmd.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

// Field accessors for Command::flag.
int& f_width(RunConfig& c) { return c.synth.width; }
int& f_height(RunConfig& c) { return c.synth.height; }
int& f_min_count(RunConfig& c) { return c.synth.min_count; }
int& f_max_count(RunConfig& c) { return c.synth.max_count; }
double& f_min_axis(RunConfig& c) { return c.synth.min_axis; }
double& f_max_axis(RunConfig& c) { return c.synth.max_axis; }
double& f_overlap_frac(RunConfig& c) { return c.synth.overlap; }
int& f_synth_classes(RunConfig& c) { return c.synth.num_classes; }
std::uint64_t& f_seed(RunConfig& c) { return c.synth.seed; }
int& f_n_images(RunConfig& c) { return c.n_images; }
int& f_step(RunConfig& c) { return c.prompter.step; }
double& f_alpha(RunConfig& c) { return c.prompter.alpha; }
double& f_beta(RunConfig& c) { return c.prompter.beta; }
double& f_gamma(RunConfig& c) { return c.prompter.gamma; }
double& f_omega(RunConfig& c) { return c.sam_loss.omega; }
double& f_focal_gamma(RunConfig& c) { return c.sam_loss.focal_gamma; }
double& f_focal_alpha(RunConfig& c) { return c.sam_loss.focal_alpha; }
double& f_dice_smooth(RunConfig& c) { return c.sam_loss.dice_smooth; }
int& f_tile(RunConfig& c) { return c.pipeline.tile; }
int& f_tile_overlap(RunConfig& c) { return c.pipeline.overlap; }
int& f_k_neg(RunConfig& c) { return c.pipeline.k_negatives; }
double& f_prob_threshold(RunConfig& c) { return c.pipeline.prob_threshold; }
double& f_nms_iou(RunConfig& c) { return c.pipeline.nms_iou; }
double& f_radius_px(RunConfig& c) { return c.metrics.radius_px; }
double& f_mpp(RunConfig& c) { return c.metrics.mpp; }
int& f_metric_classes(RunConfig& c) { return c.metrics.classes; }

struct Cli {
  CLI::App app{"Prompt-driven nucleus instance segmentation: geometry, assignment, losses, pipeline and metrics",
               "nucseg"};
  std::deque<Command> commands;

  // Storage for subcommand-specific values.
  std::string out, out_dir, candidates, gt, targets_out, offsets, pyramid, pred, target, aux_pred, aux_gt, prompts,
      prob, backend = "oracle", replay_dir, pred_dir, gt_dir;
  bool oracle = false, gradients = false;
  int width = 0, height = 0;
  double iou_pred = 0.0, tolerance = 1e-4, radius_um = 0.0;
  std::uint64_t check_seed = 0;
  std::size_t check_points = 100;

  Command& add(CLI::App* parent, const std::string& name, const std::string& help) {
    commands.push_back({});
    Command& cmd = commands.back();
    cmd.app = parent->add_subcommand(name, help);
    add_common(cmd);
    return cmd;
  }

  Cli() {
    app.set_version_flag("--version", NUCSEG_VERSION);
    app.require_subcommand(1);
    setup_gen_synth();
    setup_anchors();
    setup_match_targets();
    setup_loss();
    setup_grad_check();
    setup_pipeline();
    setup_tile_plan();
    setup_eval();
  }

  void setup_gen_synth() {
    Command& c = add(&app, "gen-synth", "Generate a synthetic corpus of instance maps, points and probability maps");
    c.app->add_option("--out-dir", out_dir, "Output directory")->required();
    c.flag("--width", f_width, "Image width");
    c.flag("--height", f_height, "Image height");
    c.flag("--min-count", f_min_count, "Minimum nuclei per image");
    c.flag("--max-count", f_max_count, "Maximum nuclei per image");
    c.flag("--min-axis", f_min_axis, "Minimum ellipse semi-axis (px)");
    c.flag("--max-axis", f_max_axis, "Maximum ellipse semi-axis (px)");
    c.flag("--overlap", f_overlap_frac, "Fraction of nuclei overlapping a neighbor");
    c.flag("--classes", f_synth_classes, "Number of nucleus classes");
    c.flag("--seed", f_seed, "Base seed; image i uses seed + i");
    c.flag("--n-images", f_n_images, "Number of images");
    c.action = [this](const RunConfig& cfg, std::ostream& os) {
      const fs::path dir = out_dir;
      fs::create_directories(dir);
      json images = json::array();
      for (int i = 0; i < cfg.n_images; ++i) {
        SynthConfig sc = cfg.synth;
        sc.seed = cfg.synth.seed + static_cast<std::uint64_t>(i);
        const SynthImage img = generate_synthetic(sc);
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04d", i);
        const std::string stem = name;
        json prov = header(cfg);
        prov["seed"] = sc.seed;
        io::write_instance_map(dir / (stem + ".png"), img.map, prov.dump());
        io::write_points_csv(dir / (stem + ".points.csv"), img.points);
        io::write_probability_map(dir / (stem + ".prob.json"), probability_from_mask(binary_mask_from_instances(img.map)));
        json e;
        e["name"] = stem;
        e["seed"] = sc.seed;
        e["instances"] = img.points.size();
        e["achieved_overlap"] = img.achieved_overlap;
        e["map"] = stem + ".png";
        e["classes"] = stem + ".classes.json";
        e["points"] = stem + ".points.csv";
        e["prob"] = stem + ".prob.json";
        images.push_back(e);
      }
      json manifest = header(cfg);
      manifest["images"] = images;
      io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
      emit(manifest, "", os);
      return 0;
    };
  }

  void setup_anchors() {
    Command& c = add(&app, "anchors", "Anchor grid, optional offset refinement and feature sampling");
    c.app->add_option("--width", width, "Image width")->required();
    c.app->add_option("--height", height, "Image height")->required();
    c.flag("--step", f_step, "Anchor spacing (px)");
    c.app->add_option("--offsets", offsets, "CSV dx,dy with one row per anchor");
    c.app->add_option("--pyramid", pyramid, "Feature pyramid manifest to sample at the anchors");
    c.app->add_option("--out", out, "Write JSON here instead of stdout");
    c.action = [this](const RunConfig& cfg, std::ostream& os) {
      const AnchorGrid grid = build_anchor_grid(width, height, cfg.prompter.step);
      json j = header(cfg);
      j["width"] = width;
      j["height"] = height;
      j["step"] = grid.step;
      j["cols"] = grid.cols;
      j["rows"] = grid.rows;
      json anchors = json::array();
      for (const auto& a : grid.anchors) anchors.push_back({a.x, a.y});
      j["anchors"] = anchors;
      std::vector<Point> where = grid.anchors;
      if (!offsets.empty()) {
        const auto off = io::read_offsets_csv(offsets);
        const RefinedAnchors refined = apply_offsets(grid, off);
        json pos = json::array();
        for (const auto& p : refined.positions) pos.push_back({p.x, p.y});
        j["positions"] = pos;
        where = refined.positions;
      }
      if (!pyramid.empty()) {
        const FeaturePyramid pyr = io::read_feature_pyramid(pyramid, width, height);
        json feats = json::array();
        for (const auto& p : where) feats.push_back(sample_pyramid(pyr, p));
        j["features"] = feats;
      }
      emit(j, out, os);
      return 0;
    };
  }

  void setup_match_targets() {
    Command& c = add(&app, "match-targets", "One-to-one Hungarian assignment of prompt candidates to ground truth");
    c.app->add_option("--candidates", candidates, "CSV x,y,logit_0..logit_C")->required();
    c.app->add_option("--gt", gt, "CSV x,y,class,score of ground-truth points")->required();
    c.flag("--alpha", f_alpha, "Distance weight in the matching cost");
    c.app->add_flag("--oracle", oracle, "Use exhaustive search (min(M, N) <= 8)");
    c.app->add_option("--out", out, "Write matching JSON here instead of stdout");
    c.app->add_option("--targets-out", targets_out, "Write per-anchor targets CSV");
    c.action = [this](const RunConfig& cfg, std::ostream& os) {
      const auto cands = io::read_candidates_csv(candidates);
      const auto gts = io::read_points_csv(gt);
      const Matrix w = build_weight_matrix(cands, gts, cfg.prompter.alpha);
      const Matching m = oracle ? exhaustive_match(w) : hungarian_match(w);
      json j = header(cfg);
      j["mode"] = oracle ? "exhaustive" : "hungarian";
      j["num_anchors"] = cands.size();
      j["num_gt"] = gts.size();
      json pairs = json::array();
      for (const auto& [a, g] : m.pairs) pairs.push_back({a, g});
      j["pairs"] = pairs;
      j["unmatched_anchors"] = m.unmatched_anchors;
      j["unassigned_gts"] = m.unassigned_gts;
      j["total_weight"] = m.total_weight;
      if (!targets_out.empty()) {
        const TargetSet t = derive_targets(m, gts, cands.size());
        std::string csv = "anchor,class,x,y,gt_index\n";
        for (std::size_t a = 0; a < t.anchors.size(); ++a) {
          const auto& at = t.anchors[a];
          csv += std::to_string(a) + ",";
          if (at.cls) {
            csv += std::to_string(*at.cls) + "," + io::format_double(at.position->x) + "," +
                   io::format_double(at.position->y) + "," + std::to_string(*at.gt_index);
          } else {
            csv += ",,,";
          }
          csv += "\n";
        }
        io::write_text(targets_out, csv);
      }
      emit(j, out, os);
      return 0;
    };
  }

  void setup_loss() {
    CLI::App* loss = app.add_subcommand("loss", "Evaluate a loss and its gradients");
    loss->require_subcommand(1);

    Command& s = add(loss, "sam", "Segmentor fine-tuning loss: omega * focal + dice + IoU MSE");
    s.app->add_option("--pred", pred, "Predicted probability map manifest")->required();
    s.app->add_option("--target", target, "Target mask PNG")->required();
    s.app->add_option("--iou-pred", iou_pred, "Predicted IoU")->required();
    s.flag("--omega", f_omega, "Focal term weight");
    s.flag("--focal-gamma", f_focal_gamma, "Focal exponent");
    s.flag("--focal-alpha", f_focal_alpha, "Focal class balance");
    s.flag("--dice-smooth", f_dice_smooth, "Dice smoothing constant");
    s.app->add_flag("--gradients", gradients, "Include gradients in the output");
    s.app->add_option("--out", out, "Write JSON here instead of stdout");
    s.action = [this](const RunConfig& cfg, std::ostream& os) {
      const ProbabilityMap p = io::read_probability_map(pred);
      const BinaryMask t = io::read_mask_png(target);
      if (p.width != t.width || p.height != t.height) throw DataError("loss: prediction and target sizes differ");
      const LossReport r = sam_loss(p, t, iou_pred, cfg.sam_loss);
      json j = header(cfg);
      j["loss"] = "sam";
      j["actual_iou"] = thresholded_iou(to_doubles(p), t.bits);
      for (auto& [k, v] : loss_report_json(r, gradients).items()) j[k] = v;
      emit(j, out, os);
      return 0;
    };

    Command& p = add(loss, "prompter", "Prompter loss: regression + classification + auxiliary segmentation");
    p.app->add_option("--candidates", candidates, "CSV x,y,logit_0..logit_C of refined prompts")->required();
    p.app->add_option("--gt", gt, "CSV of ground-truth points")->required();
    p.app->add_option("--aux-pred", aux_pred, "Auxiliary probability map manifest");
    p.app->add_option("--aux-gt", aux_gt, "Auxiliary target mask PNG");
    p.flag("--alpha", f_alpha, "Distance weight in the matching cost");
    p.flag("--beta", f_beta, "Background classification weight");
    p.flag("--gamma", f_gamma, "Regression weight");
    p.app->add_flag("--gradients", gradients, "Include gradients in the output");
    p.app->add_option("--out", out, "Write JSON here instead of stdout");
    p.action = [this](const RunConfig& cfg, std::ostream& os) {
      if (aux_pred.empty() != aux_gt.empty()) throw InvalidArgument("--aux-pred and --aux-gt go together");
      const auto cands = io::read_candidates_csv(candidates);
      const auto gts = io::read_points_csv(gt);
      const Matching m = hungarian_match(build_weight_matrix(cands, gts, cfg.prompter.alpha));
      PrompterLossInputs in;
      in.targets = derive_targets(m, gts, cands.size());
      in.num_logits = cands.empty() ? 0 : cands.front().logits.size();
      for (const auto& c : cands) {
        if (c.logits.size() != in.num_logits) throw DataError(candidates + ": ragged logit rows");
        in.positions.push_back(c.position.x);
        in.positions.push_back(c.position.y);
        in.logits.insert(in.logits.end(), c.logits.begin(), c.logits.end());
      }
      if (!aux_pred.empty()) {
        const ProbabilityMap ap = io::read_probability_map(aux_pred);
        const BinaryMask ag = io::read_mask_png(aux_gt);
        if (ap.width != ag.width || ap.height != ag.height) throw DataError("loss: auxiliary map sizes differ");
        in.aux_pred = to_doubles(ap);
        in.aux_gt = ag.bits;
      }
      PrompterLossConfig lc;
      lc.beta = cfg.prompter.beta;
      lc.gamma = cfg.prompter.gamma;
      const LossReport r = prompter_total_loss(in, lc);
      json j = header(cfg);
      j["loss"] = "prompter";
      j["num_matched"] = in.targets.num_matched();
      for (auto& [k, v] : loss_report_json(r, gradients).items()) j[k] = v;
      emit(j, out, os);
      return 0;
    };
  }

  void setup_grad_check() {
    Command& c = add(&app, "grad-check", "Compare analytic gradients of every loss against finite differences");
    c.app->add_option("--seed", check_seed, "Seed for the random test points")->capture_default_str();
    c.app->add_option("--points", check_points, "Random points per loss")->capture_default_str();
    c.app->add_option("--tolerance", tolerance, "Largest accepted relative error")->capture_default_str();
    c.app->add_option("--out", out, "Write JSON here instead of stdout");
    c.action = [this](const RunConfig& cfg, std::ostream& os) {
      const auto results = run_gradient_checks(check_seed, check_points);
      json j = header(cfg);
      j["tolerance"] = tolerance;
      json losses = json::object();
      std::string failed;
      for (const auto& r : results) {
        losses[r.loss] = {{"points", r.points}, {"max_relative_error", r.max_relative_error}};
        if (!(r.max_relative_error <= tolerance)) failed += (failed.empty() ? "" : ", ") + r.loss;
      }
      j["losses"] = losses;
      j["passed"] = failed.empty();
      emit(j, out, os);
      if (!failed.empty()) throw InvariantError("gradient check failed for: " + failed);
      return 0;
    };
  }

  void setup_pipeline() {
    Command& c = add(&app, "pipeline", "Tiled prompt -> mask -> instance map inference");
    c.app->add_option("--prompts", prompts, "CSV x,y,class,score of prompts")->required();
    c.app->add_option("--prob", prob, "Foreground probability map manifest")->required();
    c.app->add_option("--gt", gt, "Ground-truth instance map (oracle and blob backends)");
    c.app->add_option("--backend", backend, "Segmentor backend")
        ->capture_default_str()
        ->check(CLI::IsMember({"oracle", "blob", "replay"}));
    c.app->add_option("--replay-dir", replay_dir, "Directory of mask_<row>.png files (replay backend)");
    c.flag("--tile", f_tile, "Tile size T");
    c.flag("--overlap", f_tile_overlap, "Tile overlap");
    c.flag("--k-neg", f_k_neg, "Negative prompts per positive");
    c.flag("--prob-threshold", f_prob_threshold, "Prompt filtering threshold");
    c.flag("--nms-iou", f_nms_iou, "Mask NMS IoU threshold");
    c.app->add_option("--out", out, "Output instance map PNG")->required();
    c.action = [this, &c](const RunConfig& cfg, std::ostream& os) {
      const ProbabilityMap pm = io::read_probability_map(prob);
      const auto ps = io::read_prompts_csv(prompts);
      std::unique_ptr<SegmentorBackend> be;
      if (backend == "replay") {
        if (replay_dir.empty()) throw InvalidArgument("--backend replay needs --replay-dir");
        be = std::make_unique<ReplaySegmentor>(replay_dir, pm.width, pm.height);
      } else {
        if (gt.empty()) throw InvalidArgument("--backend " + backend + " needs --gt");
        InstanceMap g = io::read_instance_map(gt);
        if (g.width != pm.width || g.height != pm.height) throw DataError("pipeline: --gt and --prob sizes differ");
        if (backend == "oracle") {
          be = std::make_unique<OracleSegmentor>(std::move(g));
        } else {
          be = std::make_unique<BlobSegmentor>(std::move(g));
        }
      }
      PipelineTrace trace;
      const InstanceMap result = run_pipeline(pm.width, pm.height, ps, pm, *be, cfg.pipeline, c.jobs, &trace);
      json prov = header(cfg);
      prov["backend"] = backend;
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      io::write_instance_map(out, result, prov.dump());
      json j = header(cfg);
      j["backend"] = backend;
      j["width"] = pm.width;
      j["height"] = pm.height;
      j["prompts"] = ps.size();
      j["kept_prompts"] = trace.kept_prompts.size();
      j["nonempty_masks"] = std::count_if(trace.results.begin(), trace.results.end(),
                                          [](const SegmentationResult& r) { return !r.mask.empty(); });
      j["after_nms"] = trace.after_nms.size();
      j["instances"] = result.max_id();
      emit(j, "", os);
      return 0;
    };
  }

  void setup_tile_plan() {
    Command& c = add(&app, "tile-plan", "Sliding-window tile layout for an image size");
    c.app->add_option("width", width, "Image width")->required();
    c.app->add_option("height", height, "Image height")->required();
    c.flag("--tile", f_tile, "Tile size T");
    c.flag("--overlap", f_tile_overlap, "Tile overlap");
    c.app->add_option("--out", out, "Write JSON here instead of stdout");
    c.action = [this](const RunConfig& cfg, std::ostream& os) {
      const TileLayout layout = plan_tiles(width, height, cfg.pipeline.tile, cfg.pipeline.overlap);
      json j = header(cfg);
      j["width"] = width;
      j["height"] = height;
      j["tile"] = layout.tile;
      j["overlap"] = layout.overlap;
      j["stride"] = layout.tile - layout.overlap;
      j["count"] = layout.tiles.size();
      json tiles = json::array();
      for (const auto& t : layout.tiles) tiles.push_back({t.x0, t.y0, t.x1, t.y1});
      j["tiles"] = tiles;
      emit(j, out, os);
      return 0;
    };
  }

  void setup_eval() {
    Command& c = add(&app, "eval", "PQ, mPQ, AJI and detection F1 of predicted against ground-truth maps");
    c.app->add_option("--pred-dir", pred_dir, "Directory of predicted instance maps")->required();
    c.app->add_option("--gt-dir", gt_dir, "Directory of ground-truth instance maps")->required();
    c.flag("--classes", f_metric_classes, "Number of classes C");
    c.flag("--radius-px", f_radius_px, "Detection match radius (px)");
    c.app->add_option("--radius-um", radius_um, "Detection match radius in microns (converted with --mpp)")
        ->excludes("--radius-px");
    c.flag("--mpp", f_mpp, "Microns per pixel");
    c.app->add_option("--out", out, "Write the report here instead of stdout");
    c.action = [this, &c](const RunConfig& in_cfg, std::ostream& os) {
      RunConfig cfg = in_cfg;
      if (c.app->count("--radius-um") > 0) {
        if (!(radius_um > 0.0)) throw InvalidArgument("--radius-um must be > 0");
        cfg.metrics.radius_px = radius_um / cfg.metrics.mpp;
      }
      const int classes = cfg.metrics.classes;
      const auto names = list_pngs(gt_dir);
      if (names.empty()) throw DataError(gt_dir + " holds no .png instance maps");
      std::vector<ImageAccumulator> accs(names.size());
      parallel_for(names.size(), c.jobs, [&](std::size_t i) {
        const fs::path gp = fs::path(gt_dir) / names[i];
        const fs::path pp = fs::path(pred_dir) / names[i];
        if (!fs::exists(pp)) throw DataError("missing prediction " + pp.string());
        const InstanceMap g = io::read_instance_map(gp);
        const InstanceMap p = io::read_instance_map(pp);
        if (g.width != p.width || g.height != p.height) {
          throw DataError(names[i].string() + ": prediction and ground truth sizes differ");
        }
        accs[i] = evaluate_image(p, g, classes, cfg.metrics.radius_px, names[i].stem().string());
      });
      const EvalReport rep = aggregate_reports(accs, classes, cfg.metrics.radius_px);
      json j = header(cfg);
      j["images"] = names.size();
      j["bPQ"] = rep.bpq;
      j["bDQ"] = rep.binary.dq();
      j["bSQ"] = rep.binary.sq();
      j["mPQ"] = rep.mpq.mpq;
      json per_class = json::object();
      for (const auto& [cls, v] : rep.mpq.per_class) per_class[std::to_string(cls)] = v ? json(*v) : json(nullptr);
      j["per_class_pq"] = per_class;
      j["AJI"] = rep.aji;
      json det = counts_json(rep.detection);
      det["radius_px"] = cfg.metrics.radius_px;
      json det_cls = json::object();
      for (int k = 0; k < classes; ++k) det_cls[std::to_string(k + 1)] = counts_json(rep.detection_per_class[k]);
      det["per_class"] = det_cls;
      j["detection"] = det;
      json per_image = json::array();
      for (const auto& a : rep.images) {
        json e;
        e["name"] = a.name;
        e["bPQ"] = a.binary.pq();
        e["tp"] = a.binary.tp;
        e["fp"] = a.binary.fp;
        e["fn"] = a.binary.fn;
        e["mPQ"] = mpq_from_stats(a.per_class).mpq;
        e["AJI"] = a.aji.value();
        e["detection_f1"] = a.detection.f1();
        per_image.push_back(e);
      }
      j["per_image"] = per_image;
      emit(j, out, os);
      return 0;
    };
  }
};

void report_error(std::ostream& err, int code, const char* kind, const std::string& message) {
  json j;
  j["error"] = {{"code", code}, {"kind", kind}, {"message", message}};
  err << j.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli;
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    cli.app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = cli.app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    for (auto& cmd : cli.commands) {
      if (cmd.app->parsed()) return cmd.action(effective_config(cmd), out);
    }
    err << cli.app.help();
    return 1;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const InvariantError& e) {
    report_error(err, 3, "invariant_violation", e.what());
    return 3;
  } catch (const std::exception& e) {
    report_error(err, 2, "data_error", e.what());
    return 2;
  }
}

}  // namespace nucseg::cli
