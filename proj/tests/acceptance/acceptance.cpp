// One PASS/FAIL line per acceptance check; exits nonzero if any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "nucseg/assignment.hpp"
#include "nucseg/gradcheck.hpp"
#include "nucseg/io.hpp"
#include "nucseg/metrics.hpp"
#include "nucseg/pipeline.hpp"
#include "nucseg/segmentors.hpp"
#include "oracles.hpp"

using namespace nucseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

bool rel_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

Outcome matching_optimality() {
  std::mt19937_64 rng(2024);
  const auto t0 = Clock::now();
  int trials = 0, wrong = 0;
  while (trials < 1200) {
    const auto m = static_cast<std::size_t>(uniform_int(rng, 1, 10));
    const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 10));
    if (std::min(m, n) > 6) continue;
    Matrix w(m, n);
    const bool ties = trials % 2 == 0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        w(i, j) = ties ? static_cast<double>(uniform_int(rng, -2, 3)) : uniform01(rng) * 2.0 - 1.0;
    const auto brute = oracle::brute_force_matching(w);
    const Matching h = hungarian_match(w);
    if (h.total_weight != brute.total || h.pairs != brute.pairs) ++wrong;
    ++trials;
  }
  const double secs = seconds_since(t0);
  return {wrong == 0 && secs < 10.0,
          std::to_string(trials) + " matrices, " + std::to_string(wrong) + " mismatches, " + fmt("%.2f s", secs)};
}

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  int pairs = 0, wrong = 0;
  double worst = 0.0;
  auto check = [&](double a, double b) {
    const double d = std::abs(a - b) / std::max({1e-300, std::abs(a), std::abs(b)});
    worst = std::max(worst, a == b ? 0.0 : d);
    if (!rel_equal(a, b, 1e-12)) ++wrong;
  };
  for (std::uint64_t seed = 0; seed < 240; ++seed) {
    std::mt19937_64 rng(seed);
    const int w = static_cast<int>(uniform_int(rng, 1, 64)), h = static_cast<int>(uniform_int(rng, 1, 64));
    const int ng = static_cast<int>(uniform_int(rng, 0, 25));
    const InstanceMap gt = oracle::random_rect_map(seed, w, h, ng);
    // Half the predictions share rectangles with gt, so real matches occur.
    const InstanceMap pred = seed % 2 ? oracle::random_rect_map(seed, w, h, ng + static_cast<int>(uniform_int(rng, 0, 4)))
                                      : oracle::random_rect_map(seed + 7919, w, h, static_cast<int>(uniform_int(rng, 0, 25)));
    ++pairs;
    const auto naive = oracle::naive_matches(pred, gt);
    const auto fast = match_instances(pred, gt);
    if (naive.size() != fast.size()) {
      ++wrong;
    } else {
      for (std::size_t i = 0; i < fast.size(); ++i) {
        if (fast[i].pred != naive[i].pred || fast[i].gt != naive[i].gt) ++wrong;
        check(fast[i].iou, static_cast<double>(naive[i].inter) / static_cast<double>(naive[i].uni));
      }
    }
    const auto np = oracle::naive_pq(pred, gt);
    const PQStats s = compute_pq(pred, gt);
    if (s.tp != np.tp || s.fp != np.fp || s.fn != np.fn) ++wrong;
    check(s.pq(), np.pq());
    check(compute_aji(pred, gt), oracle::naive_aji(pred, gt));
  }
  const double secs = seconds_since(t0);
  return {wrong == 0 && secs < 30.0, std::to_string(pairs) + " map pairs, " + std::to_string(wrong) +
                                         " mismatches, worst rel diff " + fmt("%.3g", worst) + ", " +
                                         fmt("%.2f s", secs)};
}

Outcome gradient_checks() {
  const auto results = run_gradient_checks(77, 100);
  const std::set<std::string> required{"focal", "dice", "iou_mse", "cls", "reg"};
  std::set<std::string> seen;
  bool ok = true;
  std::string detail;
  for (const auto& r : results) {
    seen.insert(r.loss);
    ok = ok && r.points >= 100 && r.max_relative_error <= 1e-4;
    detail += r.loss + "=" + fmt("%.2e", r.max_relative_error) + " ";
  }
  for (const auto& name : required) ok = ok && seen.count(name);
  return {ok, detail + "(100 points each)"};
}

Outcome oracle_reconstruction() {
  const auto t0 = Clock::now();
  PipelineConfig pc;
  pc.tile = 256;
  pc.overlap = 128;
  pc.k_negatives = 1;
  std::vector<ImageAccumulator> accs;
  std::size_t instances = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    SynthConfig sc;
    sc.width = sc.height = 512;
    sc.min_count = 40;
    sc.max_count = 80;
    sc.max_axis = 20.0;
    sc.overlap = 0.1;
    sc.seed = 500 + i;
    const SynthImage img = generate_synthetic(sc);
    instances += img.map.max_id();
    std::vector<Prompt> prompts;
    for (const auto& p : centroids_from_instance_map(img.map)) prompts.push_back({p.pos, p.cls, 1.0});
    const ProbabilityMap prob = probability_from_mask(binary_mask_from_instances(img.map));
    const OracleSegmentor be(img.map);
    const InstanceMap out = run_pipeline(512, 512, prompts, prob, be, pc);
    accs.push_back(evaluate_image(out, img.map, 1, 12.0));
  }
  const EvalReport r = aggregate_reports(accs, 1, 12.0);
  const double secs = seconds_since(t0);
  return {r.bpq >= 0.999 && r.aji >= 0.999 && secs < 20.0,
          "20 images, " + std::to_string(instances) + " nuclei, bPQ " + fmt("%.6f", r.bpq) + ", AJI " +
              fmt("%.6f", r.aji) + ", " + fmt("%.2f s", secs)};
}

double best_iou_with(const InstanceMap& pred, std::uint16_t pid, const InstanceMap& gt) {
  double best = 0.0;
  const BinaryMask pm = instance_mask(pred, pid);
  for (std::uint16_t g = 1; g <= gt.max_id(); ++g) {
    const BinaryMask gm = instance_mask(gt, g);
    std::size_t inter = 0, uni = 0;
    for (std::size_t k = 0; k < pm.bits.size(); ++k) {
      inter += pm.bits[k] && gm.bits[k];
      uni += pm.bits[k] || gm.bits[k];
    }
    best = std::max(best, uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0);
  }
  return best;
}

Outcome negative_prompts() {
  const InstanceMap gt = oracle::two_ellipse_fixture();
  std::vector<Prompt> prompts;
  for (const auto& p : centroids_from_instance_map(gt)) prompts.push_back({p.pos, p.cls, 1.0});
  const ProbabilityMap prob = probability_from_mask(binary_mask_from_instances(gt));
  const BlobSegmentor be(gt);
  PipelineConfig pc;
  pc.k_negatives = 0;
  const InstanceMap merged = run_pipeline(gt.width, gt.height, prompts, prob, be, pc);
  double merged_best = 0.0;
  for (std::uint16_t id = 1; id <= merged.max_id(); ++id) merged_best = std::max(merged_best, best_iou_with(merged, id, gt));
  pc.k_negatives = 1;
  const InstanceMap split = run_pipeline(gt.width, gt.height, prompts, prob, be, pc);
  // Recovered IoU of each gt instance: best over predicted instances.
  double split_worst = 1.0;
  for (std::uint16_t g = 1; g <= gt.max_id(); ++g) split_worst = std::min(split_worst, best_iou_with(gt, g, split));
  return {merged.max_id() >= 1 && merged_best < 0.8 && split_worst >= 0.95,
          "K=0: " + std::to_string(merged.max_id()) + " instance(s), best IoU " + fmt("%.4f", merged_best) +
              "; K=1: worst recovered IoU " + fmt("%.4f", split_worst)};
}

Outcome filtering() {
  std::size_t centroids = 0, kept_centroids = 0, background = 0, kept_background = 0;
  std::mt19937_64 rng(99);
  for (std::uint64_t i = 0; i < 10; ++i) {
    SynthConfig sc;
    sc.width = sc.height = 256;
    sc.overlap = 0.0;
    sc.seed = 900 + i;
    const SynthImage img = generate_synthetic(sc);
    const BinaryMask fg = binary_mask_from_instances(img.map);
    const ProbabilityMap prob = probability_from_mask(fg);
    std::vector<Point> pts;
    for (const auto& p : centroids_from_instance_map(img.map)) pts.push_back(p.pos);
    centroids += pts.size();
    kept_centroids += filter_prompts(pts, prob, 0.5).size();

    // Background: uniform points whose pixel and 8-neighborhood hold no foreground.
    std::vector<Point> bg;
    while (bg.size() < 10) {
      const Point p{uniform01(rng) * sc.width, uniform01(rng) * sc.height};
      const PixelIndex px = pixel_of(p, sc.width, sc.height);
      bool clear = true;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int r = std::clamp(px.row + dr, 0, sc.height - 1), c = std::clamp(px.col + dc, 0, sc.width - 1);
          clear = clear && !fg.at(r, c);
        }
      if (clear) bg.push_back(p);
    }
    background += bg.size();
    kept_background += filter_prompts(bg, prob, 0.5).size();
  }
  return {kept_centroids == centroids && kept_background == 0,
          std::to_string(kept_centroids) + "/" + std::to_string(centroids) + " centroids kept, " +
              std::to_string(kept_background) + "/" + std::to_string(background) + " background kept"};
}

Outcome tiling() {
  std::mt19937_64 rng(31337);
  int failed = 0;
  const int boxes = 10000;
  for (int b = 0; b < boxes; ++b) {
    int tile = 256, eps = 128;
    if (b % 2) {
      tile = static_cast<int>(uniform_int(rng, 8, 300));
      eps = static_cast<int>(uniform_int(rng, 1, tile - 1));
    }
    const int w = static_cast<int>(uniform_int(rng, 1, 2000)), h = static_cast<int>(uniform_int(rng, 1, 2000));
    const TileLayout l = plan_tiles(w, h, tile, eps);
    const double bw = uniform01(rng) * std::min<double>(eps, w), bh = uniform01(rng) * std::min<double>(eps, h);
    const double x0 = uniform01(rng) * (w - bw), y0 = uniform01(rng) * (h - bh);
    const bool inside = std::any_of(l.tiles.begin(), l.tiles.end(), [&](const Tile& t) {
      return t.x0 <= x0 && t.y0 <= y0 && x0 + bw <= t.x1 && y0 + bh <= t.y1;
    });
    failed += !inside;
  }
  return {failed == 0, std::to_string(boxes) + " boxes, " + std::to_string(failed) + " uncovered"};
}

Outcome performance() {
  // 1500 jittered rectangles on a 40 x 38 grid of 25 x 26 cells; the prediction
  // shifts each by a pixel and drops every tenth.
  const int W = 1000, H = 1000;
  InstanceMap gt(W, H), pred(W, H);
  std::mt19937_64 rng(5);
  std::uint16_t id = 0, pid = 0;
  for (int gy = 0; gy < 38 && id < 1500; ++gy) {
    for (int gx = 0; gx < 40 && id < 1500; ++gx) {
      const int x0 = gx * 25 + static_cast<int>(uniform_int(rng, 0, 4));
      const int y0 = gy * 26 + static_cast<int>(uniform_int(rng, 0, 4));
      const int x1 = std::min(W, x0 + 16 + static_cast<int>(uniform_int(rng, 0, 4)));
      const int y1 = std::min(H, y0 + 16 + static_cast<int>(uniform_int(rng, 0, 5)));
      ++id;
      const bool keep = id % 10 != 0;
      if (keep) ++pid;
      for (int r = y0; r < y1; ++r)
        for (int c = x0; c < x1; ++c) {
          gt.at(r, c) = id;
          if (keep && r + 1 < H && c + 1 < W) pred.at(r + 1, c + 1) = pid;
        }
    }
  }
  const auto t0 = Clock::now();
  const PQStats s = compute_pq(pred, gt);
  const double aji = compute_aji(pred, gt);
  const double ms = seconds_since(t0) * 1000.0;
  return {id == 1500 && ms < 500.0, std::to_string(id) + " instances at 1000x1000, PQ " + fmt("%.4f", s.pq()) +
                                        ", AJI " + fmt("%.4f", aji) + ", " + fmt("%.1f ms", ms)};
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Outcome determinism() {
  const fs::path dir = oracle::temp_dir("accept_det");
  const fs::path gt = dir / "gt";
  if (cli({"gen-synth", "--out-dir", gt.string(), "--seed", "3", "--n-images", "3", "--width", "384", "--height",
           "320", "--overlap", "0.3"}).code != 0)
    return {false, "gen-synth failed"};
  int differences = 0, runs = 0;
  const std::vector<std::string> stems{"img_0000", "img_0001", "img_0002"};
  for (const std::string backend : {"oracle", "blob"}) {
    for (const auto& stem : stems) {
      std::string ref_out, ref_png;
      int k = 0;
      for (const std::string jobs : {"1", "8", "1", "8"}) {
        const fs::path out = dir / ("pred_" + backend + "_" + std::to_string(k)) / (stem + ".png");
        const CliRun r = cli({"pipeline", "--prompts", (gt / (stem + ".points.csv")).string(), "--prob",
                              (gt / (stem + ".prob.json")).string(), "--gt", (gt / (stem + ".png")).string(),
                              "--backend", backend, "--tile", "128", "--overlap", "64", "--jobs", jobs, "--out",
                              out.string()});
        if (r.code != 0) return {false, "pipeline failed: " + r.err};
        const std::string png = io::read_text(out);
        if (k == 0) {
          ref_out = r.out;
          ref_png = png;
        } else {
          differences += (r.out != ref_out) + (png != ref_png);
        }
        ++runs;
        ++k;
      }
    }
  }
  std::string ref_out, ref_file;
  int k = 0;
  for (const std::string jobs : {"1", "8", "1", "8"}) {
    const fs::path report = dir / ("report_" + std::to_string(k) + ".json");
    const CliRun r = cli({"eval", "--pred-dir", (dir / "pred_blob_0").string(), "--gt-dir", gt.string(),
                          "--jobs", jobs, "--out", report.string()});
    if (r.code != 0) return {false, "eval failed: " + r.err};
    const std::string file = io::read_text(report);
    if (k == 0) {
      ref_out = r.out;
      ref_file = file;
    } else {
      differences += (r.out != ref_out) + (file != ref_file);
    }
    ++runs;
    ++k;
  }
  fs::remove_all(dir);
  return {differences == 0,
          std::to_string(runs) + " pipeline/eval runs over jobs 1 and 8, " + std::to_string(differences) + " differing outputs"};
}

}  // namespace

int main() {
  report(1, "matching-optimality", matching_optimality);
  report(2, "metric-oracle-equivalence", metric_oracle);
  report(3, "gradient-checks", gradient_checks);
  report(4, "oracle-reconstruction", oracle_reconstruction);
  report(5, "negative-prompts", negative_prompts);
  report(6, "prompt-filtering", filtering);
  report(7, "tiling-completeness", tiling);
  report(8, "metric-performance", performance);
  report(9, "cli-determinism", determinism);
  std::printf("%d of 9 checks failed\n", failures);
  return failures == 0 ? 0 : 1;
}
