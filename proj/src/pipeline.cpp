#include "nucseg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <numeric>
#include <string>
#include <thread>

#include "nucseg/error.hpp"
#include "nucseg/prompter_geom.hpp"

namespace nucseg {

namespace {

std::string point_str(const Point& p) { return "(" + std::to_string(p.x) + ", " + std::to_string(p.y) + ")"; }

std::string tile_str(const Tile& t) {
  return "[" + std::to_string(t.x0) + "," + std::to_string(t.x1) + ")x[" + std::to_string(t.y0) + "," +
         std::to_string(t.y1) + ")";
}

bool tile_holds_pixel(const Tile& t, const Point& p, int width, int height) {
  const PixelIndex px = pixel_of(p, width, height);
  return px.col >= t.x0 && px.col < t.x1 && px.row >= t.y0 && px.row < t.y1;
}

bool by_score(const SegmentationResult& a, const SegmentationResult& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.prompt_index < b.prompt_index;
}

}  // namespace

std::vector<std::size_t> filter_prompts(const std::vector<Point>& prompts, const ProbabilityMap& prob,
                                        double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("filter_prompts: threshold must be in [0, 1]");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (sample_probability(prob, prompts[i]) > threshold) kept.push_back(i);
  }
  return kept;
}

PromptSet knn_negatives(const std::vector<Point>& prompts, std::size_t z, std::size_t k) {
  if (z >= prompts.size()) throw InvalidArgument("knn_negatives: prompt index out of range");
  if (k > prompts.size() - 1) {
    throw InvalidArgument("knn_negatives: K = " + std::to_string(k) + " but only " +
                          std::to_string(prompts.size() - 1) + " other prompts");
  }
  PromptSet out;
  out.positive = prompts[z];
  out.source_index = z;
  if (k == 0) return out;
  std::vector<std::size_t> order(prompts.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> d(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) d[i] = distance(prompts[i], prompts[z]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  for (std::size_t i : order) {
    if (out.negatives.size() == k) break;
    if (i == z || prompts[i] == out.positive) continue;
    if (std::find(out.negatives.begin(), out.negatives.end(), prompts[i]) != out.negatives.end()) continue;
    out.negatives.push_back(prompts[i]);
  }
  return out;
}

BinaryMask SparseMask::to_binary() const {
  BinaryMask m(image_width, image_height);
  for (auto p : pixels) m.bits[p] = 1;
  return m;
}

SparseMask SparseMask::from_binary(const BinaryMask& m) {
  return from_tile(m, Tile{0, 0, m.width, m.height}, m.width, m.height);
}

SparseMask SparseMask::from_tile(const BinaryMask& local, const Tile& tile, int image_width, int image_height) {
  if (local.width != tile.width() || local.height != tile.height()) {
    throw InvalidArgument("SparseMask::from_tile: mask is " + std::to_string(local.width) + "x" +
                          std::to_string(local.height) + ", tile is " + std::to_string(tile.width()) + "x" +
                          std::to_string(tile.height()));
  }
  if (tile.x0 < 0 || tile.y0 < 0 || tile.x1 > image_width || tile.y1 > image_height) {
    throw InvalidArgument("SparseMask::from_tile: tile " + tile_str(tile) + " outside the image");
  }
  SparseMask s;
  s.image_width = image_width;
  s.image_height = image_height;
  s.x0 = image_width;
  s.y0 = image_height;
  for (int r = 0; r < local.height; ++r) {
    for (int c = 0; c < local.width; ++c) {
      if (!local.at(r, c)) continue;
      const int gx = c + tile.x0, gy = r + tile.y0;
      s.pixels.push_back(static_cast<std::uint32_t>(gy) * static_cast<std::uint32_t>(image_width) +
                         static_cast<std::uint32_t>(gx));
      s.x0 = std::min(s.x0, gx);
      s.y0 = std::min(s.y0, gy);
      s.x1 = std::max(s.x1, gx + 1);
      s.y1 = std::max(s.y1, gy + 1);
    }
  }
  if (s.pixels.empty()) s.x0 = s.y0 = s.x1 = s.y1 = 0;
  return s;
}

std::size_t intersection_size(const SparseMask& a, const SparseMask& b) {
  if (a.empty() || b.empty()) return 0;
  if (a.x1 <= b.x0 || b.x1 <= a.x0 || a.y1 <= b.y0 || b.y1 <= a.y0) return 0;
  std::size_t n = 0;
  auto i = a.pixels.begin(), j = b.pixels.begin();
  while (i != a.pixels.end() && j != b.pixels.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n, ++i, ++j;
    }
  }
  return n;
}

double mask_iou(const SparseMask& a, const SparseMask& b) {
  const std::size_t inter = intersection_size(a, b);
  const std::size_t uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SegmentationResult segment_prompt(const SegmentorBackend& backend, const Tile& tile, const PromptSet& global_prompts,
                                  int image_width, int image_height) {
  const std::string ctx = std::string(backend.name()) + " backend, tile " + tile_str(tile) + ", prompt " +
                          std::to_string(global_prompts.source_index) + " at " + point_str(global_prompts.positive);
  if (tile.width() > backend.max_tile_size() || tile.height() > backend.max_tile_size()) {
    throw InvalidArgument(ctx + ": tile exceeds the backend limit of " + std::to_string(backend.max_tile_size()));
  }
  if (!inside_image(global_prompts.positive, image_width, image_height) ||
      !tile_holds_pixel(tile, global_prompts.positive, image_width, image_height)) {
    throw InvalidArgument(ctx + ": positive prompt is not inside the tile");
  }
  const Point origin{static_cast<double>(tile.x0), static_cast<double>(tile.y0)};
  auto to_local = [&](const Point& p) { return Point{p.x - origin.x, p.y - origin.y}; };
  PromptSet local;
  local.positive = to_local(global_prompts.positive);
  local.cls = global_prompts.cls;
  local.source_index = global_prompts.source_index;
  local.tile_local = true;
  for (const auto& n : global_prompts.negatives) {
    if (inside_image(n, image_width, image_height) && tile_holds_pixel(tile, n, image_width, image_height)) {
      local.negatives.push_back(to_local(n));
    }
  }

  TileMask tm;
  try {
    tm = backend.segment(tile, local);
  } catch (const InvariantError& e) {
    throw InvariantError(ctx + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(ctx + ": " + e.what());
  } catch (const std::exception& e) {
    throw DataError(ctx + ": " + e.what());
  }
  if (tm.mask.width != tile.width() || tm.mask.height != tile.height() ||
      tm.mask.bits.size() != static_cast<std::size_t>(tile.width()) * tile.height()) {
    throw InvariantError(ctx + ": backend returned a " + std::to_string(tm.mask.width) + "x" +
                         std::to_string(tm.mask.height) + " mask");
  }
  if (!(tm.score >= 0.0 && tm.score <= 1.0)) {
    throw InvariantError(ctx + ": backend score " + std::to_string(tm.score) + " outside [0, 1]");
  }
  SegmentationResult out;
  out.mask = SparseMask::from_tile(tm.mask, tile, image_width, image_height);
  out.score = tm.score;
  out.prompt_index = global_prompts.source_index;
  out.cls = global_prompts.cls;
  return out;
}

std::vector<SegmentationResult> nms_masks(std::vector<SegmentationResult> results, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw InvalidArgument("nms_masks: threshold must be in (0, 1]");
  std::erase_if(results, [](const SegmentationResult& r) { return r.mask.empty(); });
  std::sort(results.begin(), results.end(), by_score);
  std::vector<SegmentationResult> kept;
  for (auto& r : results) {
    const bool keep = std::all_of(kept.begin(), kept.end(),
                                  [&](const SegmentationResult& k) { return mask_iou(k.mask, r.mask) < iou_threshold; });
    if (keep) kept.push_back(std::move(r));
  }
  return kept;
}

InstanceMap assemble_instance_map(const std::vector<SegmentationResult>& kept, int width, int height) {
  InstanceMap map(width, height);
  map.classes.emplace();
  std::vector<const SegmentationResult*> order;
  for (const auto& r : kept) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return by_score(*a, *b); });
  std::uint16_t next = 1;
  for (const auto* r : order) {
    if (r->mask.image_width != width || r->mask.image_height != height) {
      throw InvalidArgument("assemble_instance_map: mask dimensions differ from the image");
    }
    const bool claims = std::any_of(r->mask.pixels.begin(), r->mask.pixels.end(),
                                    [&](std::uint32_t p) { return map.ids[p] == 0; });
    if (!claims) continue;
    if (next == 0xffff) throw DataError("assemble_instance_map: more than 65534 instances");
    for (auto p : r->mask.pixels) {
      if (map.ids[p] == 0) map.ids[p] = next;
    }
    (*map.classes)[next] = r->cls;
    ++next;
  }
  return map;
}

void PipelineConfig::validate() const {
  if (tile < 1) throw InvalidArgument("pipeline: tile must be >= 1");
  if (overlap < 0 || overlap >= tile) throw InvalidArgument("pipeline: overlap must satisfy 0 <= overlap < tile");
  if (k_negatives < 0) throw InvalidArgument("pipeline: k_neg must be >= 0");
  if (!(prob_threshold >= 0.0 && prob_threshold <= 1.0)) throw InvalidArgument("pipeline: prob_threshold must be in [0, 1]");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw InvalidArgument("pipeline: nms_iou must be in (0, 1]");
}

InstanceMap run_pipeline(int width, int height, const std::vector<Prompt>& prompts, const ProbabilityMap& prob,
                         const SegmentorBackend& backend, const PipelineConfig& cfg, int jobs, PipelineTrace* trace) {
  cfg.validate();
  if (prob.width != width || prob.height != height) {
    throw DataError("pipeline: probability map is " + std::to_string(prob.width) + "x" + std::to_string(prob.height) +
                    ", image is " + std::to_string(width) + "x" + std::to_string(height));
  }
  std::vector<Point> points;
  points.reserve(prompts.size());
  for (const auto& p : prompts) points.push_back(p.pos);
  std::vector<std::size_t> kept;
  try {
    kept = filter_prompts(points, prob, cfg.prob_threshold);
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("pipeline filtering: ") + e.what());
  }

  std::vector<Point> kept_points;
  for (auto i : kept) kept_points.push_back(points[i]);
  const TileLayout layout = plan_tiles(width, height, cfg.tile, cfg.overlap);
  // With fewer prompts than K + 1 every other prompt becomes a negative.
  const std::size_t k = kept.empty() ? 0 : std::min<std::size_t>(cfg.k_negatives, kept.size() - 1);

  std::vector<SegmentationResult> results(kept.size());
  std::vector<std::exception_ptr> errors(kept.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (std::size_t z = cursor++; z < kept.size(); z = cursor++) {
      try {
        PromptSet ps = knn_negatives(kept_points, z, k);
        ps.source_index = kept[z];
        ps.cls = prompts[kept[z]].cls;
        const Tile& tile = layout.tiles[choose_tile(layout, ps.positive)];
        results[z] = segment_prompt(backend, tile, ps, width, height);
      } catch (...) {
        errors[z] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(kept.size())));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<SegmentationResult> after = nms_masks(results, cfg.nms_iou);
  InstanceMap out = assemble_instance_map(after, width, height);
  if (trace) {
    trace->kept_prompts = std::move(kept);
    trace->results = std::move(results);
    trace->after_nms = std::move(after);
  }
  return out;
}

}  // namespace nucseg
