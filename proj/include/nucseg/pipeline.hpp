#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nucseg/corpus.hpp"

namespace nucseg {

/// Half-open pixel window [x0, x1) x [y0, y1).
struct Tile {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  Point center() const { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
  /// True when the pixel holding p lies inside the window.
  bool holds(const Point& p) const;

  friend bool operator==(const Tile&, const Tile&) = default;
};

struct TileLayout {
  int tile = 256;
  int overlap = 128;
  int image_width = 0;
  int image_height = 0;
  std::vector<Tile> tiles;  // row-major
};

/// Sliding windows with stride tile - overlap; the last window on each axis
/// is shifted inward to end at the image edge.
TileLayout plan_tiles(int width, int height, int tile, int overlap);

/// A prompt as produced by the prompter (or read from a points file).
struct Prompt {
  Point pos;
  int cls = 1;
  double score = 1.0;
};

struct PromptSet {
  Point positive;
  std::vector<Point> negatives;
  int cls = 1;
  /// Row of the positive prompt in the caller's prompt list.
  std::size_t source_index = 0;
  bool tile_local = false;
};

/// Keeps prompts whose bilinearly sampled probability exceeds `threshold`;
/// returns indices into `prompts`, order preserved.
std::vector<std::size_t> filter_prompts(const std::vector<Point>& prompts, const ProbabilityMap& prob,
                                        double threshold = 0.5);

/// The k nearest prompts to prompts[z] as negatives. Prompts at the same
/// location as the positive or as an already chosen negative are skipped;
/// distance ties go to the smaller index.
PromptSet knn_negatives(const std::vector<Point>& prompts, std::size_t z, std::size_t k);

/// Foreground pixels as sorted global linear indices plus a bounding box.
struct SparseMask {
  int image_width = 0;
  int image_height = 0;
  std::vector<std::uint32_t> pixels;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // bounding box, half-open; empty when pixels is empty

  bool empty() const { return pixels.empty(); }
  std::size_t area() const { return pixels.size(); }
  BinaryMask to_binary() const;
  static SparseMask from_binary(const BinaryMask& m);
  static SparseMask from_tile(const BinaryMask& local, const Tile& tile, int image_width, int image_height);
};

std::size_t intersection_size(const SparseMask& a, const SparseMask& b);
double mask_iou(const SparseMask& a, const SparseMask& b);

struct SegmentationResult {
  SparseMask mask;
  double score = 0.0;
  std::size_t prompt_index = 0;
  int cls = 1;
};

/// Output of a backend for one prompt, in tile-local coordinates.
struct TileMask {
  BinaryMask mask;
  double score = 0.0;
};

/// A promptable segmentor. Implementations must be deterministic and safe
/// to call concurrently.
class SegmentorBackend {
 public:
  virtual ~SegmentorBackend() = default;
  virtual const char* name() const = 0;
  /// Largest tile edge the backend accepts.
  virtual int max_tile_size() const = 0;
  /// `prompts` are in tile-local coordinates; the returned mask must be tile-sized.
  virtual TileMask segment(const Tile& tile, const PromptSet& prompts) const = 0;
};

/// Translates prompts into the tile, runs the backend and maps the mask back
/// to global coordinates. Errors carry tile and prompt context.
SegmentationResult segment_prompt(const SegmentorBackend& backend, const Tile& tile, const PromptSet& global_prompts,
                                  int image_width, int image_height);

/// Greedy mask NMS by descending score (ties: smaller prompt index). Empty
/// masks are dropped first; a result survives iff its IoU with every kept
/// mask is below `iou_threshold`.
std::vector<SegmentationResult> nms_masks(std::vector<SegmentationResult> results, double iou_threshold = 0.5);

/// Paints results in descending score; each pixel goes to the first mask
/// that covers it. Fully covered results are dropped; ids are dense in
/// claim order and classes carry through.
InstanceMap assemble_instance_map(const std::vector<SegmentationResult>& kept, int width, int height);

struct PipelineConfig {
  int tile = 256;
  int overlap = 128;
  int k_negatives = 1;
  double prob_threshold = 0.5;
  double nms_iou = 0.5;

  void validate() const;
};

/// Index of the tile whose center is nearest p among tiles holding p (ties: lower index).
std::size_t choose_tile(const TileLayout& layout, const Point& p);

struct PipelineTrace {
  std::vector<std::size_t> kept_prompts;
  std::vector<SegmentationResult> results;
  std::vector<SegmentationResult> after_nms;
};

/// filter -> tile choice -> global k-NN negatives clipped to the tile ->
/// per-prompt segmentation -> NMS -> assembly. `jobs` threads segment
/// prompts; the result does not depend on it.
InstanceMap run_pipeline(int width, int height, const std::vector<Prompt>& prompts, const ProbabilityMap& prob,
                         const SegmentorBackend& backend, const PipelineConfig& cfg, int jobs = 1,
                         PipelineTrace* trace = nullptr);

}  // namespace nucseg
